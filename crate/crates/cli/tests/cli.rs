use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use grammarscope_core::corrupt::{CorruptionRecord, Layer};
use grammarscope_core::data::{load_image, load_mask, save_image, save_mask};

const BIN: &str = env!("CARGO_BIN_EXE_grammarscope");

fn smoke_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn grammarscope")
}

fn stage(cmd: &str, work: &Path, extra: &[&str]) -> Output {
    let conf = smoke_conf();
    let mut args = vec![cmd, "--config", conf.to_str().unwrap(), "--work", work.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not a JSON error line ({e}): {text}"))
}

const TINY: [&str; 4] = ["--set", "n=10", "--set", "split=8/1/1"];

#[test]
fn help_lists_every_key_with_its_default() {
    let out = ok(run(&["gen-data", "--help"]));
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["seed", "ps ", "[default 8]", "traversal", "[default five-crop]", "num_patch", "[default all]"] {
        assert!(text.contains(needle), "help lacks {needle:?}");
    }
}

#[test]
fn unknown_key_is_a_json_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = stage("gen-data", dir.path(), &["--set", "pss=8"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "config");
    assert_eq!(err["command"], "gen-data");
    assert!(err["error"].as_str().unwrap().contains("pss"));
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "n = 10\nsplit = 8/1/1\n").unwrap();
    let out = run(&["gen-data", "--config", conf.to_str().unwrap(), "--work", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"].as_str().unwrap().contains("seed"));
}

#[test]
fn oversized_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = stage("gen-data", dir.path(), &["--set", "n=10", "--set", "split=8/2/1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "config");
}

fn manifest_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_manifests_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let args = TINY;
    ok(stage("gen-data", w, &args));
    let data = w.join("data");
    assert_eq!(manifest_rows(&data.join("train.txt")).len(), 8);
    assert_eq!(manifest_rows(&data.join("val.txt")).len(), 1);
    assert_eq!(manifest_rows(&data.join("test.txt")).len(), 1);
    let first = snapshot(&data);

    let again = stage("gen-data", w, &args);
    assert_eq!(again.status.code(), Some(1));
    assert_eq!(error_json(&again)["kind"], "exists");

    let mut forced = args.to_vec();
    forced.push("--force");
    ok(stage("gen-data", w, &forced));
    assert_eq!(snapshot(&data), first);
}

#[test]
fn corrupt_touches_half_and_records_replay() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let args = ["--set", "n=20", "--set", "split=8/2/10"];
    ok(stage("gen-data", w, &args));
    ok(stage("corrupt", w, &args));

    let records = std::fs::read_to_string(w.join("corrupt/shuffle-all/test.records.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = records.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    let corrupted: Vec<String> = lines.iter().map(|l| l["image"].as_str().unwrap().to_string()).collect();

    let orig = w.join("data");
    let out = w.join("corrupt/shuffle-all/test");
    let scratch = tempfile::tempdir().unwrap();
    let mut changed = 0;
    for row in manifest_rows(&orig.join("test.txt")) {
        let (img_rel, mask_rel) = row.split_once('\t').unwrap();
        let name = Path::new(img_rel).file_stem().unwrap().to_string_lossy().into_owned();
        let img_bytes = std::fs::read(out.join("images").join(format!("{name}.ppm"))).unwrap();
        let mask_bytes = std::fs::read(out.join("masks").join(format!("{name}.pgm"))).unwrap();
        if img_bytes != std::fs::read(orig.join(img_rel)).unwrap() {
            changed += 1;
        }
        match lines.iter().find(|l| l["image"] == name.as_str()) {
            None => {
                assert_eq!(img_bytes, std::fs::read(orig.join(img_rel)).unwrap(), "{name} untouched");
                assert_eq!(mask_bytes, std::fs::read(orig.join(mask_rel)).unwrap(), "{name} untouched");
            }
            Some(line) => {
                let record: CorruptionRecord = serde_json::from_value(line["record"].clone()).unwrap();
                let layers = vec![
                    Layer::Image(load_image(&orig.join(img_rel)).unwrap()),
                    Layer::Mask(load_mask(&orig.join(mask_rel)).unwrap()),
                ];
                let mut replayed = record.apply(&layers).unwrap().into_iter().map(|mut c| c.remove(0));
                let img = replayed.next().unwrap().into_image().unwrap();
                let mask = replayed.next().unwrap().into_mask().unwrap();
                let (pi, pm) = (scratch.path().join("i.ppm"), scratch.path().join("m.pgm"));
                save_image(&img, &pi).unwrap();
                save_mask(&mask, &pm).unwrap();
                assert_eq!(std::fs::read(pi).unwrap(), img_bytes, "{name} image replay");
                assert_eq!(std::fs::read(pm).unwrap(), mask_bytes, "{name} mask replay");
            }
        }
    }
    assert_eq!(corrupted.len(), 5);
    assert!(changed >= 4, "only {changed} images changed");
}

#[test]
fn evaluate_before_calibrate_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let args = TINY;
    ok(stage("gen-data", w, &args));
    let out = stage("evaluate", w, &args);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["kind"], "missing-artifact");
    assert!(!err["producer"].as_str().unwrap().is_empty());
}

#[test]
fn miou_runs_without_a_syntax_model() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let args = ["--set", "method=miou"];
    for (cmd, extra) in [
        ("gen-data", &[][..]),
        ("corrupt", &["--split", "val"][..]),
        ("corrupt", &["--split", "test"][..]),
        ("train-cluster", &[][..]),
        ("segment", &["--split", "train"][..]),
        ("calibrate", &[][..]),
        ("evaluate", &[][..]),
    ] {
        let mut all = args.to_vec();
        all.extend_from_slice(extra);
        ok(stage(cmd, w, &all));
    }
    assert!(!w.join("syntax/model.igwt").exists());
    assert!(w.join("results/shuffle-all-miou.json").is_file());
    let out = stage("evaluate", w, &[]);
    assert_eq!(error_json(&out)["kind"], "missing-artifact");
}

fn pipeline(w: &Path, jobs: &str) -> Vec<u8> {
    let j = ["--jobs", jobs];
    for (cmd, extra) in [
        ("gen-data", &[][..]),
        ("corrupt", &["--split", "val"][..]),
        ("corrupt", &["--split", "test"][..]),
        ("train-cluster", &[][..]),
        ("segment", &["--split", "train"][..]),
        ("train-syntax", &[][..]),
        ("calibrate", &[][..]),
        ("evaluate", &[][..]),
        ("puzzle", &[][..]),
    ] {
        let mut all = j.to_vec();
        all.extend_from_slice(extra);
        ok(stage(cmd, w, &all));
    }
    ok(run(&["report", "--work", w.to_str().unwrap()]));
    std::fs::read(w.join("report.csv")).unwrap()
}

#[test]
fn smoke_pipeline_finishes_and_report_merges_rows() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let start = Instant::now();
    let report = pipeline(w, "1");
    assert!(start.elapsed().as_secs() < 60, "smoke took {:?}", start.elapsed());
    let text = String::from_utf8(report).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "method,corruption,num_patch,ps,accuracy,recall,puzzle_rate");
    assert_eq!(rows.len(), 3, "{text}");

    let results = w.join("results");
    let out = w.join("two.csv");
    ok(run(&[
        "report",
        "--work",
        w.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        results.join("shuffle-all-baseline.json").to_str().unwrap(),
        results.join("puzzle-3-baseline.json").to_str().unwrap(),
    ]));
    let merged = std::fs::read_to_string(out).unwrap();
    assert_eq!(merged.lines().count(), 3);
    assert!(merged.lines().any(|l| l.starts_with("baseline,shuffle,all,8,")));
    assert!(merged.lines().any(|l| l.starts_with("baseline,puzzle-3,all,8,,,")));
}

#[test]
fn smoke_pipeline_is_independent_of_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(a.path(), "1"), pipeline(b.path(), "3"));
    assert_eq!(snapshot(&a.path().join("results")), snapshot(&b.path().join("results")));
}
