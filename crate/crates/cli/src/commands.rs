use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use grammarscope_core::cluster::{
    finetune_prior, segment_batch, train_picie, PicieConfig, PicieEpoch, SegModel, Segmenter, TrainConfig,
};
use grammarscope_core::corrupt::{derive_seed, read_jsonl, write_jsonl, Anchor, CorruptionRecord, CorruptionSpec, Layer};
use grammarscope_core::data::{
    generate_synthetic, save_image, save_mask, DatasetInfo, DatasetManifest, ImageGrid, LabelGrid, ManifestEntry,
    SyntheticSpec,
};
use grammarscope_core::syntax::{
    train_syntax, SyntaxConfig, SyntaxModel, SyntaxTrainConfig, TraversalKind, TraversalPlan,
};
use grammarscope_core::validate::{
    averaged_semantics, best_index, calibrate_threshold, classify, detection_metrics, histogram_csv, results_csv,
    AveragedSemantics, DetectionReport, ImageScore, Method, PuzzleOutcome, Scenario, ScenarioResult, Scored, Scorer,
    ThresholdModel,
};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CorruptionChoice, RunConfig};
use crate::error::CliError;
use crate::work::{fresh_dir, parent_dir, require, stem, write_text, Work};

// Per-stage seed streams derived from the master seed.
const SEED_SEG_INIT: u64 = 1;
const SEED_PICIE: u64 = 2;
const SEED_PRIOR: u64 = 3;
const SEED_SYNTAX_INIT: u64 = 4;
const SEED_SYNTAX_TRAIN: u64 = 5;
const SEED_CORRUPT: u64 = 6;
const SEED_PUZZLE: u64 = 7;

/// Images per segmentation batch.
const SEG_CHUNK: usize = 50;

pub struct Ctx {
    pub cfg: RunConfig,
    pub work: Work,
    pub force: bool,
}

/// One line of a corruption records file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub image: String,
    pub index: usize,
    pub record: CorruptionRecord,
}

fn split_seed(base: u64, split: &str) -> u64 {
    split.bytes().fold(base, |acc, b| derive_seed(acc, b as u64))
}

impl Ctx {
    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.cfg.seed, stream)
    }

    fn info(&self) -> Result<DatasetInfo, CliError> {
        let path = self.work.info();
        require(&path, "gen-data")?;
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let info: DatasetInfo = serde_json::from_str(&text).map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))?;
        if (info.spec.height, info.spec.width) != (self.cfg.height, self.cfg.width) || info.spec.family != self.cfg.family {
            return Err(CliError::Mismatch(format!(
                "data was generated as {:?} {}x{}, config says {:?} {}x{}",
                info.spec.family, info.spec.height, info.spec.width, self.cfg.family, self.cfg.height, self.cfg.width
            )));
        }
        Ok(info)
    }

    /// Traversal plan from the config and the dataset's landmark anchors.
    fn plan(&self) -> Result<TraversalPlan, CliError> {
        let info = self.info()?;
        let anchors = (self.cfg.traversal == TraversalKind::FiveCrop).then_some(info.anchors.as_slice());
        let plan = TraversalPlan::build(self.cfg.traversal, self.cfg.height, self.cfg.width, self.cfg.ps, anchors)?;
        Ok(plan.with_circular(self.cfg.circular)?)
    }

    fn cluster_model(&self) -> Result<SegModel, CliError> {
        let path = self.work.cluster_model();
        require(&path, "train-cluster")?;
        Ok(SegModel::load(&path)?)
    }

    fn syntax_model(&self, plan: &TraversalPlan) -> Result<SyntaxModel, CliError> {
        let path = self.work.syntax_model();
        require(&path, "train-syntax")?;
        let model = SyntaxModel::load(&path)?;
        let trained = TraversalPlan::load(&self.work.syntax_plan())?;
        if trained.rects != plan.rects {
            return Err(CliError::Mismatch("syntax model was trained with a different traversal plan".into()));
        }
        Ok(model)
    }

    fn averaged(&self, plan: &TraversalPlan) -> Result<AveragedSemantics, CliError> {
        let path = self.work.seg_manifest("train");
        require(&path, "segment --split train")?;
        let masks = load_masks(&path)?;
        let refs: Vec<&LabelGrid> = masks.iter().collect();
        Ok(averaged_semantics(&refs, plan, self.cfg.num_classes())?)
    }

    fn corruption(&self, plan: &TraversalPlan) -> CorruptionSpec {
        let num_patch = self.cfg.num_patch.resolve(plan.len());
        match self.cfg.corruption {
            CorruptionChoice::Shuffle => CorruptionSpec::Shuffle { num_patch },
            CorruptionChoice::Blackout => CorruptionSpec::Blackout { num_patch },
            CorruptionChoice::Blur => {
                CorruptionSpec::Blur { num_patch, kernel_size: self.cfg.kernel_size, sigma: self.cfg.sigma }
            }
        }
    }
}

/// Corruptions act on the same patches the traversal visits.
fn anchor_for(plan: &TraversalPlan) -> Anchor {
    match plan.kind {
        TraversalKind::FiveCrop => Anchor::Rects { rects: plan.rects.clone() },
        TraversalKind::ZigZag => Anchor::Grid { ps: plan.ps },
    }
}

struct Loaded {
    names: Vec<String>,
    images: Vec<ImageGrid>,
    masks: Vec<Option<LabelGrid>>,
    manifest: DatasetManifest,
}

fn load_split(path: &Path) -> Result<Loaded, CliError> {
    let manifest = DatasetManifest::load(path)?;
    let names = manifest.entries.iter().map(|e| stem(&e.image)).collect();
    let (images, masks) = manifest.load_samples()?.into_iter().unzip();
    Ok(Loaded { names, images, masks, manifest })
}

fn load_masks(path: &Path) -> Result<Vec<LabelGrid>, CliError> {
    load_split(path)?
        .masks
        .into_iter()
        .map(|m| m.ok_or_else(|| CliError::Mismatch(format!("{} lists an image without a mask", path.display()))))
        .collect()
}

fn segment_all(model: &SegModel, images: &[&ImageGrid]) -> Result<Vec<LabelGrid>, CliError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(SEG_CHUNK) {
        out.extend(segment_batch(model, Segmenter::Classifier, chunk)?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

pub fn gen_data(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let dir = ctx.work.data_dir();
    fresh_dir(&dir, ctx.force)?;
    let spec = SyntheticSpec::new(cfg.family, cfg.height, cfg.width, cfg.n, cfg.seed);
    spec.validate()?;
    let data = generate_synthetic(&spec)?;
    let [a, b, c] = cfg.split;
    let mut splits = Vec::new();
    for (name, range) in [("train", 0..a), ("val", a..a + b), ("test", a + b..a + b + c)] {
        data.write_split(&dir, name, range.clone())?;
        splits.push((name.to_string(), range.len()));
    }
    let info = DatasetInfo {
        class_names: cfg.family.class_names().iter().map(|s| s.to_string()).collect(),
        anchors: spec.anchors(),
        spec,
        splits,
    };
    write_json(&ctx.work.info(), &info)?;
    info!("wrote {a}/{b}/{c} images to {}", dir.display());
    Ok(())
}

pub fn corrupt(ctx: &Ctx, split: &str) -> Result<(), CliError> {
    let input = ctx.work.manifest(split);
    require(&input, "gen-data")?;
    let plan = ctx.plan()?;
    let anchor = anchor_for(&plan);
    let spec = ctx.corruption(&plan);
    let tag = ctx.cfg.scenario_tag();
    let out = ctx.work.corrupt_dir(&tag, split);
    fresh_dir(&out, ctx.force)?;
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| CliError::io(&out, e))?;
    }
    let data = load_split(&input)?;
    let n = data.images.len();
    let base = split_seed(ctx.seed(SEED_CORRUPT), split);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(base));
    let chosen: BTreeSet<usize> = order[..n.div_ceil(2)].iter().copied().collect();
    let mut records = Vec::with_capacity(chosen.len());
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let name = &data.names[i];
        let img_path = out.join("images").join(format!("{name}.ppm"));
        let mask_path = data.masks[i].as_ref().map(|_| out.join("masks").join(format!("{name}.pgm")));
        let mut layers = vec![Layer::Image(data.images[i].clone())];
        layers.extend(data.masks[i].clone().map(Layer::Mask));
        if chosen.contains(&i) {
            let record = spec.plan(&anchor, data.images[i].dims(), derive_seed(base, i as u64))?;
            layers = record.apply(&layers)?.into_iter().map(|mut copies| copies.remove(0)).collect();
            records.push(RecordLine { image: name.clone(), index: i, record });
        }
        let mut layers = layers.into_iter();
        save_image(&layers.next().and_then(Layer::into_image).expect("image layer"), &img_path)?;
        if let (Some(p), Some(m)) = (&mask_path, layers.next().and_then(Layer::into_mask)) {
            save_mask(&m, p)?;
        }
        entries.push(ManifestEntry { image: img_path, mask: mask_path });
    }
    let manifest = DatasetManifest { split: split.to_string(), entries, ..data.manifest };
    manifest.save(&ctx.work.corrupt_manifest(&tag, split))?;
    write_jsonl(&ctx.work.corrupt_records(&tag, split), &records)?;
    info!("{tag}: corrupted {} of {n} {split} images", records.len());
    Ok(())
}

#[derive(Serialize)]
struct ClusterLog {
    picie: Vec<PicieEpoch>,
    prior: Vec<f64>,
}

pub fn train_cluster(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let input = ctx.work.manifest("train");
    require(&input, "gen-data")?;
    let data = load_split(&input)?;
    let mut model = SegModel::new(cfg.feature_dim, cfg.num_classes(), ctx.seed(SEED_SEG_INIT))?;
    let mut picie = Vec::new();
    if cfg.picie_images > 0 && cfg.picie_epochs > 0 {
        let images: Vec<&ImageGrid> = data.images.iter().take(cfg.picie_images).collect();
        let pc = PicieConfig {
            k: cfg.k,
            km_init: cfg.km_init,
            km_num: cfg.km_num,
            km_iter: cfg.km_iter,
            epochs: cfg.picie_epochs,
            lr: cfg.picie_lr,
            batch_size: cfg.picie_batch,
            seed: ctx.seed(SEED_PICIE),
            jitter: cfg.jitter,
            geometric: cfg.geometric,
            crop_min: cfg.crop_min,
            km_sample: cfg.km_sample,
        };
        picie = train_picie(&mut model, &images, &pc)?.log;
    }
    let labeled = data
        .images
        .iter()
        .zip(&data.masks)
        .take(cfg.prior_images)
        .map(|(i, m)| m.as_ref().map(|m| (i, m)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Mismatch("supervised fine-tune needs masks for the first prior_images train images".into()))?;
    let tc = TrainConfig { epochs: cfg.prior_epochs, lr: cfg.prior_lr, batch_size: cfg.prior_batch, seed: ctx.seed(SEED_PRIOR) };
    let prior = finetune_prior(&mut model, &labeled, &tc)?;
    let path = ctx.work.cluster_model();
    parent_dir(&path)?;
    model.save(&path)?;
    write_json(&ctx.work.cluster_log(), &ClusterLog { picie, prior })?;
    Ok(())
}

pub fn segment(ctx: &Ctx, split: &str) -> Result<(), CliError> {
    let input = ctx.work.manifest(split);
    require(&input, "gen-data")?;
    let model = ctx.cluster_model()?;
    let out = ctx.work.seg_dir(split);
    fresh_dir(&out, ctx.force)?;
    let data = load_split(&input)?;
    let refs: Vec<&ImageGrid> = data.images.iter().collect();
    let masks = segment_all(&model, &refs)?;
    let mut entries = Vec::with_capacity(masks.len());
    for ((name, mask), entry) in data.names.iter().zip(&masks).zip(&data.manifest.entries) {
        let path = out.join(format!("{name}.pgm"));
        save_mask(mask, &path)?;
        entries.push(ManifestEntry { image: entry.image.clone(), mask: Some(path) });
    }
    let manifest = DatasetManifest { entries, num_classes: Some(model.num_classes()), ..data.manifest };
    manifest.save(&ctx.work.seg_manifest(split))?;
    info!("segmented {} {split} images", masks.len());
    Ok(())
}

pub fn train_syntax_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let input = ctx.work.seg_manifest("train");
    require(&input, "segment --split train")?;
    let plan = ctx.plan()?;
    let masks = load_masks(&input)?;
    let c = cfg.num_classes();
    let hidden = if cfg.hidden == 0 { cfg.enc_dim + c } else { cfg.hidden };
    let sc = SyntaxConfig { num_classes: c, mask_res: cfg.mask_res, enc_dim: cfg.enc_dim, hidden };
    let mut model = SyntaxModel::new(sc, ctx.seed(SEED_SYNTAX_INIT))?;
    let tc = SyntaxTrainConfig {
        epochs: cfg.syntax_epochs,
        lr: cfg.syntax_lr,
        schedule: cfg.schedule.clone(),
        batch_size: cfg.syntax_batch,
        seed: ctx.seed(SEED_SYNTAX_TRAIN),
    };
    let refs: Vec<&LabelGrid> = masks.iter().collect();
    let log = train_syntax(&mut model, &refs, &plan, &tc)?;
    let path = ctx.work.syntax_model();
    parent_dir(&path)?;
    model.save(&path)?;
    plan.save(&ctx.work.syntax_plan())?;
    write_json(&ctx.work.syntax_log(), &log)?;
    Ok(())
}

/// Artifacts a method scores with.
struct Scoring {
    plan: TraversalPlan,
    cluster: SegModel,
    syntax: Option<SyntaxModel>,
    avg: Option<AveragedSemantics>,
}

impl Scoring {
    fn load(ctx: &Ctx) -> Result<Self, CliError> {
        let plan = ctx.plan()?;
        let cluster = ctx.cluster_model()?;
        let method = ctx.cfg.method;
        let syntax = method.needs_model().then(|| ctx.syntax_model(&plan)).transpose()?;
        let avg = (method != Method::Baseline).then(|| ctx.averaged(&plan)).transpose()?;
        Ok(Self { plan, cluster, syntax, avg })
    }

    fn scorer(&self) -> Scorer<'_> {
        match (&self.syntax, &self.avg) {
            (Some(m), None) => Scorer::Baseline(m),
            (Some(m), Some(a)) => Scorer::AvgSemantics(m, a),
            (None, Some(a)) => Scorer::Miou(a),
            (None, None) => unreachable!("every method loads a model or averages"),
        }
    }

    fn score_images(&self, images: &[&ImageGrid]) -> Result<Vec<Scored>, CliError> {
        let masks = segment_all(&self.cluster, images)?;
        let refs: Vec<&LabelGrid> = masks.iter().collect();
        Ok(self.scorer().score_masks(&refs, &self.plan)?)
    }
}

/// Names, ground truth (corrupted = true) and scores of a corrupted split.
fn score_split(ctx: &Ctx, split: &str) -> Result<(Vec<String>, Vec<bool>, Vec<Scored>), CliError> {
    let tag = ctx.cfg.scenario_tag();
    let manifest = ctx.work.corrupt_manifest(&tag, split);
    let producer = format!("corrupt --split {split}");
    require(&manifest, &producer)?;
    let records_path = ctx.work.corrupt_records(&tag, split);
    require(&records_path, &producer)?;
    let scoring = Scoring::load(ctx)?;
    let data = load_split(&manifest)?;
    let records: Vec<RecordLine> = read_jsonl(&records_path)?;
    let bad: BTreeSet<&str> = records.iter().map(|r| r.image.as_str()).collect();
    let labels = data.names.iter().map(|n| bad.contains(n.as_str())).collect();
    let refs: Vec<&ImageGrid> = data.images.iter().collect();
    let scores = scoring.score_images(&refs)?;
    Ok((data.names, labels, scores))
}

pub fn calibrate(ctx: &Ctx) -> Result<(), CliError> {
    let (_, labels, scores) = score_split(ctx, "val")?;
    let pick = |want: bool| -> Vec<f64> { scores.iter().zip(&labels).filter(|(_, &l)| l == want).map(|(s, _)| s.score).collect() };
    let model = calibrate_threshold(&pick(false), &pick(true), ctx.cfg.method.direction())?;
    let path = ctx.work.threshold(&ctx.cfg.scenario_tag(), ctx.cfg.method);
    parent_dir(&path)?;
    model.save(&path)?;
    info!("tau {} with validation balanced accuracy {:.4}", model.tau, model.balanced_accuracy);
    Ok(())
}

fn scenario(cfg: &RunConfig, corruption: String, num_patch: Option<usize>) -> Scenario {
    Scenario { method: cfg.method, corruption, num_patch, ps: cfg.ps }
}

pub fn evaluate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let tag = cfg.scenario_tag();
    let th_path = ctx.work.threshold(&tag, cfg.method);
    require(&th_path, "calibrate")?;
    let threshold = ThresholdModel::load(&th_path)?;
    if threshold.direction != cfg.method.direction() {
        return Err(CliError::Mismatch(format!("{} was calibrated for another method", th_path.display())));
    }
    let (names, labels, scores) = score_split(ctx, "test")?;
    let verdicts: Vec<_> = scores.iter().map(|s| classify(s.score, &threshold)).collect();
    let report = detection_metrics(&verdicts, &labels)?;
    let images = names
        .into_iter()
        .zip(labels)
        .zip(scores.into_iter().zip(&verdicts))
        .map(|((name, corrupted), (s, &verdict))| ImageScore { name, corrupted, score: s.score, verdict, trace: s.trace })
        .collect();
    let result = ScenarioResult {
        scenario: scenario(cfg, cfg.corruption.as_str().to_string(), cfg.num_patch.as_option()),
        tau: Some(threshold.tau),
        report,
        images,
        puzzles: Vec::new(),
    };
    let path = ctx.work.result(&tag, cfg.method);
    parent_dir(&path)?;
    result.save(&path)?;
    write_text(&ctx.work.histogram(&tag, cfg.method), &histogram_csv(&result))?;
    info!("accuracy {:.4} recall {:?}", result.report.accuracy, result.report.recall);
    Ok(())
}

pub fn puzzle(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let input = ctx.work.manifest("test");
    require(&input, "gen-data")?;
    let scoring = Scoring::load(ctx)?;
    let anchor = anchor_for(&scoring.plan);
    let spec = CorruptionSpec::Puzzle { num_perm: cfg.num_perm };
    let data = load_split(&input)?;
    let base = ctx.seed(SEED_PUZZLE);
    let mut outcomes = Vec::new();
    for (i, (name, image)) in data.names.iter().zip(&data.images).take(cfg.puzzles).enumerate() {
        let record = spec.plan(&anchor, image.dims(), derive_seed(base, i as u64))?;
        let mut copies: Vec<ImageGrid> =
            record.apply(&[Layer::Image(image.clone())])?.remove(0).into_iter().filter_map(Layer::into_image).collect();
        // The original is copy 0; move it to a seeded slot so ties do not favour it.
        let original = (derive_seed(base ^ u64::MAX, i as u64) % copies.len() as u64) as usize;
        copies.swap(0, original);
        let refs: Vec<&ImageGrid> = copies.iter().collect();
        let scores: Vec<f64> = scoring.score_images(&refs)?.into_iter().map(|s| s.score).collect();
        let pick = best_index(&scores, cfg.method.direction()).expect("puzzle has copies");
        outcomes.push(PuzzleOutcome { name: name.clone(), scores, original, pick });
    }
    if outcomes.is_empty() {
        return Err(CliError::Mismatch("the test split is empty".into()));
    }
    let solved = outcomes.iter().filter(|o| o.solved()).count();
    let report = DetectionReport {
        puzzle_rate: Some(solved as f64 / outcomes.len() as f64),
        ..DetectionReport::from_counts(0, 0, 0, 0)
    };
    let result = ScenarioResult {
        scenario: scenario(cfg, format!("puzzle-{}", cfg.num_perm), None),
        tau: None,
        report,
        images: Vec::new(),
        puzzles: outcomes,
    };
    let path = ctx.work.puzzle_result(cfg.num_perm, cfg.method);
    parent_dir(&path)?;
    result.save(&path)?;
    info!("solved {solved} of {} puzzles", result.puzzles.len());
    Ok(())
}

/// Merges result files (default: every `results/*.json`) into one CSV.
pub fn report(work: &Work, files: &[PathBuf], out: Option<&Path>) -> Result<PathBuf, CliError> {
    let files = if files.is_empty() {
        let dir = work.results_dir();
        if !dir.is_dir() {
            return Err(CliError::Missing { artifact: dir, producer: "evaluate".into() });
        }
        let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        found.sort();
        found
    } else {
        files.to_vec()
    };
    if files.is_empty() {
        return Err(CliError::Missing { artifact: work.results_dir(), producer: "evaluate".into() });
    }
    let results = files
        .iter()
        .map(|p| {
            require(p, "evaluate")?;
            Ok(ScenarioResult::load(p)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let out = out.map_or_else(|| work.report(), Path::to_path_buf);
    write_text(&out, &results_csv(&results))?;
    Ok(out)
}
