use grammarscope_core::data::{generate_synthetic, Family, LabelGrid, SyntheticSpec};
use grammarscope_core::numcore::gradcheck::check_gradients;
use grammarscope_core::numcore::{DenseArray, Graph, ParamStore};
use grammarscope_core::syntax::{
    batch_inputs, bilstm_forward, encode_patch, predict_batch, semantics_vector, syntax_graph, syntax_loss,
    train_sequences, train_syntax, LrSchedule, Predictions, Sequence, SyntaxConfig, SyntaxError, SyntaxModel,
    SyntaxTrainConfig, TraversalKind, TraversalPlan, DIRECTIONS, GATES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(h: usize, w: usize, c: usize, seed: u64) -> LabelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelGrid::new(h, w, c, (0..h * w).map(|_| rng.gen_range(0..c as u8)).collect()).unwrap()
}

fn small_cfg(c: usize, res: usize) -> SyntaxConfig {
    SyntaxConfig { num_classes: c, mask_res: res, enc_dim: 8, hidden: 8 + c }
}

fn random_sequence(cfg: &SyntaxConfig, g: usize, seed: u64) -> Sequence {
    let patches: Vec<LabelGrid> = (0..g).map(|t| random_mask(cfg.mask_res, cfg.mask_res, cfg.num_classes, seed + t as u64)).collect();
    Sequence::from_patches(cfg, &patches).unwrap()
}

#[test]
fn zigzag_is_serpentine() {
    let plan = TraversalPlan::zigzag(4, 4, 2).unwrap();
    let corners: Vec<(usize, usize)> = plan.rects.iter().map(|r| (r.top, r.left)).collect();
    assert_eq!(corners, vec![(0, 0), (0, 2), (2, 2), (2, 0)]);
    let plan = TraversalPlan::zigzag(6, 6, 2).unwrap();
    let corners: Vec<(usize, usize)> = plan.rects.iter().map(|r| (r.top, r.left)).collect();
    assert_eq!(corners[3..6], [(2, 4), (2, 2), (2, 0)]);
    assert_eq!(corners[6], (4, 0));
}

#[test]
fn plan_lengths() {
    assert_eq!(TraversalPlan::zigzag(480, 640, 160).unwrap().len(), 12);
    let spec = SyntheticSpec::new(Family::Face, 256, 256, 1, 0);
    let plan = TraversalPlan::build(TraversalKind::FiveCrop, 256, 256, 64, Some(&spec.anchors())).unwrap();
    assert_eq!(plan.len(), 5);
    assert_eq!(plan.kind, TraversalKind::FiveCrop);
}

#[test]
fn plan_errors() {
    assert!(matches!(TraversalPlan::zigzag(10, 12, 4), Err(SyntaxError::Plan(_))));
    assert!(TraversalPlan::zigzag(4, 4, 4).is_err());
    assert!(TraversalPlan::zigzag(4, 4, 0).is_err());
    assert!(TraversalPlan::five_crop(64, 64, 16, &[(10, 10); 4]).is_err());
    assert!(TraversalPlan::five_crop(64, 64, 16, &[(4, 10), (20, 20), (30, 30), (40, 40), (50, 50)]).is_err());
    assert!(TraversalPlan::five_crop(64, 64, 16, &[(10, 10), (20, 20), (30, 30), (40, 40), (60, 50)]).is_err());
    assert!(TraversalPlan::build(TraversalKind::FiveCrop, 64, 64, 16, None).is_err());
    assert!(TraversalPlan::zigzag(8, 8, 4).unwrap().with_circular(true).is_err());
    assert!("spiral".parse::<TraversalKind>().is_err());
    assert_eq!("zig-zag".parse::<TraversalKind>().unwrap(), TraversalKind::ZigZag);
}

#[test]
fn plan_json_round_trip() {
    let spec = SyntheticSpec::new(Family::Face, 64, 64, 1, 0);
    let plan = TraversalPlan::five_crop(64, 64, 16, &spec.anchors()).unwrap().with_circular(true).unwrap();
    let json = plan.to_json();
    assert!(json.contains("\"five-crop\""));
    assert_eq!(TraversalPlan::from_json(&json).unwrap(), plan);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    assert_eq!(TraversalPlan::load(&path).unwrap(), plan);
    let broken = json.replace("\"height\": 64", "\"height\": 8");
    assert!(TraversalPlan::from_json(&broken).is_err());
}

#[test]
fn semantics_vector_examples() {
    let uniform = LabelGrid::filled(5, 5, 3, 0).unwrap();
    assert_eq!(semantics_vector(&uniform, 3).unwrap(), vec![1.0, 0.0, 0.0]);
    let m = LabelGrid::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
    assert_eq!(semantics_vector(&m, 3).unwrap(), vec![0.5, 0.25, 0.25]);
    assert!(semantics_vector(&m, 2).is_err());
}

#[test]
fn semantics_vector_matches_counting() {
    let m = random_mask(64, 64, 7, 3);
    let mut counts = [0u32; 7];
    for y in 0..64 {
        for x in 0..64 {
            counts[m.get(y, x) as usize] += 1;
        }
    }
    let s = semantics_vector(&m, 7).unwrap();
    for c in 0..7 {
        assert_eq!(s[c], counts[c] as f64 / 4096.0);
    }
}

#[test]
fn encode_patch_layout() {
    let cfg = SyntaxConfig::new(7);
    assert_eq!(cfg.input_dim(), 135);
    assert_eq!(cfg.hidden, 135);
    let mut model = SyntaxModel::new(cfg, 1).unwrap();
    let patch = random_mask(64, 64, 7, 4);
    let x = encode_patch(&model, &patch).unwrap();
    assert_eq!(x.len(), 135);
    assert_eq!(x, encode_patch(&model, &patch.clone()).unwrap());
    model.params.insert("encoder.weight", DenseArray::zeros(&[4096, 128]));
    let x = encode_patch(&model, &patch).unwrap();
    assert_eq!(&x[..128], model.params.get("encoder.bias").unwrap().data());
    let s: Vec<f32> = semantics_vector(&patch, 7).unwrap().iter().map(|&v| v as f32).collect();
    assert_eq!(&x[128..], s.as_slice());
}

#[test]
fn zero_model_predicts_zero() {
    let cfg = small_cfg(3, 8);
    let mut model = SyntaxModel::new(cfg, 2).unwrap();
    let names: Vec<String> = model.params.names().cloned().collect();
    for n in names {
        let dims = model.params.get(&n).unwrap().dims().to_vec();
        model.params.insert(&n, DenseArray::zeros(&dims));
    }
    let p = bilstm_forward(&model, &random_sequence(&cfg, 4, 9)).unwrap();
    assert!(p.forward.iter().chain(&p.backward).flatten().all(|&v| v == 0.0));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Step-by-step scalar LSTM over one sequence, straight from the stored weights.
fn scalar_oracle(model: &SyntaxModel, seq: &Sequence) -> Predictions {
    let cfg = *model.config();
    let p = |n: &str| model.params.get(n).unwrap().data().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (ew, eb) = (p("encoder.weight"), p("encoder.bias"));
    let g = seq.len();
    let mut xs = Vec::new();
    for t in 0..g {
        let m = seq.masks.row(t);
        let mut x = vec![0.0; cfg.input_dim()];
        for j in 0..cfg.enc_dim {
            let mut acc = eb[j];
            for (k, &v) in m.iter().enumerate() {
                acc += v as f64 * ew[k * cfg.enc_dim + j];
            }
            x[j] = acc;
        }
        x[cfg.enc_dim..].copy_from_slice(&seq.semantics[t]);
        xs.push(x);
    }
    let run = |dir: &str, order: Vec<usize>| {
        let w: Vec<Vec<f64>> = GATES.iter().map(|gt| p(&format!("lstm.{dir}.W_{gt}"))).collect();
        let b: Vec<Vec<f64>> = GATES.iter().map(|gt| p(&format!("lstm.{dir}.b_{gt}"))).collect();
        let (pw, pb) = (p(&format!("proj.{dir}.weight")), p(&format!("proj.{dir}.bias")));
        let hd = cfg.hidden;
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut out = vec![Vec::new(); g];
        for t in order {
            let xh: Vec<f64> = xs[t].iter().chain(&h).copied().collect();
            let gate = |k: usize, j: usize| b[k][j] + xh.iter().enumerate().map(|(r, v)| v * w[k][r * hd + j]).sum::<f64>();
            let mut nh = vec![0.0; hd];
            for j in 0..hd {
                let (i, f, gg, o) = (sigmoid(gate(0, j)), sigmoid(gate(1, j)), gate(2, j).tanh(), sigmoid(gate(3, j)));
                c[j] = f * c[j] + i * gg;
                nh[j] = o * c[j].tanh();
            }
            h = nh;
            out[t] = (0..cfg.num_classes).map(|k| pb[k] + (0..hd).map(|j| h[j] * pw[j * cfg.num_classes + k]).sum::<f64>()).collect();
        }
        out
    };
    Predictions { forward: run("fwd", (0..g).collect()), backward: run("bwd", (0..g).rev().collect()) }
}

#[test]
fn bilstm_matches_scalar_oracle() {
    for (cfg, seed) in [(small_cfg(3, 8), 1u64), (SyntaxConfig::new(7), 2)] {
        let model = SyntaxModel::new(cfg, seed).unwrap();
        let seq = random_sequence(&cfg, 5, seed * 10);
        let got = bilstm_forward(&model, &seq).unwrap();
        let want = scalar_oracle(&model, &seq);
        for (a, b) in got.forward.iter().chain(&got.backward).flatten().zip(want.forward.iter().chain(&want.backward).flatten()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn reversed_input_with_swapped_directions_mirrors_predictions() {
    let cfg = small_cfg(4, 8);
    let model = SyntaxModel::new(cfg, 5).unwrap();
    let mut swapped = model.clone();
    for (name, v) in model.params.iter() {
        let other = if name.contains(".fwd.") { name.replace(".fwd.", ".bwd.") } else { name.replace(".bwd.", ".fwd.") };
        swapped.params.insert(&other, v.clone());
    }
    let patches: Vec<LabelGrid> = (0..4).map(|t| random_mask(8, 8, 4, 40 + t)).collect();
    let reversed: Vec<LabelGrid> = patches.iter().rev().cloned().collect();
    let a = bilstm_forward(&model, &Sequence::from_patches(&cfg, &patches).unwrap()).unwrap();
    let b = bilstm_forward(&swapped, &Sequence::from_patches(&cfg, &reversed).unwrap()).unwrap();
    let rev = |v: &Vec<Vec<f64>>| v.iter().rev().cloned().collect::<Vec<_>>();
    assert_eq!(b.forward, rev(&a.backward));
    assert_eq!(b.backward, rev(&a.forward));
}

#[test]
fn batching_does_not_change_predictions() {
    let cfg = small_cfg(3, 8);
    let model = SyntaxModel::new(cfg, 6).unwrap();
    let seqs: Vec<Sequence> = (0..3).map(|i| random_sequence(&cfg, 4, 100 * i)).collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let batched = predict_batch(&model, &refs).unwrap();
    for (s, p) in seqs.iter().zip(&batched) {
        let single = bilstm_forward(&model, s).unwrap();
        for (a, b) in single.forward.iter().flatten().zip(p.forward.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn predictions_are_finite_and_short_sequences_rejected() {
    let cfg = small_cfg(3, 8);
    let model = SyntaxModel::new(cfg, 7).unwrap();
    let p = bilstm_forward(&model, &random_sequence(&cfg, 6, 3)).unwrap();
    assert!(p.forward.iter().chain(&p.backward).flatten().all(|v| v.is_finite()));
    assert!(Sequence::from_patches(&cfg, &[random_mask(8, 8, 3, 1)]).is_err());
    let other = random_sequence(&small_cfg(4, 8), 3, 1);
    assert!(bilstm_forward(&model, &other).is_err());
}

#[test]
fn syntax_loss_examples() {
    let s = vec![vec![0.2, 0.8, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]];
    let exact = Predictions {
        forward: vec![s[1].clone(), s[2].clone(), vec![9.0; 3]],
        backward: vec![vec![-4.0; 3], s[0].clone(), s[1].clone()],
    };
    assert_eq!(syntax_loss(&exact, &s).unwrap(), 0.0);
    let s2 = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
    let p = Predictions { forward: vec![vec![1.0, 1.0], vec![0.0, 0.0]], backward: vec![vec![0.0, 0.0], vec![0.0, 1.0]] };
    assert_eq!(syntax_loss(&p, &s2).unwrap(), 0.5);
    assert!(syntax_loss(&p, &s2[..1]).is_err());
}

#[test]
fn graph_loss_agrees_with_direct_formula() {
    let cfg = small_cfg(3, 8);
    let model = SyntaxModel::new(cfg, 8).unwrap();
    let seqs: Vec<Sequence> = (0..2).map(|i| random_sequence(&cfg, 4, 7 + 50 * i)).collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let mut g = Graph::<f32>::new();
    syntax_graph(&mut g, &cfg, 2, 4);
    let graph_loss = g.forward(&(&model.params, &batch_inputs::<f32>(&refs).unwrap())).unwrap().item().unwrap() as f64;
    let preds = predict_batch(&model, &refs).unwrap();
    let direct = preds.iter().zip(&seqs).map(|(p, s)| syntax_loss(p, &s.semantics).unwrap()).sum::<f64>() / 2.0;
    assert!((graph_loss - direct).abs() < 1e-6, "{graph_loss} vs {direct}");
}

fn joint_gradient_check(cfg: SyntaxConfig, per_param: Option<usize>) -> f64 {
    let model = SyntaxModel::new(cfg, 11).unwrap();
    let seqs: Vec<Sequence> = (0..2).map(|i| random_sequence(&cfg, 3, 21 + 10 * i)).collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let inputs: ParamStore<f64> = batch_inputs(&refs).unwrap();
    let params = model.params.cast::<f64>();
    let build = || {
        let mut g = Graph::<f64>::new();
        syntax_graph(&mut g, &cfg, 2, 3);
        g
    };
    let coords = |name: &str, len: usize| {
        per_param.map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919 + len as u64);
            rand::seq::index::sample(&mut rng, len, k.min(len)).into_vec()
        })
    };
    let r = check_gradients(&build, &params, &inputs, 1e-3, &coords).unwrap();
    if per_param.is_none() {
        assert_eq!(r.checked, params.numel());
    }
    r.max_rel_err
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let err = joint_gradient_check(small_cfg(3, 8), None);
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn default_size_gradient_spot_check() {
    let cfg = SyntaxConfig { mask_res: 16, ..SyntaxConfig::new(3) };
    let err = joint_gradient_check(cfg, Some(24));
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn model_round_trips_through_weights_file() {
    let model = SyntaxModel::new(SyntaxConfig::new(7), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("syntax.igwt");
    model.save(&path).unwrap();
    let back = SyntaxModel::load(&path).unwrap();
    assert_eq!(back, model);
    for dir in DIRECTIONS {
        for gate in GATES {
            assert!(back.params.get(&format!("lstm.{dir}.W_{gate}")).is_some());
        }
    }
    let mut broken = model.params.clone();
    broken.insert("lstm.bwd.b_o", DenseArray::zeros(&[3]));
    assert!(SyntaxModel::from_params(broken).is_err());
}

#[test]
fn lr_schedules() {
    let step = LrSchedule::Step { after: 20, gamma: 0.1 };
    assert_eq!(step.lr_at(1e-4, 19), 1e-4);
    assert!((step.lr_at(1e-4, 20) - 1e-5).abs() < 1e-18);
    let multi = LrSchedule::MultiStep { milestones: vec![5, 10, 15], gamma: 0.8 };
    assert_eq!(multi.lr_at(1.0, 4), 1.0);
    assert!((multi.lr_at(1.0, 12) - 0.64).abs() < 1e-12);
    assert_eq!(LrSchedule::Constant.lr_at(0.3, 100), 0.3);
}

#[test]
fn memorizes_one_repeated_sequence() {
    let cfg = small_cfg(3, 8);
    let mut model = SyntaxModel::new(cfg, 4).unwrap();
    let seq = random_sequence(&cfg, 4, 5);
    let seqs = vec![seq.clone(); 8];
    let tc = SyntaxTrainConfig { epochs: 200, lr: 1e-2, schedule: LrSchedule::Constant, batch_size: 8, seed: 1 };
    let log = train_sequences(&mut model, &seqs, &tc, false).unwrap();
    assert!(*log.last().unwrap() < 1e-3, "final loss {}", log.last().unwrap());
    let p = bilstm_forward(&model, &seq).unwrap();
    assert!(syntax_loss(&p, &seq.semantics).unwrap() < 1e-3);
}

#[test]
fn training_is_deterministic_and_validates_input() {
    let cfg = small_cfg(3, 8);
    let seqs: Vec<Sequence> = (0..6).map(|i| random_sequence(&cfg, 3, 9 * i)).collect();
    let tc = SyntaxTrainConfig { epochs: 3, lr: 1e-3, schedule: LrSchedule::Constant, batch_size: 4, seed: 2 };
    let run = |circular| {
        let mut m = SyntaxModel::new(cfg, 1).unwrap();
        let log = train_sequences(&mut m, &seqs, &tc, circular).unwrap();
        (m, log)
    };
    assert_eq!(run(false), run(false));
    assert_eq!(run(true), run(true));
    assert_ne!(run(true).1, run(false).1);
    let mut m = SyntaxModel::new(cfg, 1).unwrap();
    assert!(matches!(train_sequences(&mut m, &[], &tc, false), Err(SyntaxError::Empty(_))));
    let plan = TraversalPlan::zigzag(16, 16, 8).unwrap();
    assert!(matches!(train_syntax(&mut m, &[], &plan, &tc), Err(SyntaxError::Empty(_))));
}

#[test]
fn face_syntax_training_converges() {
    let spec = SyntheticSpec::new(Family::Face, 64, 64, 400, 3);
    let data = generate_synthetic(&spec).unwrap();
    let masks: Vec<&LabelGrid> = data.samples.iter().map(|s| &s.mask).collect();
    let plan = TraversalPlan::five_crop(64, 64, 16, &spec.anchors()).unwrap();
    let cfg = SyntaxConfig { mask_res: 16, ..SyntaxConfig::new(7) };
    let mut model = SyntaxModel::new(cfg, 1).unwrap();
    let tc = SyntaxTrainConfig { epochs: 15, lr: 3e-3, schedule: LrSchedule::Step { after: 10, gamma: 0.1 }, batch_size: 16, seed: 4 };
    let log = train_syntax(&mut model, &masks, &plan, &tc).unwrap();
    assert!(log.last().unwrap() < &(0.1 * log[0]), "{log:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semantics_sum_to_one(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let s = semantics_vector(&random_mask(h, w, 5, seed), 5).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(s.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn semantics_follow_class_relabeling(seed in any::<u64>(), perm in Just((0u8..5).collect::<Vec<_>>()).prop_shuffle()) {
        let m = random_mask(9, 7, 5, seed);
        let relabeled = m.relabel(&perm, 5).unwrap();
        let s = semantics_vector(&m, 5).unwrap();
        let r = semantics_vector(&relabeled, 5).unwrap();
        for c in 0..5 {
            prop_assert_eq!(r[perm[c] as usize], s[c]);
        }
    }

    #[test]
    fn loss_is_zero_only_at_targets(seed in any::<u64>(), t in 0usize..3, k in 0usize..3, delta in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let mut p = Predictions {
            forward: (0..4).map(|i| if i < 3 { s[i + 1].clone() } else { vec![0.0; 3] }).collect(),
            backward: (0..4).map(|i| if i > 0 { s[i - 1].clone() } else { vec![0.0; 3] }).collect(),
        };
        prop_assert_eq!(syntax_loss(&p, &s).unwrap(), 0.0);
        p.forward[t][k] += delta;
        prop_assert!(syntax_loss(&p, &s).unwrap() > 0.0);
    }
}
