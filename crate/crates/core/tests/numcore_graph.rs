use std::collections::BTreeMap;
use std::sync::Arc;

use grammarscope_core::numcore::gradcheck::{check_gradients, rel_err};
use grammarscope_core::numcore::{DenseArray, Graph, NodeId, NumError, ParamStore, GATHER_ZERO};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bind(pairs: &[(&str, DenseArray<f32>)]) -> BTreeMap<String, DenseArray<f32>> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn matmul_identity_returns_vector() {
    let mut g = Graph::<f32>::new();
    let i = g.input("i");
    let v = g.input("v");
    g.matmul(i, v);
    let src = bind(&[
        ("i", DenseArray::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
        ("v", DenseArray::from_vec(vec![3.0, -1.0])),
    ]);
    assert_eq!(g.forward(&src).unwrap().data(), &[3.0, -1.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    g.softmax(x);
    let out = g.forward(&bind(&[("x", DenseArray::from_vec(vec![0.0, 0.0]))])).unwrap();
    assert_eq!(out.data(), &[0.5, 0.5]);
}

#[test]
fn tanh_matches_extended_precision_value() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    g.tanh(x);
    let out = g.forward(&bind(&[("x", DenseArray::from_vec(vec![0.5, -0.5]))])).unwrap();
    // Frozen from an f64 evaluation of tanh(0.5).
    let want = 0.46211716f32;
    assert!((out.data()[0] - want).abs() <= 1e-7);
    assert!((out.data()[1] + want).abs() <= 1e-7);
}

#[test]
fn sum_of_squares_and_mean_gradients() {
    let mut g = Graph::<f32>::new();
    let v = g.param("v");
    g.sum_squares(v);
    let mut p = ParamStore::new();
    p.insert("v", DenseArray::from_vec(vec![1.0, 2.0]));
    g.forward(&p).unwrap();
    assert_eq!(g.backward().unwrap()["v"].data(), &[2.0, 4.0]);

    let mut g = Graph::<f32>::new();
    let v = g.param("v");
    g.mean(v);
    let mut p = ParamStore::new();
    p.insert("v", DenseArray::from_vec(vec![5.0, -1.0, 2.0, 0.0]));
    g.forward(&p).unwrap();
    assert_eq!(g.backward().unwrap()["v"].data(), &[0.25; 4]);
}

#[test]
fn backward_preconditions() {
    let mut g = Graph::<f32>::new();
    let v = g.param("v");
    g.tanh(v);
    assert!(matches!(g.backward(), Err(NumError::NotEvaluated)));
    let mut p = ParamStore::new();
    p.insert("v", DenseArray::from_vec(vec![1.0, 2.0]));
    g.forward(&p).unwrap();
    assert!(matches!(g.backward(), Err(NumError::NonScalarRoot { .. })));
}

#[test]
fn dimension_mismatch_names_the_node() {
    let mut g = Graph::<f32>::new();
    let a = g.input("a");
    let b = g.input("b");
    let bad = g.matmul(a, b);
    let src = bind(&[
        ("a", DenseArray::matrix(2, 3, vec![0.0; 6]).unwrap()),
        ("b", DenseArray::matrix(2, 3, vec![0.0; 6]).unwrap()),
    ]);
    match g.forward(&src) {
        Err(NumError::Node { id, op, .. }) => {
            assert_eq!(id, bad.index());
            assert_eq!(op, "matmul");
        }
        other => panic!("expected node error, got {other:?}"),
    }
}

#[test]
fn unbound_input_is_reported() {
    let mut g = Graph::<f32>::new();
    g.input("missing");
    assert!(matches!(g.forward(&BTreeMap::new()), Err(NumError::Unbound { .. })));
}

#[test]
fn log_of_nonpositive_is_an_error() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    g.log(x);
    assert!(g.forward(&bind(&[("x", DenseArray::from_vec(vec![1.0, 0.0]))])).is_err());
}

#[test]
fn normalize_rows_rejects_zero_rows() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    g.normalize_rows(x);
    let src = bind(&[("x", DenseArray::matrix(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap())]);
    assert!(g.forward(&src).is_err());
}

fn rand_array(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> DenseArray<f64> {
    let n = dims.iter().product();
    DenseArray::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Builds `mean(op(a, b) * w)` and checks its parameter gradients.
fn check_op(
    name: &str,
    trials: usize,
    seed: u64,
    setup: &dyn Fn(&mut ChaCha8Rng) -> (ParamStore<f64>, Vec<usize>),
    op: &dyn Fn(&mut Graph<f64>, NodeId, NodeId) -> NodeId,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (params, out_dims) = setup(&mut rng);
        let w = rand_array(&mut rng, &out_dims, -1.0, 1.0);
        let build = || {
            let mut g = Graph::<f64>::new();
            let a = g.param("a");
            let b = if params.get("b").is_some() { g.param("b") } else { a };
            let y = op(&mut g, a, b);
            let wc = g.constant(w.clone());
            let m = g.mul(y, wc);
            g.mean(m);
            g
        };
        let r = check_gradients(&build, &params, &BTreeMap::new(), 1e-3, &|_, _| None).unwrap();
        worst = worst.max(r.max_rel_err);
        assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
    }
    eprintln!("{name}: worst relative error {worst:.3e} over {trials} trials");
}

fn ab(rng: &mut ChaCha8Rng, da: &[usize], db: &[usize]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("a", rand_array(rng, da, -2.0, 2.0));
    p.insert("b", rand_array(rng, db, -2.0, 2.0));
    p
}

fn one(rng: &mut ChaCha8Rng, da: &[usize], lo: f64, hi: f64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("a", rand_array(rng, da, lo, hi));
    p
}

fn dims2(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..6))
}

#[test]
fn every_op_matches_finite_differences() {
    const TRIALS: usize = 100;
    check_op(
        "matmul",
        TRIALS,
        1,
        &|r| {
            let (m, k) = dims2(r);
            let n = r.gen_range(1..5);
            (ab(r, &[m, k], &[k, n]), vec![m, n])
        },
        &|g, a, b| g.matmul(a, b),
    );
    for (label, seed) in [("add", 2u64), ("sub", 3), ("multiply", 4)] {
        check_op(
            label,
            TRIALS,
            seed,
            &|r| {
                let (m, n) = dims2(r);
                let db = match r.gen_range(0..4) {
                    0 => vec![m, n],
                    1 => vec![n],
                    2 => vec![m, 1],
                    _ => vec![1],
                };
                (ab(r, &[m, n], &db), vec![m, n])
            },
            &|g, a, b| match label {
                "add" => g.add(a, b),
                "sub" => g.sub(a, b),
                _ => g.mul(a, b),
            },
        );
    }
    let unary: [(&str, u64, f64, f64); 6] = [
        ("tanh", 5, -2.0, 2.0),
        ("sigmoid", 6, -3.0, 3.0),
        ("log", 7, 0.2, 3.0),
        ("softmax", 8, -2.0, 2.0),
        ("log_softmax", 9, -2.0, 2.0),
        ("normalize_rows", 10, 1.0, 4.0),
    ];
    for (label, seed, lo, hi) in unary {
        check_op(
            label,
            TRIALS,
            seed,
            &|r| {
                let (m, n) = dims2(r);
                (one(r, &[m, n + 1], lo, hi), vec![m, n + 1])
            },
            &|g, a, _| match label {
                "tanh" => g.tanh(a),
                "sigmoid" => g.sigmoid(a),
                "log" => g.log(a),
                "softmax" => g.softmax(a),
                "log_softmax" => g.log_softmax(a),
                _ => g.normalize_rows(a),
            },
        );
    }
    check_op(
        "scale",
        TRIALS,
        11,
        &|r| {
            let (m, n) = dims2(r);
            (one(r, &[m, n], -2.0, 2.0), vec![m, n])
        },
        &|g, a, _| g.scale(a, -1.75),
    );
    check_op(
        "concat",
        TRIALS,
        12,
        &|r| {
            let (m, n) = dims2(r);
            let k = r.gen_range(1..4);
            (ab(r, &[m, n], &[m, k]), vec![m, 2 * n + k])
        },
        &|g, a, b| g.concat(&[a, b, a]),
    );
    // The output width of these ops depends on the drawn dims, so they run
    // their own loops instead of going through `check_op`'s fixed closure.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..TRIALS {
        let (m, n) = dims2(&mut rng);
        let n = n + 2;
        let start = rng.gen_range(0..n - 1);
        let len = rng.gen_range(1..=n - start);
        let p = one(&mut rng, &[m, n], -2.0, 2.0);
        let w = rand_array(&mut rng, &[m, len], -1.0, 1.0);
        let build = || {
            let mut g = Graph::<f64>::new();
            let a = g.param("a");
            let s = g.slice(a, start, len);
            let wc = g.constant(w.clone());
            let y = g.mul(s, wc);
            g.sum_squares(y);
            g
        };
        let r = check_gradients(&build, &p, &BTreeMap::new(), 1e-3, &|_, _| None).unwrap();
        assert!(r.max_rel_err < 1e-4, "slice/sum_of_squares: {r:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..TRIALS {
        let (m, n) = dims2(&mut rng);
        let p = one(&mut rng, &[m, n], -2.0, 2.0);
        let len = rng.gen_range(1..12);
        let index: Arc<[u32]> = (0..len)
            .map(|_| if rng.gen_bool(0.2) { GATHER_ZERO } else { rng.gen_range(0..(m * n) as u32) })
            .collect();
        let w = rand_array(&mut rng, &[len], -1.0, 1.0);
        let build = || {
            let mut g = Graph::<f64>::new();
            let a = g.param("a");
            let s = g.gather(a, index.clone(), vec![len]);
            let wc = g.constant(w.clone());
            let y = g.mul(s, wc);
            let t = g.tanh(y);
            g.mean(t);
            g
        };
        let r = check_gradients(&build, &p, &BTreeMap::new(), 1e-3, &|_, _| None).unwrap();
        assert!(r.max_rel_err < 1e-4, "gather/mean: {r:?}");
    }
}

#[test]
fn relative_error_uses_floor() {
    assert_eq!(rel_err(0.0, 0.0), 0.0);
    assert!((rel_err(1e-9, 0.0) - 0.1).abs() < 1e-12);
    assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
}

#[test]
fn appended_nodes_reuse_cached_values() {
    let mut g = Graph::<f32>::new();
    let x = g.input("x");
    let t = g.tanh(x);
    let src = bind(&[("x", DenseArray::from_vec(vec![0.3, -0.2]))]);
    let first = g.forward(&src).unwrap().clone();
    let s = g.sum_squares(t);
    let total = g.forward(&src).unwrap().item().unwrap();
    let want: f32 = first.data().iter().map(|v| v * v).sum();
    assert!((total - want).abs() < 1e-7);
    assert_eq!(g.value(t), Some(&first));
    assert_eq!(s.index(), 2);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, vals in proptest::collection::vec(-30.0f32..30.0, 1..40)) {
        let cols = vals.len();
        let data: Vec<f32> = (0..rows).flat_map(|r| vals.iter().map(move |v| v * (r as f32 + 1.0))).collect();
        let mut g = Graph::<f32>::new();
        let x = g.input("x");
        g.softmax(x);
        let out = g.forward(&bind(&[("x", DenseArray::matrix(rows, cols, data).unwrap())])).unwrap().clone();
        for r in 0..rows {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_pure(vals in proptest::collection::vec(-3.0f32..3.0, 6)) {
        let run = || {
            let mut g = Graph::<f32>::new();
            let x = g.input("x");
            let w = g.input("w");
            let y = g.matmul(x, w);
            let s = g.sigmoid(y);
            let l = g.log_softmax(s);
            g.sum_squares(l);
            let src = bind(&[
                ("x", DenseArray::matrix(2, 3, vals.clone()).unwrap()),
                ("w", DenseArray::matrix(3, 2, vals.iter().rev().cloned().collect()).unwrap()),
            ]);
            g.forward(&src).unwrap().clone()
        };
        let a = run();
        let b = run();
        prop_assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn finite_inputs_give_finite_outputs(vals in proptest::collection::vec(-50.0f32..50.0, 8)) {
        let mut g = Graph::<f32>::new();
        let x = g.input("x");
        let a = g.tanh(x);
        let b = g.sigmoid(x);
        let c = g.softmax(x);
        let d = g.log_softmax(x);
        let e = g.concat(&[a, b, c, d]);
        g.mean(e);
        let out = g.forward(&bind(&[("x", DenseArray::matrix(2, 4, vals).unwrap())])).unwrap();
        prop_assert!(out.is_finite());
    }
}
