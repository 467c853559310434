use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::DenseArray;

use super::ClusterError;

/// K unit-norm centroids, `[K, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidBank {
    centroids: DenseArray<f32>,
}

impl CentroidBank {
    /// Normalizes each row; zero rows are rejected.
    pub fn new(centroids: DenseArray<f32>) -> Result<Self, ClusterError> {
        if centroids.rank() != 2 || centroids.rows() == 0 {
            return Err(ClusterError::Config(format!("centroids need dims [K, d], got {:?}", centroids.dims())));
        }
        let d = centroids.cols();
        let mut data = centroids.into_data();
        for (k, row) in data.chunks_mut(d).enumerate() {
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(ClusterError::ZeroNorm(format!("centroid {k}")));
            }
            row.iter_mut().for_each(|v| *v = (*v as f64 / n) as f32);
        }
        let k = data.len() / d;
        Ok(Self { centroids: DenseArray::new(vec![k, d], data)? })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn as_array(&self) -> &DenseArray<f32> {
        &self.centroids
    }

    pub fn row(&self, k: usize) -> &[f32] {
        self.centroids.row(k)
    }

    /// Nearest centroid by cosine distance per row of `features`; ties go
    /// to the lowest id.
    pub fn assign(&self, features: &DenseArray<f32>) -> Result<Vec<usize>, ClusterError> {
        self.check_dim(features)?;
        Ok((0..features.rows()).map(|i| self.nearest(features.row(i)).0).collect())
    }

    /// `(id, cosine similarity)` of the most similar centroid.
    pub fn nearest(&self, z: &[f32]) -> (usize, f64) {
        let n = norm(z).max(f64::MIN_POSITIVE);
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.k() {
            let s = dot(z, self.row(k)) / n;
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    }

    fn check_dim(&self, features: &DenseArray<f32>) -> Result<(), ClusterError> {
        if features.rank() != 2 || features.cols() != self.dim() {
            return Err(ClusterError::Config(format!("features {:?} vs centroid dim {}", features.dims(), self.dim())));
        }
        Ok(())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub enum KmeansInit {
    /// k-means++ seeding under cosine distance.
    PlusPlus { seed: u64 },
    /// Warm start from existing centroids.
    Given(CentroidBank),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmeansResult {
    /// One assignment vector per input batch.
    pub assignments: Vec<Vec<usize>>,
    pub centroids: CentroidBank,
    /// Objective `Σ (1 − cos(z, μ_y))` after the initial assignment and
    /// after every assignment/update alternation.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

/// Cosine k-means over the rows of all batches (unit-normalized first).
///
/// Alternates nearest-centroid assignment and normalized-mean updates for at
/// most `iters` iterations, stopping early once assignments are stable.
/// Empty clusters are re-seeded from the point farthest from its centroid.
pub fn minibatch_kmeans(
    batches: &[&DenseArray<f32>],
    k: usize,
    init: &KmeansInit,
    iters: usize,
) -> Result<KmeansResult, ClusterError> {
    let d = batches.first().ok_or_else(|| ClusterError::Empty("k-means input".into()))?.cols();
    let mut points: Vec<f64> = Vec::new();
    for (bi, b) in batches.iter().enumerate() {
        if b.rank() != 2 || b.cols() != d {
            return Err(ClusterError::Config(format!("batch {bi} has dims {:?}, expected [_, {d}]", b.dims())));
        }
        for i in 0..b.rows() {
            let row = b.row(i);
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(ClusterError::ZeroNorm(format!("feature {i} of batch {bi}")));
            }
            points.extend(row.iter().map(|&v| v as f64 / n));
        }
    }
    let n = points.len() / d;
    if k == 0 || k > n {
        return Err(ClusterError::Config(format!("K={k} with {n} points")));
    }
    let pt = |i: usize| &points[i * d..(i + 1) * d];

    let mut mu: Vec<f64> = match init {
        KmeansInit::Given(bank) => {
            if bank.k() != k || bank.dim() != d {
                return Err(ClusterError::Config(format!("initial bank is {}x{}, need {k}x{d}", bank.k(), bank.dim())));
            }
            bank.as_array().data().iter().map(|&v| v as f64).collect()
        }
        KmeansInit::PlusPlus { seed } => plus_plus(&points, n, d, k, *seed),
    };

    let sim = |mu: &[f64], i: usize, c: usize| -> f64 { pt(i).iter().zip(&mu[c * d..(c + 1) * d]).map(|(a, b)| a * b).sum() };
    let assign = |mu: &[f64]| -> (Vec<usize>, f64) {
        let mut labels = Vec::with_capacity(n);
        let mut obj = 0.0;
        for i in 0..n {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..k {
                let s = sim(mu, i, c);
                if s > best.1 {
                    best = (c, s);
                }
            }
            labels.push(best.0);
            obj += 1.0 - best.1;
        }
        (labels, obj)
    };

    let (mut labels, obj) = assign(&mu);
    let mut objective = vec![obj];
    let mut iterations = 0;
    let mut reseeded = 0;
    while iterations < iters {
        iterations += 1;
        // Update: normalized mean of members, in point order.
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(pt(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            let s = &sums[c * d..(c + 1) * d];
            let len = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if counts[c] > 0 && len > 1e-12 {
                for (m, v) in mu[c * d..(c + 1) * d].iter_mut().zip(s) {
                    *m = v / len;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Farthest point from its own centroid, not already used as a seed.
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, 1.0 - sim(&mu, i, labels[i])))
                .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                mu[c * d..(c + 1) * d].copy_from_slice(pt(i));
                reseeded += 1;
            }
        }
        let (next, obj) = assign(&mu);
        objective.push(obj);
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }

    let mut assignments = Vec::with_capacity(batches.len());
    let mut start = 0;
    for b in batches {
        assignments.push(labels[start..start + b.rows()].to_vec());
        start += b.rows();
    }
    let centroids = CentroidBank::new(DenseArray::new(vec![k, d], mu.iter().map(|&v| v as f32).collect())?)?;
    Ok(KmeansResult { assignments, centroids, objective, iterations, reseeded })
}

/// k-means++ seeding with D(x) = 1 − cos.
fn plus_plus(points: &[f64], n: usize, d: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pt = |i: usize| &points[i * d..(i + 1) * d];
    let mut mu = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    mu.extend_from_slice(pt(first));
    let dist = |i: usize, c: &[f64]| (1.0 - pt(i).iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).max(0.0);
    let mut best: Vec<f64> = (0..n).map(|i| dist(i, pt(first))).collect();
    for _ in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        };
        let c = pt(pick).to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist(i, &c));
        }
        mu.extend_from_slice(&c);
    }
    mu
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, ClusterError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ClusterError::Config(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().map(|&v| c2(v)).sum();
    let sum_a: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(a.len() as u64);
    let expected = sum_a * sum_b / total.max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        // Both labelings are trivial (one cluster or all singletons).
        return Ok(if (sum_ij - expected).abs() < 1e-12 { 1.0 } else { 0.0 });
    }
    Ok((sum_ij - expected) / (max - expected))
}
