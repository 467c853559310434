use std::sync::Arc;

use crate::numcore::{ArraySource, DenseArray, Graph, NodeId, ParamStore, Real};

use super::ClusterError;

/// Appends the DeepCluster loss: mean over rows of `−log softmax(−d(z, μ))`
/// at each row's label, with `d` the cosine distance.
///
/// `mu_t` is a constant node holding the unit centroids transposed, `[d, K]`.
/// `zn` must already be row-normalized. Since `−d = cos − 1`, the constant
/// shift drops out of the softmax.
pub fn dc_loss_graph<T: Real>(g: &mut Graph<T>, zn: NodeId, mu_t: NodeId, labels: &[usize], k: usize) -> NodeId {
    let logits = g.matmul(zn, mu_t);
    let lsm = g.log_softmax(logits);
    let idx: Arc<[u32]> = labels.iter().enumerate().map(|(i, &y)| (i * k + y) as u32).collect();
    let picked = g.gather(lsm, idx, vec![labels.len()]);
    let m = g.mean(picked);
    g.scale(m, -1.0)
}

/// Unit rows of `mu` `[K, d]`, transposed to `[d, K]`.
pub(crate) fn unit_transpose<T: Real>(mu: &DenseArray<T>) -> Result<DenseArray<T>, ClusterError> {
    let (k, d) = (mu.rows(), mu.cols());
    let mut out = vec![T::of(0.0); k * d];
    for c in 0..k {
        let row = mu.row(c);
        let n = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(ClusterError::ZeroNorm(format!("centroid {c}")));
        }
        for j in 0..d {
            out[j * k + c] = T::of(row[j].as_f64() / n);
        }
    }
    Ok(DenseArray::new(vec![d, k], out)?)
}

fn check_labels(z: usize, labels: &[usize], k: usize) -> Result<(), ClusterError> {
    if labels.len() != z {
        return Err(ClusterError::Config(format!("{} labels for {z} features", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(ClusterError::Config(format!("label {y} with K={k}")));
    }
    Ok(())
}

struct Empty;
impl<T> ArraySource<T> for Empty {
    fn lookup(&self, _: &str) -> Option<&DenseArray<T>> {
        None
    }
}

/// DeepCluster loss of features `z` `[m, d]` against labels and centroids `[K, d]`.
pub fn dc_loss<T: Real>(z: &DenseArray<T>, labels: &[usize], mu: &DenseArray<T>) -> Result<f64, ClusterError> {
    if z.rank() != 2 || mu.rank() != 2 || z.cols() != mu.cols() {
        return Err(ClusterError::Config(format!("features {:?} vs centroids {:?}", z.dims(), mu.dims())));
    }
    check_labels(z.rows(), labels, mu.rows())?;
    let mut g = Graph::<T>::new();
    let zc = g.constant(z.clone());
    let zn = g.normalize_rows(zc);
    let mt = g.constant(unit_transpose(mu)?);
    dc_loss_graph(&mut g, zn, mt, labels, mu.rows());
    Ok(g.forward(&Empty).map_err(zero_norm)?.item().expect("scalar").as_f64())
}

fn zero_norm(e: crate::numcore::NumError) -> ClusterError {
    match e {
        crate::numcore::NumError::Node { op, .. } if op == "normalize_rows" => ClusterError::ZeroNorm(e.to_string()),
        other => other.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicieLosses {
    pub within: f64,
    pub cross: f64,
    pub total: f64,
}

/// Node ids of the two-stream loss terms inside a training graph.
#[derive(Clone, Copy, Debug)]
pub struct PicieNodes {
    pub within: NodeId,
    pub cross: NodeId,
    pub total: NodeId,
}

/// Appends within/cross/total losses for aligned feature nodes `z1`, `z2`.
#[allow(clippy::too_many_arguments)]
pub fn picie_graph<T: Real>(
    g: &mut Graph<T>,
    z1: NodeId,
    z2: NodeId,
    y1: &[usize],
    y2: &[usize],
    mu1: &DenseArray<T>,
    mu2: &DenseArray<T>,
) -> Result<PicieNodes, ClusterError> {
    let (k1, k2) = (mu1.rows(), mu2.rows());
    let zn1 = g.normalize_rows(z1);
    let zn2 = g.normalize_rows(z2);
    let m1 = g.constant(unit_transpose(mu1)?);
    let m2 = g.constant(unit_transpose(mu2)?);
    let l11 = dc_loss_graph(g, zn1, m1, y1, k1);
    let l22 = dc_loss_graph(g, zn2, m2, y2, k2);
    let l12 = dc_loss_graph(g, zn1, m2, y2, k2);
    let l21 = dc_loss_graph(g, zn2, m1, y1, k1);
    let within = g.add(l11, l22);
    let cross = g.add(l12, l21);
    let total = g.add(within, cross);
    g.set_output(total);
    Ok(PicieNodes { within, cross, total })
}

/// `L_within = dc(z1,y1,μ1) + dc(z2,y2,μ2)`, `L_cross = dc(z1,y2,μ2) + dc(z2,y1,μ1)`.
pub fn picie_losses<T: Real>(
    z1: &DenseArray<T>,
    z2: &DenseArray<T>,
    y1: &[usize],
    y2: &[usize],
    mu1: &DenseArray<T>,
    mu2: &DenseArray<T>,
) -> Result<PicieLosses, ClusterError> {
    if z1.dims() != z2.dims() {
        return Err(ClusterError::Config(format!("stream dims {:?} vs {:?}", z1.dims(), z2.dims())));
    }
    if mu1.cols() != z1.cols() || mu2.cols() != z1.cols() {
        return Err(ClusterError::Config("centroid dim differs from feature dim".into()));
    }
    check_labels(z1.rows(), y1, mu1.rows())?;
    check_labels(z1.rows(), y2, mu2.rows())?;
    let mut g = Graph::<T>::new();
    let a = g.constant(z1.clone());
    let b = g.constant(z2.clone());
    let nodes = picie_graph(&mut g, a, b, y1, y2, mu1, mu2)?;
    g.forward(&Empty).map_err(zero_norm)?;
    let val = |id| g.value(id).and_then(|v| v.item()).expect("scalar").as_f64();
    Ok(PicieLosses { within: val(nodes.within), cross: val(nodes.cross), total: val(nodes.total) })
}

/// Parameters of the extractor only (the classifier is unused by PiCIE).
pub fn extractor_params<T: Real>(params: &ParamStore<T>) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for (name, v) in params.iter().filter(|(n, _)| n.starts_with("conv")) {
        out.insert(name, v.clone());
    }
    out
}
