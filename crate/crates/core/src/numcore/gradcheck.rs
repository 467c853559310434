//! Central finite-difference checking of graph gradients.

use super::{ArraySource, Graph, NumError, ParamStore};

/// Largest discrepancy found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares backward gradients of the scalar graph produced by `build`
/// against central differences with step `eps`.
///
/// `coords` selects which coordinates of a parameter to probe (given its
/// name and length); returning `None` probes all of them.
pub fn check_gradients(
    build: &dyn Fn() -> Graph<f64>,
    params: &ParamStore<f64>,
    inputs: &dyn ArraySource<f64>,
    eps: f64,
    coords: &dyn Fn(&str, usize) -> Option<Vec<usize>>,
) -> Result<GradCheck, NumError> {
    struct Both<'a> {
        p: &'a ParamStore<f64>,
        i: &'a dyn ArraySource<f64>,
    }
    impl ArraySource<f64> for Both<'_> {
        fn lookup(&self, name: &str) -> Option<&super::DenseArray<f64>> {
            self.p.lookup(name).or_else(|| self.i.lookup(name))
        }
    }
    let eval = |p: &ParamStore<f64>| -> Result<f64, NumError> {
        let mut g = build();
        let v = g.forward(&Both { p, i: inputs })?;
        v.item().ok_or(NumError::NonScalarRoot { dims: v.dims().to_vec() })
    };

    let mut g = build();
    g.forward(&Both { p: params, i: inputs })?;
    let grads = g.backward()?;

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let Some(analytic) = grads.get(name) else { continue };
        let idx = coords(name, value.len()).unwrap_or_else(|| (0..value.len()).collect());
        for j in idx {
            let orig = value.data()[j];
            probe.get_mut(name).unwrap().data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report = GradCheck {
                    max_rel_err: e.max(report.max_rel_err),
                    worst_param: name.clone(),
                    worst_index: j,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
