use std::collections::BTreeMap;

use super::{DenseArray, Gradients, NumError, ParamStore};

/// Adam state: per-parameter moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, DenseArray<f32>>,
    second: BTreeMap<String, DenseArray<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&DenseArray<f32>> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&DenseArray<f32>> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// left untouched; gradients naming unknown parameters are an error.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &Gradients<f32>, state: &mut Adam) -> Result<(), NumError> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| NumError::Param { name: name.clone(), msg: "no such parameter".into() })?;
        if p.dims() != g.dims() {
            return Err(NumError::Param {
                name: name.clone(),
                msg: format!("gradient dims {:?} vs parameter dims {:?}", g.dims(), p.dims()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.first.entry(name.clone()).or_insert_with(|| DenseArray::zeros(g.dims()));
        let v = state.second.entry(name.clone()).or_insert_with(|| DenseArray::zeros(g.dims()));
        for (((pv, &gv), mv), vv) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
        {
            let gv = gv as f64;
            let m1 = state.beta1 * (*mv as f64) + (1.0 - state.beta1) * gv;
            let v1 = state.beta2 * (*vv as f64) + (1.0 - state.beta2) * gv * gv;
            *mv = m1 as f32;
            *vv = v1 as f32;
            let update = state.lr * (m1 / bc1) / ((v1 / bc2).sqrt() + state.eps);
            *pv = (*pv as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("x", DenseArray::from_vec(vec![v]));
        s
    }

    fn grad(v: f32) -> Gradients<f32> {
        let mut g = Gradients::new();
        g.insert("x".into(), DenseArray::from_vec(vec![v]));
        g
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(0.0);
        let mut st = Adam::new(1e-4);
        adam_step(&mut p, &grad(1.0), &mut st).unwrap();
        // m̂ = 1, v̂ = 1, update = lr / (1 + eps)
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((p.get("x").unwrap().data()[0] as f64 - want).abs() < 1e-10);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = store(0.75);
        let mut st = Adam::new(1e-2);
        for _ in 0..5 {
            adam_step(&mut p, &grad(0.0), &mut st).unwrap();
        }
        assert_eq!(p.get("x").unwrap().data()[0], 0.75);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn descends_a_convex_quadratic() {
        let mut p = store(1.0);
        let mut st = Adam::new(0.1);
        let f = |x: f32| x * x;
        let f0 = f(p.get("x").unwrap().data()[0]);
        for _ in 0..2 {
            let x = p.get("x").unwrap().data()[0];
            adam_step(&mut p, &grad(2.0 * x), &mut st).unwrap();
        }
        assert!(f(p.get("x").unwrap().data()[0]) < f0);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let mut p = store(0.0);
        let mut g = Gradients::new();
        g.insert("x".into(), DenseArray::from_vec(vec![1.0, 2.0]));
        let mut st = Adam::new(1e-3);
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
