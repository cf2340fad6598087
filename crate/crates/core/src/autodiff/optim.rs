use serde::{Deserialize, Serialize};

use super::nn::ParamStore;
use super::tensor::Tensor;
use crate::error::{check_len, Result};

/// RMSProp with one running mean of squared gradients per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    mean_sq: Vec<Tensor>,
}

impl RmsProp {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self::with(store, lr, 0.99, 1e-8)
    }

    pub fn with(store: &ParamStore, lr: f64, decay: f64, eps: f64) -> Self {
        Self {
            lr,
            decay,
            eps,
            mean_sq: store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }

    pub fn mean_sq(&self) -> &[Tensor] {
        &self.mean_sq
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        check_len(self.mean_sq.len(), grads.len())?;
        for ((p, s), g) in store.values_mut().iter_mut().zip(&mut self.mean_sq).zip(grads) {
            check_len(p.len(), g.len())?;
            for ((pv, sv), &gv) in p.data_mut().iter_mut().zip(s.data_mut()).zip(g.data()) {
                *sv = self.decay * *sv + (1.0 - self.decay) * gv * gv;
                *pv -= self.lr * gv / (sv.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(vec![1.0, -2.0]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let mut opt = RmsProp::new(&s, 1e-4);
        opt.step(&mut s, &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(s.get(0).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_size() {
        let mut s = store();
        let mut opt = RmsProp::new(&s, 1e-4);
        opt.step(&mut s, &[Tensor::row(vec![1.0, 1.0])]).unwrap();
        let expected = -1e-4 / (0.01f64.sqrt() + 1e-8);
        assert!((s.get(0).get(0, 0) - 1.0 - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_shrink() {
        let mut s = store();
        let mut opt = RmsProp::new(&s, 1e-4);
        let g = [Tensor::row(vec![1.0, 1.0])];
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            let before = s.get(0).get(0, 0);
            opt.step(&mut s, &g).unwrap();
            let delta = (s.get(0).get(0, 0) - before).abs();
            assert!(delta < last);
            last = delta;
        }
        assert!(opt.mean_sq().iter().all(|t| t.data().iter().all(|&v| v >= 0.0)));
    }
}
