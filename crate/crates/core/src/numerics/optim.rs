//! Adam with bias correction.

use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    /// First and second moment estimates, indexed by [`ParamId`].
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("Adam betas must lie in [0, 1), got {beta1}, {beta2}")));
        }
        Ok(Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() })
    }

    /// One update. Frozen parameters and parameters without a gradient are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.t += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (id, g) in grads {
            if store.is_frozen(*id) {
                continue;
            }
            let p = store.value_mut(*id);
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
            let m = self.m[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three hand-stepped updates on f(a, b) = a² + 3b, written out with
    /// scalar arithmetic independent of the tensor loop above.
    #[test]
    fn matches_hand_stepped_reference() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", Tensor::scalar(1.0)).unwrap();
        let b = store.insert("b", Tensor::scalar(-2.0)).unwrap();
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8).unwrap();

        let (mut pa, mut pb) = (1.0f64, -2.0f64);
        let (mut ma, mut va, mut mb, mut vb) = (0.0, 0.0, 0.0, 0.0);
        for t in 1..=3 {
            let grads = vec![
                (a, Tensor::scalar(2.0 * store.value(a).item())),
                (b, Tensor::scalar(3.0)),
            ];
            adam.step(&mut store, &grads).unwrap();

            let (ga, gb) = (2.0 * pa, 3.0);
            ma = 0.9 * ma + 0.1 * ga;
            va = 0.999 * va + 0.001 * ga * ga;
            mb = 0.9 * mb + 0.1 * gb;
            vb = 0.999 * vb + 0.001 * gb * gb;
            let bc1 = 1.0 - 0.9f64.powi(t);
            let bc2 = 1.0 - 0.999f64.powi(t);
            pa -= 0.1 * (ma / bc1) / ((va / bc2).sqrt() + 1e-8);
            pb -= 0.1 * (mb / bc1) / ((vb / bc2).sqrt() + 1e-8);

            assert!((store.value(a).item() - pa).abs() <= 1e-12);
            assert!((store.value(b).item() - pb).abs() <= 1e-12);
        }
        // the first step moves each coordinate by ≈ lr
        assert!((pb - (-2.0 - 0.3)).abs() < 1e-3);
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("enc.a", Tensor::scalar(1.0)).unwrap();
        store.set_frozen("enc.", true);
        let mut adam = Adam::new(0.1, 0.9, 0.999, 1e-8).unwrap();
        adam.step(&mut store, &[(a, Tensor::scalar(5.0))]).unwrap();
        assert_eq!(store.value(a).item(), 1.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::<f32>::new(0.0, 0.9, 0.999, 1e-8).is_err());
        assert!(Adam::<f32>::new(1e-3, 1.0, 0.999, 1e-8).is_err());
    }
}
