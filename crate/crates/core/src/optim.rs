//! Adam with decoupled weight decay, keyed by parameter name.
//!
//! Moment state lives per named array, so an array shared by several
//! tasks accumulates moments from every task that updates it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{TaskGrads, EMBEDDING_TABLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<String, Moments<T>>,
}

impl<T: Scalar> Default for AdamW<T> {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, state: HashMap::new() }
    }
}

/// `base * decay^epoch`.
pub fn effective_lr(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}

impl<T: Scalar> AdamW<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every `(name, param)` pair with its aligned gradient.
    ///
    /// Rows of the embedding table whose gradient is entirely zero are left
    /// untouched, including by weight decay.
    pub fn step(&mut self, params: Vec<(String, &mut Tensor<T>)>, grads: &[&Tensor<T>], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::LengthMismatch { left: params.len(), right: grads.len() });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!("gradient for {name}")));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let eps = T::of(self.eps);
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * weight_decay);
        for ((name, p), g) in params.into_iter().zip(grads) {
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![T::zero(); p.len()],
                v: vec![T::zero(); p.len()],
                step: 0,
            });
            st.step += 1;
            let c1 = T::one() - b1.powi(st.step);
            let c2 = T::one() - b2.powi(st.step);
            let row = if name == EMBEDDING_TABLE { p.cols() } else { p.len() };
            let gd = g.data();
            let pd = p.data_mut();
            for start in (0..pd.len()).step_by(row.max(1)) {
                let end = start + row;
                if name == EMBEDDING_TABLE && gd[start..end].iter().all(|x| *x == T::zero()) {
                    continue;
                }
                for i in start..end {
                    st.m[i] = b1 * st.m[i] + (T::one() - b1) * gd[i];
                    st.v[i] = b2 * st.v[i] + (T::one() - b2) * gd[i] * gd[i];
                    let m_hat = st.m[i] / c1;
                    let v_hat = st.v[i] / c2;
                    pd[i] = pd[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut TaskGrads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut opt = AdamW::new();
        for _ in 0..3 {
            opt.step(vec![("w".into(), &mut p)], &[&g], 1e-2, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut w = Tensor::from_vec(&[1], vec![3.0f64]).unwrap();
        let mut opt = AdamW::new();
        let mut prev = 3.0f64;
        for _ in 0..200 {
            let g = Tensor::from_vec(&[1], vec![2.0 * w.data()[0]]).unwrap();
            opt.step(vec![("w".into(), &mut w)], &[&g], 1e-2, 0.0).unwrap();
            let cur = w.data()[0].abs();
            assert!(cur < prev, "{cur} >= {prev}");
            prev = cur;
        }
        assert!(prev < 1.5);
    }

    #[test]
    fn decayed_learning_rate() {
        assert!((effective_lr(3e-5, 0.9, 2) - 3e-5 * 0.81).abs() < 1e-18);
        assert_eq!(effective_lr(3e-5, 0.9, 0), 3e-5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Tensor::from_vec(&[1], vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        let err = AdamW::new().step(vec![("w".into(), &mut p)], &[&g], 1e-3, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(n) if n == "w"));
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn embedding_rows_without_gradient_stay_put() {
        let mut table = Tensor::from_vec(&[3, 2], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 0.5, -0.5, 0.0, 0.0]).unwrap();
        AdamW::new().step(vec![(EMBEDDING_TABLE.into(), &mut table)], &[&g], 1e-2, 0.01).unwrap();
        assert_eq!(table.row(0), &[1.0, 2.0]);
        assert_eq!(table.row(2), &[5.0, 6.0]);
        assert_ne!(table.row(1), &[3.0, 4.0]);
    }
}
