//! Adam with a separate step counter for the memory keys.

use crate::error::{Error, Result};
use crate::model::ParamGroup;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateScope {
    /// Batch steps: keys are left untouched.
    AllButKeys,
    /// Epoch-end clustering step.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    groups: Vec<ParamGroup>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    weight_steps: u64,
    key_steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[&Tensor<T>], groups: Vec<ParamGroup>) -> Self {
        assert_eq!(params.len(), groups.len());
        Adam {
            cfg,
            groups,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            weight_steps: 0,
            key_steps: 0,
        }
    }

    pub fn steps(&self, group: ParamGroup) -> u64 {
        match group {
            ParamGroup::Keys => self.key_steps,
            ParamGroup::Weights => self.weight_steps,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], scope: UpdateScope, lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.weight_steps += 1;
        if scope == UpdateScope::All {
            self.key_steps += 1;
        }
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
        let one = T::one();
        for (idx, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let group = self.groups[idx];
            if group == ParamGroup::Keys && scope == UpdateScope::AllButKeys {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            let t = self.steps(group) as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let lr = T::lit(lr);
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_frozen_outside_full_steps() {
        let mut w: Tensor<f64> = Tensor::from_rows(&[&[1.0, 2.0]]);
        let mut k = Tensor::from_rows(&[&[3.0]]);
        let mut opt = Adam::new(AdamConfig::default(), &[&w, &k], vec![ParamGroup::Weights, ParamGroup::Keys]);
        let grads = [Tensor::from_rows(&[&[1.0, -1.0]]), Tensor::from_rows(&[&[1.0]])];
        let k0 = k.clone();
        opt.step(vec![&mut w, &mut k], &grads, UpdateScope::AllButKeys, 0.1).unwrap();
        assert_eq!(k, k0);
        // first bias-corrected step moves each entry by lr against the gradient sign
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) - 2.1).abs() < 1e-6);
        opt.step(vec![&mut w, &mut k], &grads, UpdateScope::All, 0.1).unwrap();
        assert!((k.get(0, 0) - 2.9).abs() < 1e-6);
        assert_eq!(opt.steps(ParamGroup::Weights), 2);
        assert_eq!(opt.steps(ParamGroup::Keys), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x: Tensor<f64> = Tensor::from_rows(&[&[5.0, -3.0]]);
        let mut opt = Adam::new(AdamConfig::default(), &[&x], vec![ParamGroup::Weights]);
        for _ in 0..2000 {
            let g = x.map(|v| 2.0 * v);
            opt.step(vec![&mut x], &[g], UpdateScope::All, 0.05).unwrap();
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }
}
