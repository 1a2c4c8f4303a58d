use serde::{Deserialize, Serialize};

use crate::autodiff::{ModelParams, Real, Tensor};
use crate::error::{dim_err, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates mirroring a [`ModelParams`], entry for entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = params.iter().map(|(_, e)| Tensor::zeros(e.value.shape())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update of every trainable entry.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &[Tensor<T>]) -> Result<()> {
        params.check_aligned(grads)?;
        if self.m.len() != grads.len() {
            return Err(dim_err!("optimizer state tracks {} tensors, got {}", self.m.len(), grads.len()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let bias1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.epsilon);
        let one = T::one();
        for (((_, entry), g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !entry.trainable {
                continue;
            }
            let p = entry.value.data_mut();
            for (((pv, &gv), mv), vv) in
                p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(values: &[f64]) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap(), true).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params(&[1.0, -2.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        for g in [1e-3, 0.5, -7.0, 1e4] {
            let mut p = params(&[0.0]);
            let mut st = AdamState::new(&p, cfg);
            st.step(&mut p, &[Tensor::new(vec![1], vec![g]).unwrap()]).unwrap();
            let expected = -cfg.lr * g / (g.abs() + cfg.epsilon);
            let got = p.get("w").unwrap().item();
            assert!((got - expected).abs() < 1e-12, "g={g}: {got} vs {expected}");
            assert!((got.abs() - cfg.lr).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = params(&[3.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut last = 3.0;
        for _ in 0..200 {
            st.step(&mut p, &[Tensor::new(vec![1], vec![0.25]).unwrap()]).unwrap();
            let now = p.get("w").unwrap().item();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn frozen_entries_are_skipped_and_shapes_checked() {
        let mut p = params(&[1.0]);
        p.set_trainable("w", false).unwrap();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &[Tensor::full(&[1], 1.0)]).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
        assert!(st.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
    }
}
