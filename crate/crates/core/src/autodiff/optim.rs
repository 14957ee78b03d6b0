use super::params::ParamStore;
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily, one per
/// parameter in store order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers of parameter `index`, if it has been updated.
    pub fn moments(&self, index: usize) -> Option<(&[T], &[T])> {
        match (self.m.get(index)?, self.v.get(index)?) {
            (Some(m), Some(v)) => Some((m, v)),
            _ => None,
        }
    }

    /// Apply one update to every trainable parameter. Frozen parameters are
    /// skipped entirely.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad() && t.grad().is_none()) {
            return Err(Error::Contract(format!("trainable parameter `{name}` has no gradient")));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - beta1.powi(t));
        let bc2 = T::of(1.0 - beta2.powi(t));
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (lr, eps) = (T::of(lr), T::of(eps));
        self.m.resize(params.len(), None);
        self.v.resize(params.len(), None);

        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let n = p.numel();
            let m = self.m[i].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[i].get_or_insert_with(|| vec![T::zero(); n]);
            let grad = p.grad().expect("checked above").to_vec();
            let data = Tensor::data_mut(p);
            for j in 0..n {
                let g = grad[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        s.zero_grad();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps)
        let mut s = store(&[0.0]);
        s.by_name_mut("w").unwrap().accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut s).unwrap();
        let delta = s.by_name("w").unwrap().data()[0];
        assert!((delta - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut s = store(&[3.0]);
        s.by_name_mut("w").unwrap().accumulate_grad(&[5.0]);
        s.by_name_mut("w").unwrap().set_requires_grad(false);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[3.0]);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut s = store(&[3.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn step_counter_increments_and_moments_match_shape() {
        let mut s = store(&[1.0, 2.0, 3.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        for k in 1..=3 {
            s.zero_grad();
            s.by_name_mut("w").unwrap().accumulate_grad(&[0.1, 0.2, 0.3]);
            adam.step(&mut s).unwrap();
            assert_eq!(adam.step_count(), k);
        }
        let (m, v) = adam.moments(0).unwrap();
        assert_eq!((m.len(), v.len()), (3, 3));
    }
}
