use crate::error::{shape_err, Result};
use crate::numcore::graph::ParamSet;
use crate::numcore::tensor::Tensor;
use crate::scalar::Scalar;

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
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(shape_err!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
                return Err(shape_err!("adam: shape mismatch for {}", p.name));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let pd = p.value.data_mut();
            for (((w, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::{gaussian, Rng};

    fn one_param(x: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(x));
        ps
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let c = AdamConfig::default();
        assert_eq!((c.beta1, c.beta2, c.lr), (0.5, 0.999, 1e-4));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = one_param(1.5);
        let mut opt = AdamState::new(AdamConfig::default(), &ps);
        for _ in 0..5 {
            opt.step(&mut ps, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(ps.get(crate::numcore::ParamId(0)).item().unwrap(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.25] {
            let mut ps = one_param(0.0);
            let mut opt = AdamState::new(AdamConfig::default(), &ps);
            opt.step(&mut ps, &[Tensor::scalar(g)]).unwrap();
            let w = ps.get(crate::numcore::ParamId(0)).item().unwrap();
            assert!((w + 1e-4 * g.signum()).abs() < 1e-11, "{w}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ps = one_param(0.0);
        let mut opt = AdamState::new(AdamConfig::default(), &ps);
        assert!(opt.step(&mut ps, &[Tensor::zeros([2]).unwrap()]).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = Rng::new(5, 0);
            let mut ps = ParamSet::new();
            ps.add("a", gaussian::<f64>(&mut rng, [3, 4]));
            let mut opt = AdamState::new(AdamConfig::default(), &ps);
            for _ in 0..100 {
                let g = vec![gaussian(&mut rng, [3, 4])];
                opt.step(&mut ps, &g).unwrap();
            }
            ps
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }
}
