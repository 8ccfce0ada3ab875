//! Adam with decoupled weight decay.

use crate::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: step counter plus first and second moments, one pair per
/// parameter tensor in the order they are passed to [`Adam::step`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over `(param, grad)` pairs. Every shape is validated before
    /// anything is mutated.
    ///
    /// The decay is applied to the parameter directly (`p -= lr * wd * p`),
    /// then the bias-corrected Adam update is subtracted.
    pub fn step<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a mut Tensor<T>, &'a Tensor<T>)>,
    ) -> Result<()> {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        for (p, g) in &pairs {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = pairs
                .iter()
                .map(|(p, _)| Tensor::zeros(p.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != pairs.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.m.len()],
                actual: vec![pairs.len()],
            });
        }
        for ((p, _), m) in pairs.iter().zip(&self.m) {
            if p.shape() != m.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: m.shape().to_vec(),
                    actual: p.shape().to_vec(),
                });
            }
        }

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr = T::of(c.lr);
        let decay = T::of(c.lr * c.weight_decay);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let eps = T::of(c.eps);

        for (((p, g), m), v) in pairs.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let pd = p.data_mut();
            for (((pi, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= decay * *pi;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut adam = Adam::new(cfg(0.1, 0.0));
        let mut p = Tensor::new([3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros([3]);
        for _ in 0..5 {
            adam.step([(&mut p, &g)]).unwrap();
        }
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let mut adam = Adam::new(cfg(0.1, 0.0));
        let mut p = Tensor::scalar(1.0f64);
        adam.step([(&mut p, &Tensor::scalar(1.0))]).unwrap();
        let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.item() - want).abs() < 1e-15);
        assert!((p.item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_wd() {
        let mut adam = Adam::new(cfg(0.1, 0.01));
        let mut p = Tensor::scalar(2.0f64);
        adam.step([(&mut p, &Tensor::scalar(0.0))]).unwrap();
        assert!((p.item() - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_leaves_params_untouched() {
        let mut adam = Adam::new(cfg(0.1, 0.0));
        let mut p = Tensor::zeros([2]);
        let g = Tensor::<f32>::zeros([3]);
        assert!(matches!(
            adam.step([(&mut p, &g)]),
            Err(NnError::ShapeMismatch { .. })
        ));
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn identical_inputs_give_bit_identical_outputs() {
        let run = || {
            let mut adam = Adam::new(AdamConfig::default());
            let mut p = Tensor::new([4], vec![0.3f32, -0.1, 0.7, 1.2]).unwrap();
            for k in 0..10 {
                let g = Tensor::from_fn([4], |i| ((i + k) as f32 * 0.37).sin());
                adam.step([(&mut p, &g)]).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
