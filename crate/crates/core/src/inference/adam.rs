//! Adam with bias correction, used for gradient *ascent*.

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state. Moment vectors are indexed like the stacked parameter
/// vector `[prior | control | diffusion]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            steps: 0,
        }
    }

    /// One ascent step `params += lr * m_hat / (sqrt(v_hat) + eps)`; `lr(i)` is
    /// the learning rate of coordinate `i`.
    pub fn ascend(&mut self, params: &mut [T], grad: &[T], lr: impl Fn(usize) -> T) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.eps);
        let c1 = T::one() - b1.powi(self.steps as i32);
        let c2 = T::one() - b2.powi(self.steps as i32);
        for (i, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p + lr(i) * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
