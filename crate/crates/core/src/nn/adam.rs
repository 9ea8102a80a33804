use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Default moment decay rates and epsilon.
    pub fn new(lr: f64) -> Self {
        Self::with_hyper(lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyper(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of `params` against `grads` (same order and lengths).
    ///
    /// A non-finite gradient aborts the step before any parameter moves.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!(
                    "gradient of length {} for a parameter of length {}",
                    g.len(),
                    p.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    iteration: self.t,
                    reason: "non-finite gradient".into(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() {
            return Err(Error::Dimension("parameter set changed between steps".into()));
        }

        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
