//! Adam over a flat list of parameter matrices.

use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// Moment buffers, one pair per parameter matrix, plus the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || config.eps <= 0.0 {
            return Err(Error::Parameter(format!("invalid Adam settings {config:?}")));
        }
        let m: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Ok(Self {
            config,
            v: m.clone(),
            m,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn step<'a>(&mut self, lr: f64, params: impl IntoIterator<Item = &'a mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(dim("adam", format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut count = 0;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            p.expect_same_shape(g, "adam")?;
            let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((p, &g), m), v) in iter {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            count += 1;
        }
        if count != self.m.len() {
            return Err(dim("adam", format!("{count} parameters for {} moment buffers", self.m.len())));
        }
        Ok(())
    }
}
