use super::NetworkParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one [`NetworkParams`], in its order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Gradients are read, not cleared.
    pub fn step(&mut self, params: &NetworkParams) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("state tracks {} tensors, params has {}", self.m.len(), params.len()),
            ));
        }
        let grads: Vec<Vec<f32>> = params
            .iter()
            .map(|(name, p)| p.grad().ok_or_else(|| Error::MissingGradient(name.to_string())))
            .collect::<Result<_>>()?;
        for (((_, p), m), g) in params.iter().zip(&self.m).zip(&grads) {
            if m.len() != p.numel() || g.len() != p.numel() {
                return Err(Error::DataLength { len: m.len(), shape: p.shape() });
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((((_, p), m), v), g) in params.iter().zip(&mut self.m).zip(&mut self.v).zip(&grads) {
            let mut values = p.to_vec();
            for i in 0..values.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(values);
        }
        Ok(())
    }
}
