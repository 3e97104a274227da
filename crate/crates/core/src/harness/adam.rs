use crate::error::{config_err, shape_err, Result};
use crate::network::ParameterSet;

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

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return config_err("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return config_err("Adam eps must be positive");
        }
        Ok(())
    }
}

impl std::fmt::Display for AdamConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "adam(lr={}, betas=({}, {}), eps={})",
            self.lr, self.beta1, self.beta2, self.eps
        )
    }
}

/// Adam with bias correction; moments are kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterSet) -> Self {
        let zeros = |p: &ParameterSet| p.tensors().iter().map(|(_, t)| vec![0.0f32; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return shape_err("gradient set does not match optimizer state");
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let correction1 = 1.0 - c.beta1.powi(self.step as i32);
        let correction2 = 1.0 - c.beta2.powi(self.step as i32);
        // lr·m̂/(√v̂ + eps) with both corrections folded into the step size.
        let step_size = (c.lr * correction2.sqrt() / correction1) as f32;
        let eps = (c.eps * correction2.sqrt()) as f32;
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.len() != g.len() {
                return shape_err("gradient tensor size mismatch");
            }
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}
