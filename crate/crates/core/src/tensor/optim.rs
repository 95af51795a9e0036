use serde::{Deserialize, Serialize};

use super::{numel, Shape, Tensor};
use crate::error::{Error, Result};

/// Trainable tensor plus its ADAM moment estimates.
///
/// Cloning copies the values into a fresh leaf, so a cloned network trains
/// independently of the original.
#[derive(Debug)]
pub struct Parameter {
    tensor: Tensor,
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
}

impl Clone for Parameter {
    fn clone(&self) -> Self {
        Self {
            tensor: Tensor::leaf(self.tensor.shape(), self.tensor.to_vec()),
            m: self.m.clone(),
            v: self.v.clone(),
            step: self.step,
        }
    }
}

impl Parameter {
    pub fn new(shape: Shape, data: Vec<f32>) -> Self {
        let n = numel(shape);
        Self {
            tensor: Tensor::leaf(shape, data),
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn values(&self) -> Vec<f32> {
        self.tensor.to_vec()
    }

    pub fn set_values(&self, values: &[f32]) -> Result<()> {
        let mut d = self.tensor.data_mut();
        if d.len() != values.len() {
            return Err(Error::Shape(format!(
                "cannot load {} values into parameter of shape {:?}",
                values.len(),
                self.tensor.shape()
            )));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f32], &[f32]) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: Vec<f32>, v: Vec<f32>, step: u64) -> Result<()> {
        if m.len() != self.numel() || v.len() != self.numel() {
            return Err(Error::Shape(format!(
                "moment lengths {}/{} do not match parameter of shape {:?}",
                m.len(),
                v.len(),
                self.shape()
            )));
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }

    pub fn reset_moments(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected ADAM update over `params`, then clear their grads.
///
/// Fails without touching anything if a parameter has no gradient.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Parameter>,
    cfg: &AdamConfig,
) -> Result<()> {
    let params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::State(format!(
            "parameter #{i} (shape {:?}) has no gradient",
            params[i].shape()
        )));
    }
    let (b1, b2) = (f64::from(cfg.beta1), f64::from(cfg.beta2));
    for p in params {
        let g = p.grad().expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let c1 = (1.0 - b1.powi(t)) as f32;
        let c2 = (1.0 - b2.powi(t)) as f32;
        let mut w = p.tensor.data_mut();
        for i in 0..g.len() {
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = p.m[i] / c1;
            let vh = p.v[i] / c2;
            w[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        drop(w);
        p.zero_grad();
    }
    Ok(())
}
