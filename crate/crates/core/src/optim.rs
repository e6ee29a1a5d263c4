//! First-order optimizers over flat parameter vectors.

use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

fn check_shapes(params: &[f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::Shape {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i} is {}",
            grad[i]
        )));
    }
    Ok(())
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    /// One Adam update in place. With `maximize` the step follows `grad`
    /// instead of `-grad`. Parameters at `-inf` (masked logits) stay put as
    /// long as their gradient is zero.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], maximize: bool) -> Result<()> {
        check_shapes(params, grad)?;
        if self.m.len() != params.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = if maximize { -1.0 } else { 1.0 };
        for i in 0..params.len() {
            let g = sign * grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let delta = self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
            if delta != 0.0 {
                params[i] -= delta;
            }
        }
        Ok(())
    }
}

/// `params ± lr · grad`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64, maximize: bool) -> Result<()> {
    check_shapes(params, grad)?;
    let s = if maximize { lr } else { -lr };
    for (p, g) in params.iter_mut().zip(grad) {
        if *g != 0.0 {
            *p += s * g;
        }
    }
    Ok(())
}
