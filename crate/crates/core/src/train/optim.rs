//! Adam and SGD with Nesterov momentum.

use crate::error::{Error, Result};
use crate::kv;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdNesterov => "sgd_nesterov",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(OptimizerKind::Adam),
            "sgd_nesterov" => Some(OptimizerKind::SgdNesterov),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd_nesterov(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdNesterov,
            lr,
            momentum,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("{} must be a positive number", self.lr)));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("{b} is outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", format!("{} must be positive", self.eps)));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        [
            ("optimizer", self.kind.as_str().to_string()),
            ("lr", kv::float(self.lr)),
            ("beta1", kv::float(self.beta1)),
            ("beta2", kv::float(self.beta2)),
            ("eps", kv::float(self.eps)),
            ("momentum", kv::float(self.momentum)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "optimizer" => {
                self.kind = OptimizerKind::parse(v)
                    .ok_or_else(|| Error::config(key, format!("expected adam or sgd_nesterov, got {v:?}")))?
            }
            "lr" => self.lr = kv::parse_f64(key, v)?,
            "beta1" => self.beta1 = kv::parse_f64(key, v)?,
            "beta2" => self.beta2 = kv::parse_f64(key, v)?,
            "eps" => self.eps = kv::parse_f64(key, v)?,
            "momentum" => self.momentum = kv::parse_f64(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Bias-corrected Adam on one tensor; `t` is the 1-based step.
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &OptimizerConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// `v ← μv − lr·g; w ← w + μv − lr·g`.
pub fn nesterov_update(w: &mut [f64], g: &[f64], vel: &mut [f64], cfg: &OptimizerConfig) {
    let mu = cfg.momentum;
    for i in 0..w.len() {
        vel[i] = mu * vel[i] - cfg.lr * g[i];
        w[i] += mu * vel[i] - cfg.lr * g[i];
    }
}

/// Per-parameter slots, indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Adam first moment, or Nesterov velocity.
    pub first: Vec<Option<Tensor>>,
    /// Adam second moment.
    pub second: Vec<Option<Tensor>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            step: 0,
            first: vec![None; store.len()],
            second: vec![None; store.len()],
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], cfg: &OptimizerConfig) -> Result<()> {
        self.step += 1;
        for (id, g) in grads {
            let shape = store.get(*id).shape().to_vec();
            if g.shape() != shape.as_slice() {
                return Err(Error::dim("optimizer", "shape", format!("gradient {:?} for parameter {shape:?}", g.shape())));
            }
            let i = id.index();
            let first = self.first[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
            match cfg.kind {
                OptimizerKind::Adam => {
                    let second = self.second[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
                    adam_update(
                        store.get_mut(*id).data_mut(),
                        g.data(),
                        first.data_mut(),
                        second.data_mut(),
                        self.step,
                        cfg,
                    );
                }
                OptimizerKind::SgdNesterov => nesterov_update(store.get_mut(*id).data_mut(), g.data(), first.data_mut(), cfg),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_adam(steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
        let cfg = OptimizerConfig::default();
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        for t in 1..=steps {
            let g = [grad(w[0])];
            adam_update(&mut w, &g, &mut m, &mut v, t as u64, &cfg);
        }
        w[0]
    }

    #[test]
    fn adam_first_step() {
        let w = scalar_adam(1, |_| 1.0);
        assert!((w - (1.0 - 0.003 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_keeps_weights() {
        assert_eq!(scalar_adam(5, |_| 0.0), 1.0);
    }

    #[test]
    fn adam_quadratic() {
        let cfg = OptimizerConfig { lr: 0.01, ..OptimizerConfig::default() };
        let (mut w, mut m, mut v) = ([1.0], [0.0], [0.0]);
        for t in 1..=200 {
            let g = [2.0 * w[0]];
            adam_update(&mut w, &g, &mut m, &mut v, t, &cfg);
        }
        assert!(w[0].abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn nesterov_two_steps() {
        let cfg = OptimizerConfig::sgd_nesterov(0.1, 0.9);
        let (mut w, mut vel) = ([1.0], [0.0]);
        nesterov_update(&mut w, &[1.0], &mut vel, &cfg);
        assert!((vel[0] + 0.1).abs() < 1e-15 && (w[0] - 0.81).abs() < 1e-15);
        nesterov_update(&mut w, &[1.0], &mut vel, &cfg);
        assert!((vel[0] + 0.19).abs() < 1e-15 && (w[0] - 0.539).abs() < 1e-15);
    }

    #[test]
    fn nesterov_without_momentum_is_sgd() {
        let cfg = OptimizerConfig::sgd_nesterov(0.25, 0.0);
        let (mut w, mut vel) = ([1.0, -2.0], [0.0, 0.0]);
        nesterov_update(&mut w, &[0.5, 4.0], &mut vel, &cfg);
        assert_eq!(w, [1.0 - 0.125, -3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        OptimizerConfig::default().validate().unwrap();
    }
}
