use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update on a flat parameter slice with bias correction at step
/// `t` (1-based).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    /// Current learning rate; starts at `cfg.lr`, lowered by the scheduler.
    pub lr: f64,
    pub t: u64,
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
}

impl AdamState {
    pub fn new(model: &MlpModel, cfg: AdamConfig) -> Self {
        let sizes = [model.w1.len(), model.b1.len(), model.w2.len(), model.b2.len()];
        Self {
            cfg,
            lr: cfg.lr,
            t: 0,
            m: sizes.map(|n| vec![0.0; n]),
            v: sizes.map(|n| vec![0.0; n]),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let (t, lr, cfg) = (self.t, self.lr, self.cfg);
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            adam_update(p, g, m, v, t, lr, &cfg);
        }
    }
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
    pub best: f64,
    pub wait: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_delta: f64, min_lr: f64) -> Self {
        Self { factor, patience, min_delta, min_lr, best: f64::INFINITY, wait: 0 }
    }

    /// Feeds one validation loss and returns the (possibly reduced) rate.
    /// After more than `patience` consecutive non-improving values the rate
    /// is multiplied by `factor`, floored at `min_lr`, and the counter resets.
    pub fn step(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait > self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr).min(lr);
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops after `patience` consecutive non-improving validations and keeps a
/// copy of the best model seen.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub wait: usize,
    pub best_step: usize,
    best_snapshot: Option<MlpModel>,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, wait: 0, best_step: 0, best_snapshot: None }
    }

    pub fn check(&mut self, step: usize, val_loss: f64, model: &MlpModel) -> StopDecision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
            self.best_step = step;
            match &mut self.best_snapshot {
                Some(snap) => snap.clone_from(model),
                None => self.best_snapshot = Some(model.clone()),
            }
            return StopDecision::Continue;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_snapshot(&self) -> Option<&MlpModel> {
        self.best_snapshot.as_ref()
    }

    pub fn into_best(self) -> Option<MlpModel> {
        self.best_snapshot
    }
}
