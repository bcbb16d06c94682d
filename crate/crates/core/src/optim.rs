//! Optimization machinery: adaptive-moment updates, plateau-driven learning
//! rate decay, and metric-driven early stopping.

use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state: first and second moment estimates per parameter, in the
/// parameter set's fixed order, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            t: 0,
            m,
            v,
        }
    }

    /// One update over every parameter from its accumulated gradient.
    /// Gradients are left untouched; the caller decides when to clear them.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        assert_eq!(self.m.len(), params.len(), "optimizer bound to other params");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let grad = p.grad.data();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
            }
            let value = p.value.data_mut();
            for j in 0..value.len() {
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Learning-rate decay on a validation-loss plateau: when the loss fails to
/// improve for `window` consecutive observations, multiply the rate by
/// `factor` (never below `min_lr`) and restart the wait counter.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub window: usize,
    pub min_lr: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

pub const PLATEAU_FACTOR: f64 = 0.5;
pub const PLATEAU_WINDOW: usize = 10;
pub const PLATEAU_MIN_LR: f64 = 1e-6;

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        PlateauScheduler {
            factor: PLATEAU_FACTOR,
            window: PLATEAU_WINDOW,
            min_lr: PLATEAU_MIN_LR,
            lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's validation loss; returns the rate to use next.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.window {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Outcome of one early-stop observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopSignal {
    /// The metric improved; the caller should snapshot parameters.
    pub improved: bool,
    /// `patience` observations have passed without improvement.
    pub stop: bool,
}

/// Stops training after `patience` epochs without improvement of a
/// maximized validation metric.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopSignal {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = epoch;
            self.wait = 0;
            StopSignal {
                improved: true,
                stop: false,
            }
        } else {
            self.wait += 1;
            StopSignal {
                improved: false,
                stop: self.wait >= self.patience,
            }
        }
    }
}
