//! PID feedback on the Gumbel-Softmax temperature.
//!
//! `tau_{t+1} = tau_t + kp·e_t + ki·Σ_{i≤t} e_i + kd·(e_t − e_{t−1})`, then
//! clamped to `[tau_min, tau_max]`. A positive error raises the
//! temperature, which softens the selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 0.05,
            ki: 0.001,
            kd: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub tau0: f64,
    pub gains: PidGains,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            tau0: 1.0,
            gains: PidGains::default(),
            tau_min: 0.1,
            tau_max: 5.0,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return Err(Error::Config(format!(
                "temperature bounds must satisfy 0 < tau_min <= tau_max, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::Config(format!("tau0 must be positive, got {}", self.tau0)));
        }
        let g = self.gains;
        if ![g.kp, g.ki, g.kd].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("PID gains must be finite".into()));
        }
        Ok(())
    }
}

/// One controller step for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidStep {
    pub t: usize,
    pub error: f64,
    /// Temperature after the update, before clamping.
    pub tau_unclamped: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub config: PidConfig,
    pub tau: f64,
    pub error_integral: f64,
    pub prev_error: f64,
    pub history: Vec<PidStep>,
}

impl PidState {
    pub fn new(config: PidConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tau: config.tau0.clamp(config.tau_min, config.tau_max),
            config,
            error_integral: 0.0,
            prev_error: 0.0,
            history: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        *self = Self {
            tau: self.config.tau0.clamp(self.config.tau_min, self.config.tau_max),
            config: self.config,
            error_integral: 0.0,
            prev_error: 0.0,
            history: Vec::new(),
        };
    }

    /// Applies one update with error `e` and returns the new temperature.
    pub fn update_tau(&mut self, e: f64) -> Result<f64> {
        if !e.is_finite() {
            return Err(Error::Numerical(format!("controller error signal is {e}")));
        }
        let PidGains { kp, ki, kd } = self.config.gains;
        self.error_integral += e;
        let raw = self.tau + kp * e + ki * self.error_integral + kd * (e - self.prev_error);
        self.prev_error = e;
        self.tau = raw.clamp(self.config.tau_min, self.config.tau_max);
        self.history.push(PidStep {
            t: self.history.len(),
            error: e,
            tau_unclamped: raw,
            tau: self.tau,
        });
        Ok(self.tau)
    }
}

/// Controller input: prediction error plus alignment error.
pub fn error_signal(pred_loss: f64, align_loss: f64) -> f64 {
    pred_loss + align_loss
}
