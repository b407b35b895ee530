//! Controller for the output-distillation weight λ_OD.
//!
//! Each batch records `L_curr / (λ_j · L_OD)` with the λ in effect for that
//! batch. Every `I` batches the window mean `ρ` is compared with the
//! target and λ moves by `sgn(ρ − ρ*)·I/S`, clamped to `[0, λ_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distillation losses at or below this record a neutral ratio.
pub const LOSS_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// When false λ stays at `lambda_init` for the whole run.
    pub enabled: bool,
    pub rho_target: f64,
    pub interval: usize,
    pub scale: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rho_target: 0.45,
            interval: 4,
            scale: 10.0,
            lambda_init: 1.0,
            lambda_max: 100.0,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_target > 0.0 && self.rho_target.is_finite()) {
            return Err(Error::Config(format!("rho_target must be positive, got {}", self.rho_target)));
        }
        if self.interval == 0 {
            return Err(Error::Config("adaptive interval must be at least 1".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("adaptive scale must be positive, got {}", self.scale)));
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::Config(format!("lambda_max must be non-negative, got {}", self.lambda_max)));
        }
        if !(0.0..=self.lambda_max).contains(&self.lambda_init) {
            return Err(Error::Config(format!(
                "lambda_init {} outside [0, {}]",
                self.lambda_init, self.lambda_max
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.interval as f64 / self.scale
    }
}

/// One completed window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefUpdate {
    pub batch: u64,
    pub rho: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveCoefState {
    config: AdaptiveConfig,
    lambda: f64,
    window: Vec<f64>,
    batch_counter: u64,
}

impl AdaptiveCoefState {
    pub fn new(config: AdaptiveConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lambda: config.lambda_init,
            window: Vec::with_capacity(config.interval),
            batch_counter: 0,
            config,
        })
    }

    /// Restores a state with a given λ and an empty window.
    pub fn with_lambda(config: AdaptiveConfig, lambda: f64) -> Result<Self> {
        let mut s = Self::new(config)?;
        if !(0.0..=s.config.lambda_max).contains(&lambda) {
            return Err(Error::Range(format!("λ {lambda} outside [0, {}]", s.config.lambda_max)));
        }
        s.lambda = lambda;
        Ok(s)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn batch_counter(&self) -> u64 {
        self.batch_counter
    }

    /// Appends this batch's loss ratio.
    pub fn record_batch(&mut self, l_curr: f64, l_od: f64) {
        let ratio = if l_od <= LOSS_EPSILON || self.lambda == 0.0 || !l_curr.is_finite() || !l_od.is_finite() {
            self.config.rho_target
        } else {
            l_curr / (self.lambda * l_od)
        };
        self.window.push(ratio);
        self.batch_counter += 1;
    }

    /// Applies the update rule when a window is complete.
    pub fn maybe_update(&mut self) -> Option<CoefUpdate> {
        if self.batch_counter == 0 || self.batch_counter % self.config.interval as u64 != 0 || self.window.is_empty() {
            return None;
        }
        let rho = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.window.clear();
        if self.config.enabled {
            let sign = if rho > self.config.rho_target {
                1.0
            } else if rho < self.config.rho_target {
                -1.0
            } else {
                0.0
            };
            self.lambda = (self.lambda + sign * self.config.step()).clamp(0.0, self.config.lambda_max);
        }
        Some(CoefUpdate {
            batch: self.batch_counter,
            rho,
            lambda: self.lambda,
        })
    }

    /// Starts a new task: λ carries over, the ratio window and counter reset.
    pub fn start_task(&mut self) {
        self.window.clear();
        self.batch_counter = 0;
    }
}

/// λ after each batch of `trace` (`(L_curr, L_OD)` pairs) starting from a
/// fresh state.
pub fn simulate(trace: &[(f64, f64)], config: &AdaptiveConfig) -> Result<Vec<f64>> {
    let mut s = AdaptiveCoefState::new(config.clone())?;
    Ok(trace
        .iter()
        .map(|&(c, od)| {
            s.record_batch(c, od);
            s.maybe_update();
            s.lambda()
        })
        .collect())
}
