use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr0: f64,
    /// Consecutive epochs without a new dev minimum before the rate is halved.
    pub patience: usize,
    /// Training stops once the rate falls below this.
    pub floor: f64,
    pub max_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr0: 0.02,
            patience: 5,
            floor: 0.002,
            max_epochs: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.patience == 0 {
            return Err(Error::config("lr_halve_patience must be at least 1"));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::config("lr_floor must be non-negative"));
        }
        Ok(())
    }
}

/// Outcome of feeding one epoch's dev monitor to the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub epoch: usize,
    /// Rate that was in force during this epoch.
    pub lr: f64,
    pub improved: bool,
    pub halved: bool,
    /// Rate for the next epoch.
    pub next_lr: f64,
    pub stop: bool,
}

/// Halve-on-plateau schedule with early stopping. Epoch 0 is the evaluation of the
/// untrained model; each later call covers one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    cfg: ScheduleConfig,
    lr: f64,
    best: f64,
    since_best: usize,
    epoch: usize,
}

impl LrSchedule {
    pub fn new(cfg: ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LrSchedule {
            lr: cfg.lr0,
            cfg,
            best: f64::INFINITY,
            since_best: 0,
            epoch: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, monitor: f64) -> ScheduleStep {
        let epoch = self.epoch;
        let lr = self.lr;
        let improved = monitor < self.best;
        let mut halved = false;
        if improved {
            self.best = monitor;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.cfg.patience {
                self.lr *= 0.5;
                self.since_best = 0;
                halved = true;
            }
        }
        self.epoch += 1;
        ScheduleStep {
            epoch,
            lr,
            improved,
            halved,
            next_lr: self.lr,
            stop: epoch >= self.cfg.max_epochs || self.lr < self.cfg.floor,
        }
    }
}
