//! Training regimes (baseline, adversarial, discriminative, fusion), the shared learning-rate
//! schedule and the downstream classifier trained on frozen bottlenecks.

mod downstream;
mod rundir;
mod schedule;
mod steps;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use downstream::{train_classifier, Classifier, ClassifierConfig, ClassifierOutcome};
pub use rundir::{metrics_csv, write_run, BEST_CHECKPOINT, CONFIG_FILE, FINAL_CHECKPOINT, METRICS_FILE};
pub use schedule::{LrSchedule, ScheduleConfig, ScheduleStep};
pub use steps::{adversary_step, evaluate, supervised_step, DevLosses, Item, StepLosses};
pub use trainer::{build_network, train, train_epoch, EpochReport, StreamState, TrainData, TrainOutcome};

use crate::error::{Error, Result};
use crate::models::EncoderSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Baseline,
    Adversarial,
    Discriminative,
    Fusion,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Baseline,
        Regime::Adversarial,
        Regime::Discriminative,
        Regime::Fusion,
    ];

    /// Trains against a speaker-ID adversary.
    pub fn adversarial(self) -> bool {
        matches!(self, Regime::Adversarial | Regime::Fusion)
    }

    /// Trains a PD head through the encoder.
    pub fn supervised(self) -> bool {
        matches!(self, Regime::Discriminative | Regime::Fusion)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Baseline => "baseline",
            Regime::Adversarial => "adversarial",
            Regime::Discriminative => "discriminative",
            Regime::Fusion => "fusion",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Regime::Baseline),
            "adversarial" => Ok(Regime::Adversarial),
            "discriminative" => Ok(Regime::Discriminative),
            "fusion" => Ok(Regime::Fusion),
            other => Err(Error::config(format!(
                "unknown regime `{other}` (expected baseline, adversarial, discriminative or fusion)"
            ))),
        }
    }
}

/// Hyper-parameters of one auto-encoder training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lambda: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halve_patience: usize,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Chunks per forward pass when evaluating.
    pub eval_batch: usize,
    pub model: EncoderSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Baseline,
            lambda: 0.01,
            alpha: 0.01,
            batch_size: 128,
            lr0: 0.02,
            lr_halve_patience: 5,
            lr_floor: 0.002,
            max_epochs: 100,
            seed: 0,
            eval_batch: 64,
            model: EncoderSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.regime == Regime::Fusion && self.alpha + self.lambda >= 1.0 {
            return Err(Error::config(format!(
                "fusion needs alpha + lambda < 1, got {} + {}",
                self.alpha, self.lambda
            )));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        self.schedule().validate()?;
        self.model.validate()
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr0: self.lr0,
            patience: self.lr_halve_patience,
            floor: self.lr_floor,
            max_epochs: self.max_epochs,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::for_regime(self.regime, self.lambda, self.alpha)
    }
}

/// Coefficients of `E = w_ae L_ae + w_id L_id + w_pc L_pc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ae: f64,
    pub id: f64,
    pub pc: f64,
}

impl LossWeights {
    pub fn for_regime(regime: Regime, lambda: f64, alpha: f64) -> Self {
        match regime {
            Regime::Baseline => LossWeights { ae: 1.0, id: 0.0, pc: 0.0 },
            Regime::Adversarial => LossWeights { ae: 1.0 - lambda, id: -lambda, pc: 0.0 },
            Regime::Discriminative => LossWeights { ae: 1.0 - alpha, id: 0.0, pc: alpha },
            Regime::Fusion => LossWeights {
                ae: 1.0 - alpha - lambda,
                id: -lambda,
                pc: alpha,
            },
        }
    }

    /// The dev monitor: the objective without the adversarial term.
    pub fn monitor(&self) -> LossWeights {
        LossWeights { id: 0.0, ..*self }
    }
}

/// Raw loss components of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub ae: f64,
    pub id: Option<f64>,
    pub pc: Option<f64>,
}

/// The regime's objective from its components. A component the regime needs but the batch
/// lacks is a configuration error.
pub fn composite_loss(w: &LossWeights, c: &Components) -> Result<f64> {
    let mut e = w.ae * c.ae;
    for (weight, value, name) in [(w.id, c.id, "speaker-ID"), (w.pc, c.pc, "PD")] {
        match value {
            Some(v) => e += weight * v,
            None if weight != 0.0 => {
                return Err(Error::config(format!("regime needs {name} labels but the batch has none")))
            }
            None => {}
        }
    }
    Ok(e)
}
