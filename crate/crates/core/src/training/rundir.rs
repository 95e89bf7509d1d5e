use std::fs;
use std::path::Path;

use super::{EpochReport, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8}")).unwrap_or_default()
}

/// Per-epoch log as delimited text.
pub fn metrics_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from("epoch,l_ae,l_id,l_pc,e,dev_monitor,lr\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{:.8},{}\n",
            r.epoch,
            cell(r.l_ae),
            cell(r.l_id),
            cell(r.l_pc),
            cell(r.e),
            r.dev_monitor,
            r.lr
        ));
    }
    out
}

/// Config snapshot, epoch log and best/final checkpoints of a finished run.
pub fn write_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = serde_json::to_string_pretty(cfg).expect("config serialises");
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(METRICS_FILE);
    fs::write(&path, metrics_csv(&outcome.reports)).map_err(|e| Error::io(&path, e))?;
    let last = outcome.reports.last().map_or(0, |r| r.epoch);
    let state = |epoch: usize| {
        serde_json::json!({ "regime": cfg.regime, "epoch": epoch, "best_epoch": outcome.best_epoch, "last_epoch": last })
            .to_string()
    };
    outcome
        .best
        .to_checkpoint(state(outcome.best_epoch))?
        .save(&dir.join(BEST_CHECKPOINT))?;
    outcome.last.to_checkpoint(state(last))?.save(&dir.join(FINAL_CHECKPOINT))
}
