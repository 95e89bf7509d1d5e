use serde::{Deserialize, Serialize};

use super::{cells, run_cell, run_pool, FoldPlan, ProtocolConfig};
use crate::dsp::FeatureStore;
use crate::error::{Error, Result};
use crate::training::Regime;

/// Candidate values for the trade-off weights.
pub const GRID: [f64; 4] = [0.01, 0.03, 0.05, 0.07];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub value: f64,
    /// Speaker-level dev-fold PD accuracy, mean over folds and seeds.
    pub dev_pd_acc: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub regime: Regime,
    pub parameter: String,
    pub rows: Vec<GridRow>,
    pub best: f64,
    /// Another value reached the same score; the smaller one was kept.
    pub tie: bool,
}

/// Highest score wins; equal scores go to the smaller value.
pub fn select_best(rows: &[GridRow]) -> Result<(f64, bool)> {
    let mut sorted: Vec<&GridRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    let first = sorted.first().ok_or_else(|| Error::config("empty grid"))?;
    let mut best = *first;
    let mut tie = false;
    for r in &sorted[1..] {
        if r.dev_pd_acc > best.dev_pd_acc {
            best = r;
            tie = false;
        } else if r.dev_pd_acc == best.dev_pd_acc {
            tie = true;
        }
    }
    Ok((best.value, tie))
}

/// Search lambda (adversarial) or alpha (discriminative) over `grid` by mean dev accuracy.
pub fn grid_search(
    store: &FeatureStore,
    plan: &FoldPlan,
    regime: Regime,
    grid: &[f64],
    cfg: &ProtocolConfig,
    jobs: usize,
) -> Result<GridReport> {
    let parameter = match regime {
        Regime::Adversarial => "lambda",
        Regime::Discriminative => "alpha",
        Regime::Fusion => {
            return Err(Error::config(
                "fusion is not grid-searched: it reuses the lambda and alpha selected for the single-task regimes",
            ))
        }
        Regime::Baseline => return Err(Error::config("baseline has no trade-off parameter to search")),
    };
    let mut rows = Vec::new();
    for &value in grid {
        let mut c = cfg.clone();
        c.regimes = vec![regime];
        match regime {
            Regime::Adversarial => c.train.lambda = value,
            _ => c.train.alpha = value,
        }
        c.validate()?;
        let keys = cells(&c);
        let results = run_pool(&keys, jobs, |&k| run_cell(store, plan, k, &c))?;
        let mean = results.iter().map(|r| r.dev_pd_acc).sum::<f64>() / results.len() as f64;
        log::info!("{regime} {parameter}={value}: dev PD accuracy {mean:.2}");
        rows.push(GridRow {
            value,
            dev_pd_acc: mean,
            cells: results.len(),
        });
    }
    let (best, tie) = select_best(&rows)?;
    Ok(GridReport {
        regime,
        parameter: parameter.into(),
        rows,
        best,
        tie,
    })
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},dev_pd_acc,cells,selected\n", self.parameter);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{},{}\n",
                r.value,
                r.dev_pd_acc,
                r.cells,
                if r.value == self.best { "yes" } else { "" }
            ));
        }
        if self.tie {
            out.push_str("# tie on dev accuracy; the smaller value was selected\n");
        }
        out
    }
}
