use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{aggregate_seeds, format_mean_std, vote_metrics, CellResult};
use crate::error::{Error, Result};
use crate::training::Regime;

pub const RESULT_COLUMNS: [&str; 7] = ["regime", "fold", "seed", "pd_acc", "pd_auc", "probe_acc", "probe_auc"];

/// Speaker votes pooled over the folds of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub regime: Regime,
    pub seed: usize,
    pub pd_acc: f64,
    pub pd_auc: Option<f64>,
    /// Mean over folds.
    pub probe_acc: f64,
    pub probe_auc: f64,
}

/// Mean and population std over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub regime: Regime,
    pub seeds: usize,
    pub pd_acc: (f64, f64),
    pub pd_auc: Option<(f64, f64)>,
    pub probe_acc: (f64, f64),
    pub probe_auc: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub cells: Vec<CellResult>,
    pub seeds: Vec<SeedSummary>,
    pub aggregates: Vec<Aggregate>,
}

impl ResultTable {
    /// Pool and aggregate a complete set of cells; every regime must have the same folds
    /// for every seed.
    pub fn build(mut cells: Vec<CellResult>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::input("no cells to tabulate"));
        }
        cells.sort_by_key(|c| c.key);
        let mut by_seed: BTreeMap<(Regime, usize), Vec<&CellResult>> = BTreeMap::new();
        for c in &cells {
            by_seed.entry((c.key.regime, c.key.seed)).or_default().push(c);
        }
        let mut seeds = Vec::new();
        for ((regime, seed), group) in &by_seed {
            let votes: Vec<_> = group.iter().flat_map(|c| c.test_votes.iter().cloned()).collect();
            let (pd_acc, pd_auc) = vote_metrics(&votes)?;
            let n = group.len() as f64;
            seeds.push(SeedSummary {
                regime: *regime,
                seed: *seed,
                pd_acc,
                pd_auc,
                probe_acc: group.iter().map(|c| c.probe_acc).sum::<f64>() / n,
                probe_auc: group.iter().map(|c| c.probe_auc).sum::<f64>() / n,
            });
        }
        let mut aggregates = Vec::new();
        let regimes: Vec<Regime> = {
            let mut r: Vec<Regime> = seeds.iter().map(|s| s.regime).collect();
            r.dedup();
            r
        };
        for regime in regimes {
            let rows: Vec<&SeedSummary> = seeds.iter().filter(|s| s.regime == regime).collect();
            let col = |f: &dyn Fn(&SeedSummary) -> f64| aggregate_seeds(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let aucs: Option<Vec<f64>> = rows.iter().map(|r| r.pd_auc).collect();
            aggregates.push(Aggregate {
                regime,
                seeds: rows.len(),
                pd_acc: col(&|r| r.pd_acc)?,
                pd_auc: aucs.map(|a| aggregate_seeds(&a)).transpose()?,
                probe_acc: col(&|r| r.probe_acc)?,
                probe_auc: col(&|r| r.probe_auc)?,
            });
        }
        Ok(ResultTable { cells, seeds, aggregates })
    }

    pub fn aggregate(&self, regime: Regime) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.regime == regime)
    }

    /// Delimited results: one row per cell, one pooled row per (regime, seed), then one
    /// `mean ± std` row per regime.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.4}"));
        let mut out = RESULT_COLUMNS.join(",");
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.4},{},{:.4},{:.4}\n",
                c.key.regime,
                c.key.fold,
                c.key.seed,
                c.pd_acc,
                opt(c.pd_auc),
                c.probe_acc,
                c.probe_auc
            ));
        }
        for s in &self.seeds {
            out.push_str(&format!(
                "{},all,{},{:.4},{},{:.4},{:.4}\n",
                s.regime,
                s.seed,
                s.pd_acc,
                opt(s.pd_auc),
                s.probe_acc,
                s.probe_auc
            ));
        }
        for a in &self.aggregates {
            let ms = |(m, s): (f64, f64)| format_mean_std(m, s);
            out.push_str(&format!(
                "{},all,all,{},{},{},{}\n",
                a.regime,
                ms(a.pd_acc),
                a.pd_auc.map_or_else(|| "nan".to_string(), ms),
                ms(a.probe_acc),
                ms(a.probe_auc)
            ));
        }
        out
    }
}
