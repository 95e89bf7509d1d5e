//! Speaker-independent cross-validation: fold plans, the speaker-ID probe, metrics, soft
//! voting, grid search and seed aggregation.

mod folds;
mod grid;
mod metrics;
mod protocol;
mod results;

pub use folds::{make_folds, make_probe_split, FoldPlan, FoldSplit, ProbeSplit};
pub use grid::{grid_search, select_best, GridReport, GridRow, GRID};
pub use metrics::{accuracy, aggregate_seeds, argmax, format_mean_std, multiclass_auc, roc_auc_binary, soft_vote};
pub use protocol::{
    audit_leakage, cells, evaluate_cell, fold_data, run_cell, run_pool, train_cell, vote_metrics, CellKey, CellResult,
    FoldData, ProtocolConfig, SpeakerVote,
};
pub use results::{Aggregate, ResultTable, SeedSummary, RESULT_COLUMNS};

use crate::dsp::FeatureStore;
use crate::error::Result;

/// Train and evaluate every cell, then tabulate.
pub fn run_protocol(store: &FeatureStore, cfg: &ProtocolConfig, jobs: usize) -> Result<(FoldPlan, ResultTable)> {
    cfg.validate()?;
    let plan = cfg.plan(store)?;
    let keys = cells(cfg);
    let results = run_pool(&keys, jobs, |&k| run_cell(store, &plan, k, cfg))?;
    Ok((plan, ResultTable::build(results)?))
}
