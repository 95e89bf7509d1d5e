//! Command-line entry point: corpus generation, featurisation, training, evaluation, grid
//! search and the gradient-check suite.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{featurize, FeatureStore, FeaturizeConfig};
use crate::error::{Error, Result};
use crate::evaluation::{cells, evaluate_cell, grid_search, run_pool, train_cell, CellKey, FoldPlan, ProtocolConfig, ResultTable, GRID};
use crate::gradsuite::{gradcheck_suite, TOLERANCE};
use crate::models::Network;
use crate::numerics::Checkpoint;
use crate::synth::{generate_corpus, SynthSpec};
use crate::training::{write_run, Regime, BEST_CHECKPOINT};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const PLAN_FILE: &str = "plan.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const GRID_FILE: &str = "grid.csv";

/// Everything a config file may set. Command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthSpec,
    pub featurize: FeaturizeConfig,
    pub protocol: ProtocolConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))
    }

    /// SHA-256 over the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Parser)]
#[command(name = "advrep", version, about = "Auto-encoder representations for pathological speech classification")]
pub struct Cli {
    /// TOML file with [synth], [featurize] and [protocol] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ProtocolFlags {
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a WAV manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a manifest of WAVs into a feature store.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip unreadable files instead of failing.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Train the auto-encoder of every (regime, fold, seed) cell.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train a single fold.
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        protocol: ProtocolFlags,
    },
    /// Evaluate trained cells and write the results table.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        protocol: ProtocolFlags,
    },
    /// Select lambda (adversarial) or alpha (discriminative) by dev PD accuracy.
    Gridsearch {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        protocol: ProtocolFlags,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Featurize { .. } => "featurize",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Gridsearch { .. } => "gridsearch",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

/// Resolve the effective configuration from the file and flags.
pub fn resolve(cli: &Cli) -> Result<FileConfig> {
    let mut cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.protocol.master_seed = seed;
    }
    let flags = match &cli.command {
        Command::Train { protocol, .. } | Command::Evaluate { protocol, .. } | Command::Gridsearch { protocol, .. } => {
            Some(protocol)
        }
        _ => None,
    };
    if let Some(f) = flags {
        let p = &mut cfg.protocol;
        if let Some(r) = f.regime {
            p.regimes = vec![r];
        }
        if let Some(a) = f.alpha {
            p.train.alpha = a;
        }
        if let Some(l) = f.lambda {
            p.train.lambda = l;
        }
        if let Some(k) = f.folds {
            p.folds = k;
        }
        if let Some(s) = f.seeds {
            p.seeds = s;
        }
        if let Some(m) = f.max_epochs {
            p.train.max_epochs = m;
        }
    }
    if let Command::Featurize { allow_partial: true, .. } = cli.command {
        cfg.featurize.allow_partial = true;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value).expect("serialisable") + "\n")
}

pub fn cell_dir(root: &Path, key: CellKey) -> PathBuf {
    root.join(key.regime.to_string())
        .join(format!("fold{}", key.fold))
        .join(format!("seed{}", key.seed))
}

fn read_plan(runs: &Path, store: &FeatureStore) -> Result<FoldPlan> {
    let path = runs.join(PLAN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let plan: FoldPlan = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let speakers: Vec<_> = store.speakers.iter().map(|s| (s.id.clone(), s.label)).collect();
    plan.validate(&speakers)?;
    Ok(plan)
}

/// Execute one parsed command; returns the input paths for the run manifest.
pub fn execute(cli: &Cli, cfg: &FileConfig) -> Result<(Vec<PathBuf>, Option<PathBuf>)> {
    match &cli.command {
        Command::Synth { out } => {
            generate_corpus(&cfg.synth, out)?;
            Ok((Vec::new(), Some(out.clone())))
        }
        Command::Featurize { manifest, out, .. } => {
            let store = featurize(manifest, &cfg.featurize)?;
            if !store.report.failed.is_empty() {
                log::warn!("{} files skipped", store.report.failed.len());
            }
            store.save(out)?;
            Ok((vec![manifest.clone()], Some(out.clone())))
        }
        Command::Train { features, out, fold, .. } => {
            cfg.protocol.validate()?;
            let store = FeatureStore::load(features)?;
            let plan = cfg.protocol.plan(&store)?;
            if let Some(f) = fold {
                if *f >= plan.k() {
                    return Err(Error::Usage(format!("fold {f} out of range for {} folds", plan.k())));
                }
            }
            create_dir(out)?;
            write_json(&out.join(PLAN_FILE), &plan)?;
            let keys: Vec<CellKey> = cells(&cfg.protocol)
                .into_iter()
                .filter(|k| fold.is_none_or(|f| k.fold == f))
                .collect();
            run_pool(&keys, cli.jobs, |&k| {
                let outcome = train_cell(&store, &plan, k, &cfg.protocol)?;
                write_run(&cell_dir(out, k), &cfg.protocol.cell_config(k.regime, k.seed), &outcome)
            })?;
            Ok((vec![features.clone()], Some(out.clone())))
        }
        Command::Evaluate { features, runs, out, .. } => {
            cfg.protocol.validate()?;
            let store = FeatureStore::load(features)?;
            let plan = read_plan(runs, &store)?;
            let keys = cells(&cfg.protocol);
            for &k in &keys {
                let path = cell_dir(runs, k).join(BEST_CHECKPOINT);
                if !path.exists() {
                    return Err(Error::Data(format!(
                        "missing checkpoint for fold {} ({} seed {}): {}",
                        k.fold,
                        k.regime,
                        k.seed,
                        path.display()
                    )));
                }
            }
            let results = run_pool(&keys, cli.jobs, |&k| {
                let ck = Checkpoint::load(&cell_dir(runs, k).join(BEST_CHECKPOINT))?;
                let (net, state) = Network::from_checkpoint(&ck)?;
                let epoch = |field: &str| state[field].as_u64().map(|v| v as usize);
                let (best, last) = epoch("best_epoch")
                    .zip(epoch("last_epoch"))
                    .ok_or_else(|| Error::Data(format!("fold {} checkpoint lacks epoch state", k.fold)))?;
                evaluate_cell(&store, &plan, k, &net, &cfg.protocol, best, last)
            })?;
            let table = ResultTable::build(results)?;
            create_dir(out)?;
            write_file(&out.join(RESULTS_FILE), table.to_csv())?;
            Ok((vec![features.clone(), runs.clone()], Some(out.clone())))
        }
        Command::Gridsearch { features, out, .. } => {
            let regime = match cfg.protocol.regimes.as_slice() {
                [r] => *r,
                _ => return Err(Error::Usage("gridsearch needs exactly one --regime".into())),
            };
            let store = FeatureStore::load(features)?;
            let plan = cfg.protocol.plan(&store)?;
            let report = grid_search(&store, &plan, regime, &GRID, &cfg.protocol, cli.jobs)?;
            create_dir(out)?;
            write_file(&out.join(GRID_FILE), report.to_csv())?;
            write_json(&out.join("grid.json"), &report)?;
            println!("{regime}: selected {} = {}{}", report.parameter, report.best, if report.tie { " (tie)" } else { "" });
            Ok((vec![features.clone()], Some(out.clone())))
        }
        Command::Gradcheck { trials, out } => {
            let seed = cli.seed.unwrap_or(0);
            let results = gradcheck_suite(*trials, seed)?;
            for r in &results {
                println!(
                    "{:<24} trials {:>3}  max rel error {:.3e}  {}",
                    r.case,
                    r.trials,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            if let Some(dir) = out {
                create_dir(dir)?;
                write_json(&dir.join("gradcheck.json"), &results)?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.case.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::Invariant(format!("gradient check above {TOLERANCE:e}: {}", failed.join(", "))));
            }
            Ok((Vec::new(), out.clone()))
        }
    }
}

fn report(err: &anyhow::Error) -> i32 {
    eprintln!("error: {err:#}");
    err.downcast_ref::<Error>().map_or(3, Error::exit_code)
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADVREP_LOG", "info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let started = now();
    let outcome = resolve(&cli).and_then(|cfg| {
        let (inputs, output) = execute(&cli, &cfg)?;
        if let Some(output) = output {
            let manifest = RunManifest {
                command: cli.command.name().into(),
                config_hash: cfg.hash(),
                inputs,
                output: output.clone(),
                version: env!("CARGO_PKG_VERSION").into(),
                started_unix: started,
                finished_unix: now(),
            };
            write_json(&output.join(RUN_MANIFEST), &manifest)?;
        }
        Ok(())
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => report(&anyhow::Error::new(e)),
    }
}
