use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{accuracy, make_folds, make_probe_split, multiclass_auc, roc_auc_binary, soft_vote, FoldPlan, ProbeSplit};
use crate::dsp::{FeatureStore, Label};
use crate::error::{Error, Result};
use crate::models::{HeadSpec, Network};
use crate::numerics::{substream, Group};
use crate::training::{build_network, train, train_classifier, ClassifierConfig, Item, Regime, TrainConfig, TrainData, TrainOutcome};

/// Everything the cross-validation protocol needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub folds: usize,
    /// Number of training seeds per cell.
    pub seeds: usize,
    /// Drives the fold plan, probe splits and per-seed training seeds.
    pub master_seed: u64,
    pub regimes: Vec<Regime>,
    /// Template for every auto-encoder run; `regime` and `seed` are set per cell.
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    pub probe: ClassifierConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            folds: 10,
            seeds: 5,
            master_seed: 0,
            regimes: Regime::ALL.to_vec(),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            probe: ClassifierConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        if self.regimes.is_empty() {
            return Err(Error::config("no regimes selected"));
        }
        for &regime in &self.regimes {
            self.cell_config(regime, 0).validate()?;
        }
        Ok(())
    }

    /// Training seed of seed slot `i`.
    pub fn run_seed(&self, i: usize) -> u64 {
        substream(self.master_seed, &format!("seed.{i}")).next_u64()
    }

    pub fn cell_config(&self, regime: Regime, seed_slot: usize) -> TrainConfig {
        TrainConfig {
            regime,
            seed: self.run_seed(seed_slot),
            ..self.train.clone()
        }
    }

    pub fn plan(&self, store: &FeatureStore) -> Result<FoldPlan> {
        let speakers: Vec<(String, Label)> = store.speakers.iter().map(|s| (s.id.clone(), s.label)).collect();
        make_folds(&speakers, self.folds, self.master_seed)
    }
}

/// One (regime, fold, seed slot) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub regime: Regime,
    pub fold: usize,
    pub seed: usize,
}

/// Speaker-level PD decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVote {
    pub speaker: String,
    pub label: Label,
    pub predicted: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub test_votes: Vec<SpeakerVote>,
    pub dev_votes: Vec<SpeakerVote>,
    pub pd_acc: f64,
    pub pd_auc: Option<f64>,
    pub dev_pd_acc: f64,
    pub probe_acc: f64,
    pub probe_auc: f64,
    pub probe_speakers: usize,
    pub best_epoch: usize,
    pub epochs: usize,
    /// Speakers whose chunks reached any training or model-selection step.
    pub seen_speakers: Vec<String>,
}

/// Chunk streams of one fold, with the speakers behind them.
pub struct FoldData<'a> {
    pub split: super::FoldSplit,
    pub probe: ProbeSplit,
    pub data: TrainData<'a>,
    pub train_idx: Vec<usize>,
    pub dev_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

pub fn fold_data<'a>(store: &'a FeatureStore, plan: &FoldPlan, fold: usize) -> Result<FoldData<'a>> {
    let split = plan.split(fold)?;
    let index = |ids: &[String]| -> Result<BTreeSet<usize>> {
        ids.iter()
            .map(|id| {
                store
                    .speaker_index(id)
                    .ok_or_else(|| Error::Data(format!("speaker {id} of the fold plan is not in the feature store")))
            })
            .collect()
    };
    let (train_s, dev_s, test_s) = (index(&split.train)?, index(&split.dev)?, index(&split.test)?);
    let nt_train: Vec<String> = split
        .train
        .iter()
        .filter(|id| store.speakers[store.speaker_index(id).expect("indexed")].label == Label::Neurotypical)
        .cloned()
        .collect();
    let probe = make_probe_split(store, &nt_train, plan.seed, &format!("probe.{fold}"))?;
    probe.validate(store)?;
    let select = |set: &BTreeSet<usize>| -> Vec<usize> {
        (0..store.chunks.len()).filter(|&i| set.contains(&store.chunks[i].speaker)).collect()
    };
    let (train_idx, dev_idx, test_idx) = (select(&train_s), select(&dev_s), select(&test_s));
    let item = |i: usize, speaker: usize| Item {
        x: &store.chunks[i].values,
        pd: store.chunks[i].label.class(),
        speaker,
    };
    let probe_train: BTreeSet<usize> = probe.train.iter().copied().collect();
    let id_stream = (0..store.chunks.len())
        .filter(|&i| probe_train.contains(&store.chunks[i].utterance))
        .map(|i| {
            let class = probe.class_of(store, store.chunks[i].speaker).expect("enrolled");
            item(i, class)
        })
        .collect();
    let data = TrainData {
        train: train_idx.iter().map(|&i| item(i, 0)).collect(),
        id_stream,
        dev: dev_idx.iter().map(|&i| item(i, 0)).collect(),
        n_speakers: probe.speakers.len(),
    };
    Ok(FoldData {
        split,
        probe,
        data,
        train_idx,
        dev_idx,
        test_idx,
    })
}

/// Train the auto-encoder of one cell.
pub fn train_cell(store: &FeatureStore, plan: &FoldPlan, key: CellKey, cfg: &ProtocolConfig) -> Result<TrainOutcome> {
    let fd = fold_data(store, plan, key.fold)?;
    let tcfg = cfg.cell_config(key.regime, key.seed);
    let net = build_network(&tcfg, fd.data.n_speakers)?;
    log::info!(
        "training {} fold {} seed {}: {} train / {} dev chunks, {} speaker-ID chunks",
        key.regime,
        key.fold,
        key.seed,
        fd.data.train.len(),
        fd.data.dev.len(),
        fd.data.id_stream.len()
    );
    train(net, &fd.data, &tcfg, |_, _| Ok(()))
}

fn votes(store: &FeatureStore, idx: &[usize], probs: &[Vec<f64>]) -> Result<Vec<SpeakerVote>> {
    let mut speakers: Vec<usize> = idx.iter().map(|&i| store.chunks[i].speaker).collect();
    speakers.dedup();
    speakers
        .into_iter()
        .map(|s| {
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .zip(probs)
                .filter(|(&i, _)| store.chunks[i].speaker == s)
                .map(|(_, p)| p.clone())
                .collect();
            let (predicted, score) = soft_vote(&rows)?;
            Ok(SpeakerVote {
                speaker: store.speakers[s].id.clone(),
                label: store.speakers[s].label,
                predicted,
                score,
            })
        })
        .collect()
}

/// PD accuracy and AUC over speaker votes. AUC is absent when one class is missing.
pub fn vote_metrics(votes: &[SpeakerVote]) -> Result<(f64, Option<f64>)> {
    let preds: Vec<usize> = votes.iter().map(|v| v.predicted).collect();
    let labels: Vec<usize> = votes.iter().map(|v| v.label.class()).collect();
    let acc = accuracy(&preds, &labels)?;
    let scores: Vec<f64> = votes.iter().map(|v| v.score).collect();
    let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let auc = if pos.iter().all(|&p| p) || pos.iter().all(|&p| !p) {
        None
    } else {
        Some(roc_auc_binary(&scores, &pos)?)
    };
    Ok((acc, auc))
}

/// Downstream PD classifier and speaker-ID probe on the frozen encoder of `net`.
pub fn evaluate_cell(
    store: &FeatureStore,
    plan: &FoldPlan,
    key: CellKey,
    net: &Network,
    cfg: &ProtocolConfig,
    best_epoch: usize,
    epochs: usize,
) -> Result<CellResult> {
    let fd = fold_data(store, plan, key.fold)?;
    let seed = cfg.run_seed(key.seed);
    let bottleneck = net.autoencoder.spec().bottleneck;
    let refs: Vec<_> = store.chunks.iter().map(|c| &c.values).collect();
    let emb = net.embed(&refs, cfg.train.eval_batch)?;
    if emb.iter().any(|e| e.len() != bottleneck) {
        return Err(Error::Invariant(format!("embedding width differs from {bottleneck}")));
    }
    if emb.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invariant(format!("{} fold {} seed {}: non-finite bottleneck", key.regime, key.fold, key.seed)));
    }
    let take = |idx: &[usize]| -> (Vec<Vec<f32>>, Vec<usize>) {
        (
            idx.iter().map(|&i| emb[i].clone()).collect(),
            idx.iter().map(|&i| store.chunks[i].label.class()).collect(),
        )
    };

    let (tx, ty) = take(&fd.train_idx);
    let (dx, dy) = take(&fd.dev_idx);
    let (sx, _) = take(&fd.test_idx);
    let spec = HeadSpec {
        input: bottleneck,
        ..HeadSpec::pd()
    };
    let clf = train_classifier(&tx, &ty, &dx, &dy, spec, Group::PdClassifier, &cfg.classifier, seed, "downstream")?;
    let test_votes = votes(store, &fd.test_idx, &clf.classifier.predict_proba(&sx)?)?;
    let dev_votes = votes(store, &fd.dev_idx, &clf.classifier.predict_proba(&dx)?)?;
    let (pd_acc, pd_auc) = vote_metrics(&test_votes)?;
    let (dev_pd_acc, _) = vote_metrics(&dev_votes)?;

    let probe_part = |utts: &[usize]| -> (Vec<Vec<f32>>, Vec<usize>) {
        let set: BTreeSet<usize> = utts.iter().copied().collect();
        let idx: Vec<usize> = (0..store.chunks.len())
            .filter(|&i| set.contains(&store.chunks[i].utterance))
            .collect();
        (
            idx.iter().map(|&i| emb[i].clone()).collect(),
            idx.iter()
                .map(|&i| fd.probe.class_of(store, store.chunks[i].speaker).expect("enrolled"))
                .collect(),
        )
    };
    let (ptx, pty) = probe_part(&fd.probe.train);
    let (pdx, pdy) = probe_part(&fd.probe.dev);
    let (psx, psy) = probe_part(&fd.probe.test);
    let k = fd.probe.speakers.len();
    let spec = HeadSpec {
        input: bottleneck,
        ..HeadSpec::new(k)
    };
    let probe = train_classifier(&ptx, &pty, &pdx, &pdy, spec, Group::SpeakerId, &cfg.probe, seed, "probe")?;
    let probs = probe.classifier.predict_proba(&psx)?;
    let preds: Vec<usize> = probs.iter().map(|p| super::argmax(p)).collect();
    let probe_acc = accuracy(&preds, &psy)?;
    let probe_auc = multiclass_auc(&probs, &psy)?;

    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for i in fd.train_idx.iter().chain(&fd.dev_idx) {
        seen.insert(store.chunks[*i].speaker);
    }
    for u in fd.probe.train.iter().chain(&fd.probe.dev) {
        seen.insert(store.utterances[*u].speaker);
    }
    let seen_speakers: Vec<String> = seen.iter().map(|&s| store.speakers[s].id.clone()).collect();
    audit_leakage(&seen_speakers, &fd.split.test)?;

    Ok(CellResult {
        key,
        test_votes,
        dev_votes,
        pd_acc,
        pd_auc,
        dev_pd_acc,
        probe_acc,
        probe_auc,
        probe_speakers: k,
        best_epoch,
        epochs,
        seen_speakers,
    })
}

/// Fails when any speaker seen during training or selection is a test speaker.
pub fn audit_leakage(seen: &[String], test: &[String]) -> Result<()> {
    let test: BTreeSet<&String> = test.iter().collect();
    let leaked: Vec<&String> = seen.iter().filter(|s| test.contains(s)).collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::Invariant(format!("test speakers leaked into training: {leaked:?}")))
    }
}

/// Train and evaluate one cell.
pub fn run_cell(store: &FeatureStore, plan: &FoldPlan, key: CellKey, cfg: &ProtocolConfig) -> Result<CellResult> {
    let outcome = train_cell(store, plan, key, cfg)?;
    let epochs = outcome.reports.last().map_or(0, |r| r.epoch);
    evaluate_cell(store, plan, key, &outcome.best, cfg, outcome.best_epoch, epochs)
}

/// Every cell of the protocol in a fixed order.
pub fn cells(cfg: &ProtocolConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &regime in &cfg.regimes {
        for seed in 0..cfg.seeds {
            for fold in 0..cfg.folds {
                out.push(CellKey { regime, fold, seed });
            }
        }
    }
    out
}

/// Run `jobs` on up to `workers` threads; results come back in job order.
pub fn run_pool<J: Sync, R: Send>(jobs: &[J], workers: usize, f: impl Fn(&J) -> Result<R> + Sync) -> Result<Vec<R>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                let failed = r.is_err();
                slots.lock().expect("result lock")[i] = Some(r);
                if failed {
                    next.store(jobs.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let slots = slots.into_inner().expect("result lock");
    let mut out = Vec::with_capacity(jobs.len());
    for s in slots {
        match s {
            Some(r) => out.push(r?),
            None => return Err(Error::Invariant("job skipped after an earlier failure".into())),
        }
    }
    Ok(out)
}
