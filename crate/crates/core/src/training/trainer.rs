use serde::{Deserialize, Serialize};

use super::{adversary_step, evaluate, supervised_step, Item, LrSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{HeadSpec, Network};
use crate::numerics::{shuffle, substream, Rng};

/// Chunk streams of one training run.
#[derive(Debug, Clone, Default)]
pub struct TrainData<'a> {
    /// Every training chunk, for reconstruction and PD classification.
    pub train: Vec<Item<'a>>,
    /// Neurotypical chunks with speaker classes, for the adversary.
    pub id_stream: Vec<Item<'a>>,
    /// Development chunks for the epoch monitor.
    pub dev: Vec<Item<'a>>,
    /// Speaker classes in `id_stream`.
    pub n_speakers: usize,
}

/// One line of the training log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub l_ae: Option<f64>,
    pub l_id: Option<f64>,
    pub l_pc: Option<f64>,
    pub e: Option<f64>,
    /// Adversary accuracy on its own batches before each update, percent.
    pub adversary_acc: Option<f64>,
    pub dev_monitor: f64,
    pub lr: f64,
    pub improved: bool,
    pub stop: bool,
}

/// Shuffling and dropout streams carried across epochs.
#[derive(Debug, Clone)]
pub struct StreamState {
    shuffle: Rng,
    id_shuffle: Rng,
    dropout: Rng,
    id_order: Vec<usize>,
    id_pos: usize,
}

impl StreamState {
    pub fn new(seed: u64) -> Self {
        StreamState {
            shuffle: substream(seed, "shuffle"),
            id_shuffle: substream(seed, "shuffle.id"),
            dropout: substream(seed, "dropout"),
            id_order: Vec::new(),
            id_pos: 0,
        }
    }

    /// Next speaker-ID batch, reshuffling the stream whenever it runs out.
    fn next_id_batch(&mut self, len: usize, batch: usize) -> Vec<usize> {
        if self.id_pos >= self.id_order.len() {
            self.id_order = (0..len).collect();
            shuffle(&mut self.id_order, &mut self.id_shuffle);
            self.id_pos = 0;
        }
        let end = (self.id_pos + batch).min(self.id_order.len());
        let out = self.id_order[self.id_pos..end].to_vec();
        self.id_pos = end;
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the lowest dev monitor.
    pub best: Network,
    pub last: Network,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
}

/// Network with the heads the regime needs, initialised from the config seed.
pub fn build_network(cfg: &TrainConfig, n_speakers: usize) -> Result<Network> {
    cfg.validate()?;
    let id = cfg.regime.adversarial().then(|| HeadSpec::new(n_speakers));
    let pd = cfg.regime.supervised().then(HeadSpec::pd);
    Network::new(cfg.model.clone(), id, pd, cfg.seed)
}

fn check(net: &Network, data: &TrainData, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::config("training needs non-empty train and dev sets"));
    }
    if cfg.regime.adversarial() {
        if data.id_stream.is_empty() {
            return Err(Error::config("adversarial training needs a non-empty speaker-ID stream"));
        }
        let head = net
            .speaker_head
            .as_ref()
            .ok_or_else(|| Error::config("adversarial training needs a speaker-ID head"))?;
        if head.spec().outputs != data.n_speakers || data.id_stream.iter().any(|i| i.speaker >= data.n_speakers) {
            return Err(Error::config(format!(
                "speaker-ID head has {} outputs for {} speakers",
                head.spec().outputs,
                data.n_speakers
            )));
        }
    }
    if cfg.regime.supervised() && net.pd_head.is_none() {
        return Err(Error::config("supervised training needs a PD head"));
    }
    Ok(())
}

/// One pass over the training stream at rate `lr`. Returns the report without dev fields.
pub fn train_epoch(net: &mut Network, data: &TrainData, cfg: &TrainConfig, lr: f64, state: &mut StreamState) -> Result<EpochReport> {
    let w = cfg.weights();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    shuffle(&mut order, &mut state.shuffle);
    let (mut n, mut ae, mut pc, mut e) = (0.0, 0.0, 0.0, 0.0);
    let (mut n_id, mut id, mut correct) = (0.0, 0.0, 0usize);
    for idx in order.chunks(cfg.batch_size) {
        let batch: Vec<Item> = idx.iter().map(|&i| data.train[i]).collect();
        let id_batch: Option<Vec<Item>> = cfg.regime.adversarial().then(|| {
            state
                .next_id_batch(data.id_stream.len(), cfg.batch_size)
                .into_iter()
                .map(|i| data.id_stream[i])
                .collect()
        });
        let step = supervised_step(net, &batch, id_batch.as_deref(), w, lr, &mut state.dropout)?;
        let b = batch.len() as f64;
        n += b;
        ae += step.components.ae * b;
        pc += step.components.pc.unwrap_or(0.0) * b;
        e += step.e * b;
        if let Some(id_batch) = &id_batch {
            let (_, hits) = adversary_step(net, id_batch, lr, &mut state.dropout)?;
            let bi = id_batch.len() as f64;
            n_id += bi;
            id += step.components.id.unwrap_or(0.0) * bi;
            correct += hits;
        }
    }
    let adv = cfg.regime.adversarial();
    Ok(EpochReport {
        epoch: 0,
        l_ae: Some(ae / n),
        l_id: adv.then(|| id / n_id),
        l_pc: cfg.regime.supervised().then(|| pc / n),
        e: Some(e / n),
        adversary_acc: adv.then(|| 100.0 * correct as f64 / n_id),
        dev_monitor: f64::NAN,
        lr,
        improved: false,
        stop: false,
    })
}

/// Full run: epoch-0 evaluation, then epochs until the schedule stops.
/// `on_epoch` sees every report with the network as it stands after that epoch.
pub fn train(
    mut net: Network,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Network) -> Result<()>,
) -> Result<TrainOutcome> {
    check(&net, data, cfg)?;
    let w = cfg.weights();
    let mut schedule = LrSchedule::new(cfg.schedule())?;
    let mut state = StreamState::new(cfg.seed);
    let mut reports = Vec::new();

    let dev = evaluate(&net, &data.dev, cfg.eval_batch)?;
    let s = schedule.observe(dev.monitor(&w));
    let first = EpochReport {
        epoch: 0,
        l_ae: None,
        l_id: None,
        l_pc: None,
        e: None,
        adversary_acc: None,
        dev_monitor: dev.monitor(&w),
        lr: s.lr,
        improved: s.improved,
        stop: s.stop,
    };
    on_epoch(&first, &net)?;
    let mut stop = first.stop;
    reports.push(first);
    let mut best = net.clone();
    let mut best_epoch = 0;

    let mut epoch = 0;
    while !stop {
        epoch += 1;
        let lr = schedule.lr();
        let mut report = train_epoch(&mut net, data, cfg, lr, &mut state)?;
        let monitor = evaluate(&net, &data.dev, cfg.eval_batch)?.monitor(&w);
        let s = schedule.observe(monitor);
        report.epoch = epoch;
        report.dev_monitor = monitor;
        report.improved = s.improved;
        report.stop = s.stop;
        log::debug!(
            "{} epoch {epoch}: E {:.5} dev {monitor:.5} lr {lr}{}",
            cfg.regime,
            report.e.unwrap_or(f64::NAN),
            if s.halved { " (halved)" } else { "" }
        );
        if s.improved {
            best = net.clone();
            best_epoch = epoch;
        }
        stop = s.stop;
        on_epoch(&report, &net)?;
        reports.push(report);
    }
    Ok(TrainOutcome {
        best,
        last: net,
        best_epoch,
        reports,
    })
}
