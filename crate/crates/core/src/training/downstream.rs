use serde::{Deserialize, Serialize};

use super::{EpochReport, LrSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::models::{Head, HeadSpec, Mode};
use crate::numerics::{sgd_step, shuffle, softmax_rows, substream, Group, GroupMask, ParamSet, Rng, SgdState, Tape, Tensor};

/// Optimiser settings for heads trained on frozen bottlenecks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halve_patience: usize,
    pub lr_floor: f64,
    pub max_epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            batch_size: 128,
            lr0: 0.02,
            lr_halve_patience: 5,
            lr_floor: 0.002,
            max_epochs: 100,
        }
    }
}

impl ClassifierConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            lr0: self.lr0,
            patience: self.lr_halve_patience,
            floor: self.lr_floor,
            max_epochs: self.max_epochs,
        }
    }
}

/// A classification head with its own parameters.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub head: Head,
    pub params: ParamSet<f32>,
}

fn rows_to_tensor(rows: &[&[f32]]) -> Result<Tensor<f32>> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("feature rows differ in length"));
    }
    Tensor::new([rows.len(), d], rows.iter().flat_map(|r| r.iter().copied()).collect())
}

impl Classifier {
    pub fn new(spec: HeadSpec, group: Group, rng: &mut Rng) -> Result<Self> {
        let head = Head::new(spec, "clf", group)?;
        let mut params = ParamSet::new();
        head.init_params(rng, &mut params)?;
        Ok(Classifier { head, params })
    }

    /// Class probabilities per row, eval mode.
    pub fn predict_proba(&self, x: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
        let mut rng = substream(0, "eval");
        let mut out = Vec::with_capacity(x.len());
        for group in x.chunks(512) {
            let rows: Vec<&[f32]> = group.iter().map(Vec::as_slice).collect();
            let mut tape = Tape::<f32>::new();
            let bound = self.params.bind(&mut tape, GroupMask::NONE);
            let v = tape.leaf(rows_to_tensor(&rows)?, false);
            let logits = self.head.forward(&mut tape, &bound, v, Mode::Eval, &mut rng)?;
            let k = self.head.spec().outputs;
            let p = softmax_rows(tape.value(logits).data(), group.len(), k);
            out.extend(p.chunks(k).map(|r| r.iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }

    /// Mean cross-entropy in eval mode.
    pub fn loss(&self, x: &[Vec<f32>], y: &[usize]) -> Result<f64> {
        let p = self.predict_proba(x)?;
        Ok(p.iter().zip(y).map(|(r, &t)| -(r[t].max(1e-30)).ln()).sum::<f64>() / y.len() as f64)
    }

    fn train_batch(&mut self, x: &[&[f32]], y: &[usize], lr: f64, rng: &mut Rng) -> Result<f64> {
        let mask = GroupMask::ALL;
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape, mask);
        let v = tape.leaf(rows_to_tensor(x)?, false);
        let logits = self.head.forward(&mut tape, &bound, v, Mode::Train, rng)?;
        let l = tape.softmax_cross_entropy(logits, y)?;
        let loss = tape.value(l).data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::Invariant(format!("non-finite classifier loss {loss}")));
        }
        tape.backward(l)?;
        self.params.collect_grads(&tape, &bound);
        sgd_step(&mut self.params, &SgdState::new(lr, mask)?);
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    /// Parameters at the lowest dev loss.
    pub classifier: Classifier,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
}

/// Train a head on fixed feature vectors with the halve-on-plateau schedule, keeping the
/// dev-loss minimum. `stream` names the random substreams.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    dev_x: &[Vec<f32>],
    dev_y: &[usize],
    spec: HeadSpec,
    group: Group,
    cfg: &ClassifierConfig,
    seed: u64,
    stream: &str,
) -> Result<ClassifierOutcome> {
    if train_x.is_empty() || dev_x.is_empty() {
        return Err(Error::config("classifier training needs non-empty train and dev sets"));
    }
    if train_x.len() != train_y.len() || dev_x.len() != dev_y.len() {
        return Err(Error::shape("features and labels differ in length"));
    }
    if let Some(&bad) = train_y.iter().chain(dev_y).find(|&&c| c >= spec.outputs) {
        return Err(Error::config(format!("label {bad} outside {} classes", spec.outputs)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut clf = Classifier::new(spec, group, &mut substream(seed, &format!("init.{stream}")))?;
    let mut shuffler = substream(seed, &format!("shuffle.{stream}"));
    let mut dropout = substream(seed, &format!("dropout.{stream}"));
    let mut schedule = LrSchedule::new(cfg.schedule())?;

    let report = |epoch, train: Option<f64>, dev: f64, s: super::ScheduleStep| EpochReport {
        epoch,
        l_ae: None,
        l_id: None,
        l_pc: train,
        e: train,
        adversary_acc: None,
        dev_monitor: dev,
        lr: s.lr,
        improved: s.improved,
        stop: s.stop,
    };
    let dev = clf.loss(dev_x, dev_y)?;
    let s = schedule.observe(dev);
    let mut reports = vec![report(0, None, dev, s)];
    let mut best = clf.clone();
    let mut best_epoch = 0;
    let mut stop = s.stop;
    let mut epoch = 0;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    while !stop {
        epoch += 1;
        let lr = schedule.lr();
        shuffle(&mut order, &mut shuffler);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x: Vec<&[f32]> = idx.iter().map(|&i| train_x[i].as_slice()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
            total += clf.train_batch(&x, &y, lr, &mut dropout)? * idx.len() as f64;
        }
        let dev = clf.loss(dev_x, dev_y)?;
        let s = schedule.observe(dev);
        if s.improved {
            best = clf.clone();
            best_epoch = epoch;
        }
        stop = s.stop;
        reports.push(report(epoch, Some(total / train_x.len() as f64), dev, s));
    }
    Ok(ClassifierOutcome {
        classifier: best,
        best_epoch,
        reports,
    })
}
