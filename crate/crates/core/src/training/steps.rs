use super::{Components, LossWeights};
use crate::error::{Error, Result};
use crate::models::{Mode, Network};
use crate::numerics::{sgd_step, Group, GroupMask, Rng, SgdState, Tape, Tensor, Var};

/// One training or evaluation chunk with its labels. `speaker` is the speaker-ID class, only
/// meaningful in the speaker-ID stream.
#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    pub x: &'a Tensor<f32>,
    pub pd: usize,
    pub speaker: usize,
}

/// Losses of one alternating step pair (or single step).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub components: Components,
    pub e: f64,
    /// Adversary loss and hits on its own batch, before its update.
    pub adversary_loss: Option<f64>,
    pub adversary_correct: usize,
    pub adversary_total: usize,
}

fn inputs(items: &[Item]) -> Result<Tensor<f32>> {
    let refs: Vec<&Tensor<f32>> = items.iter().map(|i| i.x).collect();
    crate::models::stack_chunks(&refs)
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Descend `E` over the encoder, decoder and (when the regime has one) PD head with the
/// speaker-ID head frozen. `id_batch` feeds the `-lambda L_id` term.
pub fn supervised_step(
    net: &mut Network,
    ae_batch: &[Item],
    id_batch: Option<&[Item]>,
    w: LossWeights,
    lr: f64,
    dropout: &mut Rng,
) -> Result<StepLosses> {
    let mut trainable = vec![Group::Encoder, Group::Decoder];
    if net.pd_head.is_some() {
        trainable.push(Group::PdClassifier);
    }
    let mask = GroupMask::of(&trainable);
    let mut tape = Tape::<f32>::new();
    let bound = net.params.bind(&mut tape, mask);
    let mut pending = Vec::new();

    let input = inputs(ae_batch)?;
    let x = tape.leaf(input.clone(), false);
    let ae = &net.autoencoder;
    let z = ae.encode(&mut tape, &bound, &net.stats, x, Mode::Train, &mut pending)?;
    let y = ae.decode(&mut tape, &bound, &net.stats, z, Mode::Train, &mut pending)?;
    let l_ae = tape.mse(y, &input)?;
    let mut terms = vec![(l_ae, w.ae)];
    let mut components = Components {
        ae: scalar(&tape, l_ae),
        ..Default::default()
    };

    if let Some(head) = &net.pd_head {
        let logits = head.forward(&mut tape, &bound, z, Mode::Train, dropout)?;
        let targets: Vec<usize> = ae_batch.iter().map(|i| i.pd).collect();
        let l_pc = tape.softmax_cross_entropy(logits, &targets)?;
        components.pc = Some(scalar(&tape, l_pc));
        terms.push((l_pc, w.pc));
    } else if w.pc != 0.0 {
        return Err(Error::config("PD term requested but the network has no PD head"));
    }

    if w.id != 0.0 || id_batch.is_some() {
        let batch = id_batch.ok_or_else(|| Error::config("adversarial term needs a speaker-ID batch"))?;
        let head = net
            .speaker_head
            .as_ref()
            .ok_or_else(|| Error::config("adversarial term needs a speaker-ID head"))?;
        let xi = tape.leaf(inputs(batch)?, false);
        let zi = ae.encode(&mut tape, &bound, &net.stats, xi, Mode::Train, &mut pending)?;
        let logits = head.forward(&mut tape, &bound, zi, Mode::Train, dropout)?;
        let targets: Vec<usize> = batch.iter().map(|i| i.speaker).collect();
        let l_id = tape.softmax_cross_entropy(logits, &targets)?;
        components.id = Some(scalar(&tape, l_id));
        terms.push((l_id, w.id));
    }

    let e = tape.weighted_sum(&terms)?;
    let e_value = scalar(&tape, e);
    if !e_value.is_finite() {
        return Err(Error::Invariant(format!("non-finite training objective {e_value}")));
    }
    tape.backward(e)?;
    net.params.collect_grads(&tape, &bound);
    sgd_step(&mut net.params, &SgdState::new(lr, mask)?);
    net.apply_pending(pending)?;
    Ok(StepLosses {
        components,
        e: e_value,
        ..Default::default()
    })
}

/// Descend `L_id` over the speaker-ID head only; the encoder runs frozen.
/// Returns the batch loss and the number of correct predictions before the update.
pub fn adversary_step(net: &mut Network, batch: &[Item], lr: f64, dropout: &mut Rng) -> Result<(f64, usize)> {
    let head = net
        .speaker_head
        .as_ref()
        .ok_or_else(|| Error::config("adversary step needs a speaker-ID head"))?;
    let mask = GroupMask::of(&[Group::SpeakerId]);
    let mut tape = Tape::<f32>::new();
    let bound = net.params.bind(&mut tape, mask);
    let mut pending = Vec::new();
    let x = tape.leaf(inputs(batch)?, false);
    let z = net
        .autoencoder
        .encode(&mut tape, &bound, &net.stats, x, Mode::Train, &mut pending)?;
    let logits = head.forward(&mut tape, &bound, z, Mode::Train, dropout)?;
    let targets: Vec<usize> = batch.iter().map(|i| i.speaker).collect();
    let k = tape.value(logits).shape()[1];
    let correct = tape
        .value(logits)
        .data()
        .chunks(k)
        .zip(&targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    let l_id = tape.softmax_cross_entropy(logits, &targets)?;
    let loss = scalar(&tape, l_id);
    if !loss.is_finite() {
        return Err(Error::Invariant(format!("non-finite speaker-ID loss {loss}")));
    }
    tape.backward(l_id)?;
    net.params.collect_grads(&tape, &bound);
    sgd_step(&mut net.params, &SgdState::new(lr, mask)?);
    net.apply_pending(pending)?;
    Ok((loss, correct))
}

/// Eval-mode losses over a chunk set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DevLosses {
    pub ae: f64,
    pub pc: Option<f64>,
}

impl DevLosses {
    pub fn monitor(&self, w: &LossWeights) -> f64 {
        let m = w.monitor();
        m.ae * self.ae + self.pc.map_or(0.0, |pc| m.pc * pc)
    }
}

/// Mean reconstruction loss and, with a PD head, mean PD cross-entropy.
pub fn evaluate(net: &Network, items: &[Item], batch: usize) -> Result<DevLosses> {
    if items.is_empty() {
        return Err(Error::input("evaluation over zero chunks"));
    }
    let mut ae = 0.0;
    let mut pc = 0.0;
    let mut rng = crate::numerics::substream(0, "eval");
    for group in items.chunks(batch.max(1)) {
        let mut tape = Tape::<f32>::new();
        let bound = net.params.bind(&mut tape, GroupMask::NONE);
        let input = inputs(group)?;
        let x = tape.leaf(input.clone(), false);
        let mut pending = Vec::new();
        let z = net
            .autoencoder
            .encode(&mut tape, &bound, &net.stats, x, Mode::Eval, &mut pending)?;
        let y = net
            .autoencoder
            .decode(&mut tape, &bound, &net.stats, z, Mode::Eval, &mut pending)?;
        let l = tape.mse(y, &input)?;
        ae += scalar(&tape, l) * group.len() as f64;
        if let Some(head) = &net.pd_head {
            let logits = head.forward(&mut tape, &bound, z, Mode::Eval, &mut rng)?;
            let targets: Vec<usize> = group.iter().map(|i| i.pd).collect();
            let l = tape.softmax_cross_entropy(logits, &targets)?;
            pc += scalar(&tape, l) * group.len() as f64;
        }
    }
    let n = items.len() as f64;
    Ok(DevLosses {
        ae: ae / n,
        pc: net.pd_head.as_ref().map(|_| pc / n),
    })
}
