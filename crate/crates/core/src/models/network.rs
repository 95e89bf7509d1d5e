use serde::{Deserialize, Serialize};

use super::autoencoder::PendingStats;
use super::{AutoEncoder, EncoderSpec, Head, HeadSpec, Mode, RunningStats};
use crate::error::{Error, Result};
use crate::numerics::{
    substream, Checkpoint, CheckpointEntry, EntryKind, Group, GroupMask, ParamSet, Rng, Tape,
    Tensor,
};

/// Auto-encoder plus optional speaker-ID and PD heads, with all of their state.
#[derive(Debug, Clone)]
pub struct Network {
    pub autoencoder: AutoEncoder,
    pub speaker_head: Option<Head>,
    pub pd_head: Option<Head>,
    pub params: ParamSet<f32>,
    pub stats: RunningStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkMeta {
    encoder: EncoderSpec,
    speaker_head: Option<HeadSpec>,
    pd_head: Option<HeadSpec>,
}

impl Network {
    /// Build and initialise from the `"init"` substream of `seed`.
    pub fn new(
        spec: EncoderSpec,
        speaker_head: Option<HeadSpec>,
        pd_head: Option<HeadSpec>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = substream(seed, "init");
        Self::with_rng(spec, speaker_head, pd_head, &mut rng)
    }

    pub fn with_rng(
        spec: EncoderSpec,
        speaker_head: Option<HeadSpec>,
        pd_head: Option<HeadSpec>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bottleneck = spec.bottleneck;
        let autoencoder = AutoEncoder::new(spec)?;
        let mut params = ParamSet::new();
        let mut stats = RunningStats::default();
        autoencoder.init_params(rng, &mut params, &mut stats)?;
        let mut build = |hs: Option<HeadSpec>, prefix: &str, group: Group| -> Result<Option<Head>> {
            hs.map(|mut hs| {
                hs.input = bottleneck;
                let head = Head::new(hs, prefix, group)?;
                head.init_params(rng, &mut params)?;
                Ok(head)
            })
            .transpose()
        };
        let speaker_head = build(speaker_head, "id", Group::SpeakerId)?;
        let pd_head = build(pd_head, "pc", Group::PdClassifier)?;
        Ok(Network {
            autoencoder,
            speaker_head,
            pd_head,
            params,
            stats,
        })
    }

    pub fn apply_pending(&mut self, pending: PendingStats) -> Result<()> {
        for (name, batch) in pending {
            self.stats.update(&name, &batch)?;
        }
        Ok(())
    }

    /// Eval-mode bottlenecks for `[N, 1, H, W]` inputs, processed `batch` chunks at a time.
    pub fn embed(&self, chunks: &[&Tensor<f32>], batch: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(chunks.len());
        for group in chunks.chunks(batch.max(1)) {
            let mut tape = Tape::<f32>::new();
            let bound = self.params.bind(&mut tape, GroupMask::NONE);
            let x = tape.leaf(stack_chunks(group)?, false);
            let z = self
                .autoencoder
                .encode(&mut tape, &bound, &self.stats, x, Mode::Eval, &mut Vec::new())?;
            let v = tape.value(z);
            let d = v.shape()[1];
            out.extend(v.data().chunks(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Eval-mode reconstruction loss averaged over `chunks`.
    pub fn reconstruction_loss(&self, chunks: &[&Tensor<f32>], batch: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for group in chunks.chunks(batch.max(1)) {
            let mut tape = Tape::<f32>::new();
            let bound = self.params.bind(&mut tape, GroupMask::NONE);
            let input = stack_chunks(group)?;
            let x = tape.leaf(input.clone(), false);
            let mut pend = Vec::new();
            let z = self.autoencoder.encode(&mut tape, &bound, &self.stats, x, Mode::Eval, &mut pend)?;
            let y = self.autoencoder.decode(&mut tape, &bound, &self.stats, z, Mode::Eval, &mut pend)?;
            let l = tape.mse(y, &input)?;
            total += tape.value(l).data()[0] as f64 * group.len() as f64;
            count += group.len();
        }
        if count == 0 {
            return Err(Error::input("reconstruction loss over zero chunks"));
        }
        Ok(total / count as f64)
    }

    /// Eval-mode bottleneck and reconstruction of every chunk.
    pub fn reconstruct(&self, chunks: &[&Tensor<f32>], batch: usize) -> Result<Vec<(Vec<f32>, Tensor<f32>)>> {
        let mut out = Vec::with_capacity(chunks.len());
        for group in chunks.chunks(batch.max(1)) {
            let mut tape = Tape::<f32>::new();
            let bound = self.params.bind(&mut tape, GroupMask::NONE);
            let x = tape.leaf(stack_chunks(group)?, false);
            let mut pend = Vec::new();
            let z = self.autoencoder.encode(&mut tape, &bound, &self.stats, x, Mode::Eval, &mut pend)?;
            let y = self.autoencoder.decode(&mut tape, &bound, &self.stats, z, Mode::Eval, &mut pend)?;
            let (zv, yv) = (tape.value(z), tape.value(y));
            let d = zv.shape()[1];
            let item: Vec<usize> = yv.shape()[1..].to_vec();
            let len: usize = item.iter().product();
            for (zr, yr) in zv.data().chunks(d).zip(yv.data().chunks(len)) {
                out.push((zr.to_vec(), Tensor::new(item.clone(), yr.to_vec())?));
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, extras: String) -> Result<Checkpoint> {
        let meta = NetworkMeta {
            encoder: self.autoencoder.spec().clone(),
            speaker_head: self.speaker_head.as_ref().map(|h| h.spec().clone()),
            pd_head: self.pd_head.as_ref().map(|h| h.spec().clone()),
        };
        let mut entries: Vec<CheckpointEntry> = self
            .params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                kind: EntryKind::Parameter,
                group: p.group,
                tensor: p.value.clone(),
            })
            .collect();
        for (name, (mean, var)) in self.stats.iter() {
            let group = if name.starts_with("dec.") { Group::Decoder } else { Group::Encoder };
            for (suffix, v) in [("running_mean", mean), ("running_var", var)] {
                entries.push(CheckpointEntry {
                    name: format!("{name}.{suffix}"),
                    kind: EntryKind::Buffer,
                    group,
                    tensor: Tensor::new([v.len()], v.clone())?,
                });
            }
        }
        let extras = serde_json::json!({
            "network": meta,
            "state": serde_json::from_str::<serde_json::Value>(if extras.is_empty() { "null" } else { &extras })
                .map_err(|e| Error::config(format!("checkpoint extras are not JSON: {e}")))?,
        });
        Ok(Checkpoint {
            entries,
            extras: serde_json::to_string(&extras).expect("serialisable"),
        })
    }

    /// Rebuild a network from a checkpoint, returning it with the caller's extra state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let mut extras: serde_json::Value = serde_json::from_str(&ck.extras)
            .map_err(|e| Error::Data(format!("checkpoint extras: {e}")))?;
        let meta: NetworkMeta = serde_json::from_value(extras["network"].take())
            .map_err(|e| Error::Data(format!("checkpoint network metadata: {e}")))?;
        let mut rng = substream(0, "init");
        let mut net = Network::with_rng(meta.encoder, meta.speaker_head, meta.pd_head, &mut rng)?;
        for p in net.params.iter_mut() {
            let e = ck
                .entry(&p.name)
                .filter(|e| e.kind == EntryKind::Parameter)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if e.tensor.shape() != p.value.shape() || e.group != p.group {
                return Err(Error::Data(format!("checkpoint entry `{}` has wrong shape or group", p.name)));
            }
            p.value = e.tensor.clone();
        }
        let names: Vec<String> = net.stats.iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let get = |suffix: &str| -> Result<Vec<f32>> {
                ck.entry(&format!("{name}.{suffix}"))
                    .filter(|e| e.kind == EntryKind::Buffer)
                    .map(|e| e.tensor.data().to_vec())
                    .ok_or_else(|| Error::Data(format!("checkpoint lacks `{name}.{suffix}`")))
            };
            net.stats.set(&name, get("running_mean")?, get("running_var")?);
        }
        Ok((net, extras["state"].take()))
    }
}

/// Stack `[1, H, W]` or `[H, W]` chunks into `[N, 1, H, W]`.
pub fn stack_chunks(chunks: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = chunks.first().ok_or_else(|| Error::input("empty batch"))?;
    let (h, w) = match first.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::shape(format!("chunk must be [H, W] or [1, H, W], got {s:?}"))),
    };
    let mut data = Vec::with_capacity(chunks.len() * h * w);
    for c in chunks {
        if c.len() != h * w {
            return Err(Error::shape("chunks in a batch differ in size"));
        }
        data.extend_from_slice(c.data());
    }
    Tensor::new([chunks.len(), 1, h, w], data)
}
