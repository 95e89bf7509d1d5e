use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{kaiming_bound, Mode};
use crate::error::{Error, Result};
use crate::numerics::{
    BatchStats, Bound, Group, ParamSet, Rng, Scalar, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM,
    LEAKY_SLOPE,
};

/// Convolutional encoder layout; the decoder mirrors it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_height: usize,
    pub input_width: usize,
    /// Feature maps per conv stage; each stage doubles the previous one.
    pub feature_maps: Vec<usize>,
    pub fc_hidden: usize,
    pub bottleneck: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            input_height: 126,
            input_width: 125,
            feature_maps: vec![16, 32, 64, 128],
            fc_hidden: 256,
            bottleneck: 128,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_maps.is_empty() {
            return Err(Error::config("encoder needs at least one conv stage"));
        }
        if self.feature_maps.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::config(format!(
                "feature maps {:?} must double at every stage",
                self.feature_maps
            )));
        }
        if self.fc_hidden == 0 || self.bottleneck == 0 {
            return Err(Error::config("fc_hidden and bottleneck must be positive"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config("leaky slope must lie in (0, 1)"));
        }
        let (h, w) = *self.ladder().last().expect("non-empty ladder");
        if h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "{}x{} input collapses to zero after {} poolings",
                self.input_height,
                self.input_width,
                self.feature_maps.len()
            )));
        }
        Ok(())
    }

    /// Spatial sizes before each pooling, followed by the final pooled size.
    pub fn ladder(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input_height, self.input_width)];
        for _ in &self.feature_maps {
            let (h, w) = *out.last().expect("non-empty");
            out.push((h / 2, w / 2));
        }
        out
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = *self.ladder().last().expect("non-empty");
        h * w * self.feature_maps.last().copied().unwrap_or(0)
    }

    fn channels_in(&self, stage: usize) -> usize {
        if stage == 0 {
            1
        } else {
            self.feature_maps[stage - 1]
        }
    }
}

/// Batch-norm running statistics keyed by layer name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningStats {
    stats: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl RunningStats {
    pub fn init(&mut self, name: &str, channels: usize) {
        self.stats
            .insert(name.to_string(), (vec![0.0; channels], vec![1.0; channels]));
    }

    pub fn get(&self, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let (m, v) = self
            .stats
            .get(name)
            .ok_or_else(|| Error::config(format!("no running stats for `{name}`")))?;
        Ok((
            m.iter().map(|&x| x as f64).collect(),
            v.iter().map(|&x| x as f64).collect(),
        ))
    }

    /// Exponential update; the running variance uses the unbiased batch estimate.
    pub fn update(&mut self, name: &str, batch: &BatchStats) -> Result<()> {
        let (m, v) = self
            .stats
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no running stats for `{name}`")))?;
        let unbias = batch.count as f64 / (batch.count as f64 - 1.0).max(1.0);
        for c in 0..m.len() {
            m[c] = ((1.0 - BN_MOMENTUM) * m[c] as f64 + BN_MOMENTUM * batch.mean[c]) as f32;
            v[c] = ((1.0 - BN_MOMENTUM) * v[c] as f64 + BN_MOMENTUM * batch.var[c] * unbias) as f32;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &(Vec<f32>, Vec<f32>))> {
        self.stats.iter()
    }

    pub fn set(&mut self, name: &str, mean: Vec<f32>, var: Vec<f32>) {
        self.stats.insert(name.to_string(), (mean, var));
    }
}

/// Batch statistics produced by a train-mode pass, to be folded into [`RunningStats`].
pub type PendingStats = Vec<(String, BatchStats)>;

/// The convolutional auto-encoder: encoder `theta_e` and decoder `theta_d`.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    spec: EncoderSpec,
    ladder: Vec<(usize, usize)>,
}

impl AutoEncoder {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let ladder = spec.ladder();
        let ae = AutoEncoder { spec, ladder };
        let targets = ae.decoder_targets();
        if targets.last() != Some(&(ae.spec.input_height, ae.spec.input_width)) {
            return Err(Error::Invariant(
                "decoder output does not match encoder input".into(),
            ));
        }
        Ok(ae)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// Interpolation targets of the decoder stages: the encoder's pre-pool sizes, reversed.
    pub fn decoder_targets(&self) -> Vec<(usize, usize)> {
        self.ladder[..self.ladder.len() - 1]
            .iter()
            .rev()
            .copied()
            .collect()
    }

    /// Create `theta_e` and `theta_d` plus zero/one running statistics.
    pub fn init_params(&self, rng: &mut Rng, params: &mut ParamSet<f32>, stats: &mut RunningStats) -> Result<()> {
        let s = &self.spec;
        let slope = s.leaky_slope;
        for (i, &f) in s.feature_maps.iter().enumerate() {
            let c = s.channels_in(i);
            let b = kaiming_bound(c * 9, slope);
            params.insert(format!("enc.conv{i}.weight"), Group::Encoder, Tensor::uniform([f, c, 3, 3], b, rng))?;
            params.insert(format!("enc.conv{i}.bias"), Group::Encoder, Tensor::zeros([f]))?;
            params.insert(format!("enc.bn{i}.gamma"), Group::Encoder, Tensor::full([f], 1.0))?;
            params.insert(format!("enc.bn{i}.beta"), Group::Encoder, Tensor::zeros([f]))?;
            stats.init(&format!("enc.bn{i}"), f);
        }
        let flat = s.flat_features();
        linear_params(params, rng, "enc.fc1", Group::Encoder, flat, s.fc_hidden, slope)?;
        linear_params(params, rng, "enc.fc2", Group::Encoder, s.fc_hidden, s.bottleneck, slope)?;

        linear_params(params, rng, "dec.fc1", Group::Decoder, s.bottleneck, s.fc_hidden, slope)?;
        linear_params(params, rng, "dec.fc2", Group::Decoder, s.fc_hidden, flat, slope)?;
        let stages = s.feature_maps.len();
        for j in 0..stages {
            let stage = stages - 1 - j;
            let cin = s.feature_maps[stage];
            let cout = s.channels_in(stage);
            let b = kaiming_bound(cin * 9, slope);
            params.insert(format!("dec.tconv{j}.weight"), Group::Decoder, Tensor::uniform([cin, cout, 3, 3], b, rng))?;
            params.insert(format!("dec.tconv{j}.bias"), Group::Decoder, Tensor::zeros([cout]))?;
            if j + 1 < stages {
                params.insert(format!("dec.bn{j}.gamma"), Group::Decoder, Tensor::full([cout], 1.0))?;
                params.insert(format!("dec.bn{j}.beta"), Group::Decoder, Tensor::zeros([cout]))?;
                stats.init(&format!("dec.bn{j}"), cout);
            }
        }
        Ok(())
    }

    /// `[N, 1, H, W]` chunks to `[N, bottleneck]`.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        stats: &RunningStats,
        x: Var,
        mode: Mode,
        pending: &mut PendingStats,
    ) -> Result<Var> {
        let s = &self.spec;
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != s.input_height || shape[3] != s.input_width {
            return Err(Error::shape(format!(
                "encoder expects [N, 1, {}, {}], got {shape:?}",
                s.input_height, s.input_width
            )));
        }
        let n = shape[0];
        let mut h = x;
        for i in 0..s.feature_maps.len() {
            h = tape.conv2d(h, p.var(&format!("enc.conv{i}.weight"))?, p.var(&format!("enc.conv{i}.bias"))?, 1)?;
            h = tape.maxpool2d(h)?;
            h = batchnorm(tape, p, stats, &format!("enc.bn{i}"), h, mode, pending)?;
            h = tape.leaky_relu(h, s.leaky_slope);
        }
        h = tape.reshape(h, [n, s.flat_features()])?;
        h = tape.linear(h, p.var("enc.fc1.weight")?, p.var("enc.fc1.bias")?)?;
        h = tape.leaky_relu(h, s.leaky_slope);
        tape.linear(h, p.var("enc.fc2.weight")?, p.var("enc.fc2.bias")?)
    }

    /// `[N, bottleneck]` to reconstructed `[N, 1, H, W]`; the last stage is linear.
    pub fn decode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        stats: &RunningStats,
        z: Var,
        mode: Mode,
        pending: &mut PendingStats,
    ) -> Result<Var> {
        let s = &self.spec;
        let n = tape.value(z).shape()[0];
        let mut h = tape.linear(z, p.var("dec.fc1.weight")?, p.var("dec.fc1.bias")?)?;
        h = tape.leaky_relu(h, s.leaky_slope);
        h = tape.linear(h, p.var("dec.fc2.weight")?, p.var("dec.fc2.bias")?)?;
        let (ph, pw) = *self.ladder.last().expect("non-empty");
        let top = *s.feature_maps.last().expect("non-empty");
        h = tape.reshape(h, [n, top, ph, pw])?;
        let targets = self.decoder_targets();
        let stages = targets.len();
        for (j, &target) in targets.iter().enumerate() {
            h = tape.interpolate_nearest(h, target)?;
            h = tape.conv_transpose2d(h, p.var(&format!("dec.tconv{j}.weight"))?, p.var(&format!("dec.tconv{j}.bias"))?, 1)?;
            if j + 1 < stages {
                h = batchnorm(tape, p, stats, &format!("dec.bn{j}"), h, mode, pending)?;
                h = tape.leaky_relu(h, s.leaky_slope);
            }
        }
        Ok(h)
    }
}

fn batchnorm<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    stats: &RunningStats,
    name: &str,
    x: Var,
    mode: Mode,
    pending: &mut PendingStats,
) -> Result<Var> {
    let gamma = p.var(&format!("{name}.gamma"))?;
    let beta = p.var(&format!("{name}.beta"))?;
    match mode {
        Mode::Train => {
            let (y, batch) = tape.batchnorm2d_train(x, gamma, beta, BN_EPS)?;
            pending.push((name.to_string(), batch));
            Ok(y)
        }
        Mode::Eval => {
            let (m, v) = stats.get(name)?;
            tape.batchnorm2d_eval(x, gamma, beta, &m, &v, BN_EPS)
        }
    }
}

pub(crate) fn linear_params(
    params: &mut ParamSet<f32>,
    rng: &mut Rng,
    prefix: &str,
    group: Group,
    fan_in: usize,
    fan_out: usize,
    slope: f64,
) -> Result<()> {
    let b = kaiming_bound(fan_in, slope);
    params.insert(format!("{prefix}.weight"), group, Tensor::uniform([fan_out, fan_in], b, rng))?;
    params.insert(format!("{prefix}.bias"), group, Tensor::zeros([fan_out]))?;
    Ok(())
}
