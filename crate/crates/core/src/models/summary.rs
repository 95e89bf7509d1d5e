use serde::Serialize;

use super::{EncoderSpec, HeadSpec};

/// One row of the architecture summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

fn row(name: impl Into<String>, input: &[usize], output: &[usize], params: usize) -> LayerSummary {
    LayerSummary {
        name: name.into(),
        input: input.to_vec(),
        output: output.to_vec(),
        params,
    }
}

/// Per-layer shapes (without the batch axis) and trainable parameter counts.
pub fn architecture_summary(spec: &EncoderSpec, heads: &[(&str, &HeadSpec)]) -> Vec<LayerSummary> {
    let mut rows = Vec::new();
    let ladder = spec.ladder();
    let mut c_in = 1;
    for (i, &f) in spec.feature_maps.iter().enumerate() {
        let (h, w) = ladder[i];
        let (ph, pw) = ladder[i + 1];
        rows.push(row(format!("enc.conv{i}"), &[c_in, h, w], &[f, h, w], f * c_in * 9 + f));
        rows.push(row(format!("enc.pool{i}"), &[f, h, w], &[f, ph, pw], 0));
        rows.push(row(format!("enc.bn{i}"), &[f, ph, pw], &[f, ph, pw], 2 * f));
        rows.push(row(format!("enc.lrelu{i}"), &[f, ph, pw], &[f, ph, pw], 0));
        c_in = f;
    }
    let flat = spec.flat_features();
    rows.push(row("enc.fc1", &[flat], &[spec.fc_hidden], flat * spec.fc_hidden + spec.fc_hidden));
    rows.push(row("enc.fc2", &[spec.fc_hidden], &[spec.bottleneck], spec.fc_hidden * spec.bottleneck + spec.bottleneck));
    rows.push(row("dec.fc1", &[spec.bottleneck], &[spec.fc_hidden], spec.bottleneck * spec.fc_hidden + spec.fc_hidden));
    rows.push(row("dec.fc2", &[spec.fc_hidden], &[flat], spec.fc_hidden * flat + flat));
    let stages = spec.feature_maps.len();
    let (mut h, mut w) = ladder[stages];
    for j in 0..stages {
        let stage = stages - 1 - j;
        let cin = spec.feature_maps[stage];
        let cout = if stage == 0 { 1 } else { spec.feature_maps[stage - 1] };
        let (th, tw) = ladder[stage];
        rows.push(row(format!("dec.interp{j}"), &[cin, h, w], &[cin, th, tw], 0));
        rows.push(row(format!("dec.tconv{j}"), &[cin, th, tw], &[cout, th, tw], cin * cout * 9 + cout));
        if j + 1 < stages {
            rows.push(row(format!("dec.bn{j}"), &[cout, th, tw], &[cout, th, tw], 2 * cout));
            rows.push(row(format!("dec.lrelu{j}"), &[cout, th, tw], &[cout, th, tw], 0));
        }
        (h, w) = (th, tw);
    }
    for (prefix, hs) in heads {
        rows.push(row(format!("{prefix}.dropout"), &[hs.input], &[hs.input], 0));
        rows.push(row(format!("{prefix}.fc1"), &[hs.input], &[hs.hidden], hs.input * hs.hidden + hs.hidden));
        rows.push(row(format!("{prefix}.fc2"), &[hs.hidden], &[hs.outputs], hs.hidden * hs.outputs + hs.outputs));
    }
    rows
}

impl EncoderSpec {
    /// Trainable parameters of the encoder and of the decoder.
    pub fn param_count(&self) -> (usize, usize) {
        let rows = architecture_summary(self, &[]);
        let sum = |p: &str| rows.iter().filter(|r| r.name.starts_with(p)).map(|r| r.params).sum();
        (sum("enc."), sum("dec."))
    }
}

impl HeadSpec {
    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.outputs + self.outputs
    }
}
