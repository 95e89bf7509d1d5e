use serde::{Deserialize, Serialize};

use super::autoencoder::linear_params;
use super::Mode;
use crate::error::{Error, Result};
use crate::numerics::{Bound, Group, ParamSet, Rng, Scalar, Tape, Var, LEAKY_SLOPE};

/// Two-layer classifier on the bottleneck, with input dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl HeadSpec {
    pub fn new(outputs: usize) -> Self {
        HeadSpec {
            input: 128,
            hidden: 64,
            outputs,
            dropout: 0.2,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    /// The binary PD classifier.
    pub fn pd() -> Self {
        Self::new(2)
    }
}

#[derive(Debug, Clone)]
pub struct Head {
    spec: HeadSpec,
    prefix: String,
    group: Group,
}

impl Head {
    pub fn new(spec: HeadSpec, prefix: impl Into<String>, group: Group) -> Result<Self> {
        if spec.outputs < 2 {
            return Err(Error::config(format!(
                "a classifier head needs at least 2 outputs, got {}",
                spec.outputs
            )));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::config("head dropout must lie in [0, 1)"));
        }
        Ok(Head {
            spec,
            prefix: prefix.into(),
            group,
        })
    }

    pub fn spec(&self) -> &HeadSpec {
        &self.spec
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn init_params(&self, rng: &mut Rng, params: &mut ParamSet<f32>) -> Result<()> {
        let s = &self.spec;
        linear_params(params, rng, &format!("{}.fc1", self.prefix), self.group, s.input, s.hidden, s.leaky_slope)?;
        linear_params(params, rng, &format!("{}.fc2", self.prefix), self.group, s.hidden, s.outputs, s.leaky_slope)
    }

    /// Logits `[N, K]`; softmax is left to the loss or to prediction.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let h = tape.dropout(x, self.spec.dropout, mode == Mode::Train, rng)?;
        let h = tape.linear(h, p.var(&format!("{}.fc1.weight", self.prefix))?, p.var(&format!("{}.fc1.bias", self.prefix))?)?;
        let h = tape.leaky_relu(h, self.spec.leaky_slope);
        tape.linear(h, p.var(&format!("{}.fc2.weight", self.prefix))?, p.var(&format!("{}.fc2.bias", self.prefix))?)
    }
}
