use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter group tag: encoder, decoder, speaker-ID head, or PD classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    Decoder,
    SpeakerId,
    PdClassifier,
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::Encoder,
        Group::Decoder,
        Group::SpeakerId,
        Group::PdClassifier,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Group::Encoder => 0,
            Group::Decoder => 1,
            Group::SpeakerId => 2,
            Group::PdClassifier => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Group> {
        Group::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Encoder => "theta_e",
            Group::Decoder => "theta_d",
            Group::SpeakerId => "theta_id",
            Group::PdClassifier => "theta_pc",
        })
    }
}

/// Set of enabled parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupMask([bool; 4]);

impl GroupMask {
    pub const NONE: GroupMask = GroupMask([false; 4]);
    pub const ALL: GroupMask = GroupMask([true; 4]);

    pub fn of(groups: &[Group]) -> Self {
        let mut m = Self::NONE;
        for &g in groups {
            m.0[g.tag() as usize] = true;
        }
        m
    }

    pub fn contains(self, g: Group) -> bool {
        self.0[g.tag() as usize]
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named trainable tensors, each tagged with exactly one group.
#[derive(Debug, Clone)]
pub struct ParamSet<T: Scalar = f32> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    names: BTreeMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::config(format!("parameter `{name}` is not bound")))
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            group,
            value,
            grad: None,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Merge another set in; names must not collide.
    pub fn extend(&mut self, other: ParamSet<T>) -> Result<()> {
        for p in other.params {
            self.insert(p.name, p.group, p.value)?;
        }
        Ok(())
    }

    /// Record every parameter on `tape`; only groups in `trainable` track gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: GroupMask) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable.contains(p.group)))
            .collect();
        Bound {
            vars,
            names: self.index.clone(),
        }
    }

    /// Add the tape's gradients into each parameter's `grad`.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            let Some(g) = tape.grad(v) else { continue };
            match &mut p.grad {
                Some(existing) => {
                    for (a, &b) in existing.data_mut().iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    p.grad = Some(
                        Tensor::new(p.value.shape().to_vec(), g.to_vec())
                            .expect("gradient matches parameter shape"),
                    );
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn count(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over the raw bytes of every parameter in `group`.
    pub fn checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.insert(p.name.clone(), p.group, p.value.cast())
                .expect("names are unique");
        }
        out
    }

    /// Overwrite values from another set with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .get(&p.name)
                .ok_or_else(|| Error::config(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(format!("shape mismatch for `{}`", p.name)));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Plain SGD with per-group enable flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub learning_rate: f64,
    pub enabled: GroupMask,
}

impl SgdState {
    pub fn new(learning_rate: f64, enabled: GroupMask) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            enabled,
        })
    }
}

/// `theta <- theta - lr * grad` for enabled groups; then all gradients are cleared.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, state: &SgdState) {
    let lr = T::lit(state.learning_rate);
    for p in params.iter_mut() {
        if let (true, Some(g)) = (state.enabled.contains(p.group), &p.grad) {
            for (v, &d) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * d;
            }
        }
        p.grad = None;
    }
}
