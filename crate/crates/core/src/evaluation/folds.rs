use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureStore, Label};
use crate::error::{Error, Result};
use crate::numerics::{shuffle, substream};

/// Speaker-level partition into `k` label-stratified folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    /// Speaker ids of each fold, sorted.
    pub folds: Vec<Vec<String>>,
}

/// Test, development and training speakers of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub test: Vec<String>,
    pub dev: Vec<String>,
    pub train: Vec<String>,
}

/// Assign speakers to `k` folds: within each label, shuffled speakers are dealt round-robin,
/// the second label continuing where the first stopped so fold sizes stay within one.
pub fn make_folds(speakers: &[(String, Label)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if speakers.len() < 2 * k {
        return Err(Error::Data(format!(
            "{} speakers cannot form {k} stratified folds (need at least {})",
            speakers.len(),
            2 * k
        )));
    }
    let unique: BTreeSet<&str> = speakers.iter().map(|(s, _)| s.as_str()).collect();
    if unique.len() != speakers.len() {
        return Err(Error::Data("duplicate speaker id in fold input".into()));
    }
    let mut rng = substream(seed, "folds");
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for label in [Label::Neurotypical, Label::Pathological] {
        let mut group: Vec<&String> = speakers.iter().filter(|(_, l)| *l == label).map(|(s, _)| s).collect();
        group.sort();
        shuffle(&mut group, &mut rng);
        for s in group {
            folds[next % k].push(s.clone());
            next += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort());
    Ok(FoldPlan { seed, folds })
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Fold `i` is test, fold `i + 1` (cyclically) is dev, the rest is train.
    pub fn split(&self, i: usize) -> Result<FoldSplit> {
        let k = self.k();
        if i >= k {
            return Err(Error::config(format!("fold {i} out of range for {k} folds")));
        }
        let dev = (i + 1) % k;
        let mut train: Vec<String> = (0..k)
            .filter(|&j| j != i && j != dev)
            .flat_map(|j| self.folds[j].iter().cloned())
            .collect();
        train.sort();
        Ok(FoldSplit {
            test: self.folds[i].clone(),
            dev: self.folds[dev].clone(),
            train,
        })
    }

    /// Disjoint folds whose union is exactly `speakers`, sizes within one of each other and
    /// per-label counts within one of each other.
    pub fn validate(&self, speakers: &[(String, Label)]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in &self.folds {
            for s in f {
                if !seen.insert(s.as_str()) {
                    return Err(Error::Invariant(format!("speaker {s} appears in two folds")));
                }
            }
        }
        let all: BTreeSet<&str> = speakers.iter().map(|(s, _)| s.as_str()).collect();
        if seen != all {
            return Err(Error::Invariant("folds do not cover the speaker set".into()));
        }
        let label_of = |s: &str| speakers.iter().find(|(id, _)| id == s).map(|(_, l)| *l);
        let spread = |counts: Vec<usize>| counts.iter().max().unwrap_or(&0) - counts.iter().min().unwrap_or(&0);
        if spread(self.folds.iter().map(Vec::len).collect()) > 1 {
            return Err(Error::Invariant("fold sizes differ by more than one".into()));
        }
        for label in [Label::Neurotypical, Label::Pathological] {
            let counts = self
                .folds
                .iter()
                .map(|f| f.iter().filter(|s| label_of(s) == Some(label)).count())
                .collect();
            if spread(counts) > 1 {
                return Err(Error::Invariant(format!("{label} counts differ by more than one across folds")));
            }
        }
        Ok(())
    }
}

/// Per-speaker utterance partition for the closed-set speaker-ID probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSplit {
    /// Enrolled speaker ids; the position is the probe class.
    pub speakers: Vec<String>,
    /// Utterance indices (into the feature store) of each partition.
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split each speaker's utterances 60/20/20 (at least one per partition). Speakers with fewer
/// than three utterances cannot be enrolled and are skipped with a warning.
pub fn make_probe_split(store: &FeatureStore, speakers: &[String], seed: u64, stream: &str) -> Result<ProbeSplit> {
    let by_speaker = store.utterances_by_speaker();
    let mut rng = substream(seed, stream);
    let mut split = ProbeSplit {
        speakers: Vec::new(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    let mut sorted = speakers.to_vec();
    sorted.sort();
    for id in sorted {
        let s = store
            .speaker_index(&id)
            .ok_or_else(|| Error::Data(format!("speaker {id} not in feature store")))?;
        let mut utts = by_speaker[s].clone();
        let n = utts.len();
        if n < 3 {
            log::warn!("speaker {id} has {n} utterances; not enrolled in the probe");
            continue;
        }
        shuffle(&mut utts, &mut rng);
        let n_test = ((0.2 * n as f64).round() as usize).max(1);
        let n_dev = ((0.2 * n as f64).round() as usize).max(1);
        split.test.extend_from_slice(&utts[..n_test]);
        split.dev.extend_from_slice(&utts[n_test..n_test + n_dev]);
        split.train.extend_from_slice(&utts[n_test + n_dev..]);
        split.speakers.push(id);
    }
    for part in [&mut split.train, &mut split.dev, &mut split.test] {
        part.sort_unstable();
    }
    if split.speakers.len() < 2 {
        return Err(Error::Data("speaker-ID probe needs at least two enrolled speakers".into()));
    }
    Ok(split)
}

impl ProbeSplit {
    /// Disjoint partitions, every enrolled speaker present in all three.
    pub fn validate(&self, store: &FeatureStore) -> Result<()> {
        let sets: Vec<BTreeSet<usize>> = [&self.train, &self.dev, &self.test]
            .iter()
            .map(|p| p.iter().copied().collect())
            .collect();
        if sets[0].intersection(&sets[1]).next().is_some()
            || sets[0].intersection(&sets[2]).next().is_some()
            || sets[1].intersection(&sets[2]).next().is_some()
        {
            return Err(Error::Invariant("probe partitions overlap".into()));
        }
        for id in &self.speakers {
            let s = store
                .speaker_index(id)
                .ok_or_else(|| Error::Invariant(format!("enrolled speaker {id} unknown")))?;
            for (name, set) in ["train", "dev", "test"].iter().zip(&sets) {
                if !set.iter().any(|&u| store.utterances[u].speaker == s) {
                    return Err(Error::Invariant(format!("speaker {id} missing from probe {name}")));
                }
            }
        }
        Ok(())
    }

    /// Probe class of a store speaker index, if enrolled.
    pub fn class_of(&self, store: &FeatureStore, speaker: usize) -> Option<usize> {
        self.speakers.iter().position(|id| *id == store.speakers[speaker].id)
    }
}
