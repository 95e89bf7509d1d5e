use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureStore;
use crate::error::{Error, Result};
use crate::numerics::{shuffle, substream};

/// Ridge penalty on standardised features.
const RIDGE: f64 = 1.0;

/// Held-out accuracy of linear classifiers on utterance-averaged log-mel features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// PD accuracy on utterances of speakers not used for fitting, percent.
    pub pd_accuracy: f64,
    /// Speaker-ID accuracy on held-out utterances, percent.
    pub speaker_accuracy: f64,
    pub pd_chance: f64,
    pub speaker_chance: f64,
}

/// Mean log-mel band energy of each utterance.
fn utterance_features(store: &FeatureStore) -> Vec<Vec<f64>> {
    let h = store.chunks.first().map_or(0, |c| c.values.shape()[0]);
    store
        .chunks_by_utterance()
        .iter()
        .map(|idx| {
            let mut f = vec![0.0; h];
            let mut count = 0usize;
            for &i in idx {
                let v = &store.chunks[i].values;
                let w = v.shape()[1];
                for (b, row) in v.data().chunks(w).enumerate() {
                    f[b] += row.iter().map(|&x| x as f64).sum::<f64>();
                }
                count += w;
            }
            f.iter_mut().for_each(|x| *x /= count.max(1) as f64);
            f
        })
        .collect()
}

/// One-vs-rest ridge regression onto one-hot targets with an unpenalised intercept.
struct Ridge {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl Ridge {
    fn fit(x: &[&Vec<f64>], y: &[usize], classes: usize) -> Result<Self> {
        let (n, d) = (x.len(), x.first().map_or(0, |r| r.len()));
        if n == 0 {
            return Err(Error::Data("oracle has no training utterances".into()));
        }
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                v.sqrt().max(1e-9)
            })
            .collect();
        let xm = DMatrix::from_fn(n, d, |i, j| (x[i][j] - mean[j]) / scale[j]);
        let mut t = DMatrix::zeros(n, classes);
        for (i, &c) in y.iter().enumerate() {
            t[(i, c)] = 1.0;
        }
        let bias = DVector::from_fn(classes, |c, _| t.column(c).mean());
        for c in 0..classes {
            let b = bias[c];
            t.column_mut(c).add_scalar_mut(-b);
        }
        let gram = xm.transpose() * &xm + DMatrix::identity(d, d) * RIDGE;
        let weights = gram
            .cholesky()
            .ok_or_else(|| Error::Invariant("ridge system is not positive definite".into()))?
            .solve(&(xm.transpose() * t));
        Ok(Ridge { mean, scale, weights, bias })
    }

    fn predict(&self, x: &[f64]) -> usize {
        let z = DVector::from_fn(x.len(), |j, _| (x[j] - self.mean[j]) / self.scale[j]);
        let s = self.weights.transpose() * z + &self.bias;
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        best
    }
}

/// Two-way cross-fitted accuracy: fit on `a`, test on `b`, and the reverse.
fn cross_fit(feats: &[Vec<f64>], labels: &[usize], classes: usize, in_a: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for side in [true, false] {
        let train: Vec<usize> = (0..feats.len()).filter(|&i| in_a[i] == side).collect();
        let test: Vec<usize> = (0..feats.len()).filter(|&i| in_a[i] != side).collect();
        let x: Vec<&Vec<f64>> = train.iter().map(|&i| &feats[i]).collect();
        let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = Ridge::fit(&x, &y, classes)?;
        hits += test.iter().filter(|&&i| model.predict(&feats[i]) == labels[i]).count();
        total += test.len();
    }
    Ok(100.0 * hits as f64 / total.max(1) as f64)
}

/// Reference accuracies of a linear model on the featurised corpus. PD is tested on unseen
/// speakers (alternate speakers of each class), speaker ID on unseen utterances (alternate
/// utterances of each speaker). With `shuffle_seed` the labels are permuted first, giving a
/// chance-level reference.
pub fn oracle_classifiers(store: &FeatureStore, shuffle_seed: Option<u64>) -> Result<OracleReport> {
    if store.utterances.is_empty() {
        return Err(Error::Data("oracle needs a non-empty feature store".into()));
    }
    let feats = utterance_features(store);
    let speaker_of: Vec<usize> = store.utterances.iter().map(|u| u.speaker).collect();
    let mut pd: Vec<usize> = speaker_of.iter().map(|&s| store.speakers[s].label.class()).collect();
    let mut spk = speaker_of.clone();
    if let Some(seed) = shuffle_seed {
        shuffle(&mut pd, &mut substream(seed, "oracle.shuffle.pd"));
        shuffle(&mut spk, &mut substream(seed, "oracle.shuffle.speaker"));
    }

    let mut rank_in_class = vec![0usize; store.speakers.len()];
    let mut seen = [0usize; 2];
    for (s, info) in store.speakers.iter().enumerate() {
        let c = info.label.class();
        rank_in_class[s] = seen[c];
        seen[c] += 1;
    }
    let speaker_side: Vec<bool> = speaker_of.iter().map(|&s| rank_in_class[s] % 2 == 0).collect();
    let pd_accuracy = cross_fit(&feats, &pd, 2, &speaker_side)?;

    let mut rank_in_speaker = vec![0usize; store.utterances.len()];
    for utts in store.utterances_by_speaker() {
        for (r, u) in utts.into_iter().enumerate() {
            rank_in_speaker[u] = r;
        }
    }
    let utt_side: Vec<bool> = rank_in_speaker.iter().map(|r| r % 2 == 0).collect();
    let speaker_accuracy = cross_fit(&feats, &spk, store.speakers.len(), &utt_side)?;

    let n_pd = speaker_of.iter().filter(|&&s| store.speakers[s].label.class() == 1).count();
    let majority = n_pd.max(speaker_of.len() - n_pd) as f64 / speaker_of.len() as f64;
    Ok(OracleReport {
        pd_accuracy,
        speaker_accuracy,
        pd_chance: 100.0 * majority,
        speaker_chance: 100.0 / store.speakers.len() as f64,
    })
}
