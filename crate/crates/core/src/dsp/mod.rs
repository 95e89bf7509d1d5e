//! 16 kHz audio to z-scored 126x125 log-mel chunks: WAV I/O, energy VAD, segmentation,
//! mel spectrogram, normalisation and the on-disk feature store.

mod featurestore;
mod manifest;
mod mel;
mod vad;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use featurestore::{featurize, ChunkRecord, FeatureStore, FeaturizeConfig, FeaturizeReport, SpeakerInfo, UtteranceInfo};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use mel::{
    hamming, hz_to_mel, mel_filterbank, mel_to_hz, power_spectrum, zscore_normalize, zscore_pooled, MelFrontend, NormScope,
};
pub use vad::{energy_vad, extract_speech, segment, segment_offsets, Interval, VadConfig};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 500 ms analysis chunk.
pub const CHUNK_SAMPLES: usize = 8_000;
/// 50 % chunk overlap.
pub const CHUNK_HOP: usize = 4_000;
/// 32 ms analysis window.
pub const FRAME_LEN: usize = 512;
/// 4 ms frame shift.
pub const FRAME_HOP: usize = 64;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 126;
pub const N_FRAMES: usize = 125;
pub const LOG_FLOOR: f64 = 1e-10;

/// Clinical label of a speaker. `Pathological` is class 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Neurotypical,
    Pathological,
}

impl Label {
    pub fn class(self) -> usize {
        match self {
            Label::Neurotypical => 0,
            Label::Pathological => 1,
        }
    }

    pub fn from_class(c: usize) -> Option<Label> {
        match c {
            0 => Some(Label::Neurotypical),
            1 => Some(Label::Pathological),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Neurotypical => "neurotypical",
            Label::Pathological => "pathological",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neurotypical" | "nt" | "hc" | "0" => Ok(Label::Neurotypical),
            "pathological" | "pd" | "1" => Ok(Label::Pathological),
            other => Err(Error::input(format!("unknown label `{other}`"))),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One mono recording with its provenance.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub label: Label,
    pub utterance_id: String,
}

/// A z-scored `[126, 125]` log-mel chunk.
#[derive(Debug, Clone)]
pub struct SpectrogramChunk {
    pub values: crate::numerics::Tensor<f32>,
    pub speaker_id: String,
    pub label: Label,
    pub utterance_id: String,
    pub chunk_index: usize,
    /// Set when the chunk was constant and normalised to zeros.
    pub degenerate: bool,
}

/// VAD, segmentation, mel analysis and normalisation of one clip.
pub fn clip_to_chunks(
    clip: &AudioClip,
    frontend: &MelFrontend,
    vad: &VadConfig,
    scope: NormScope,
) -> Result<Vec<SpectrogramChunk>> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            clip.utterance_id, clip.sample_rate
        )));
    }
    let intervals = energy_vad(&clip.samples, clip.sample_rate, vad)?;
    if intervals.is_empty() {
        log::warn!("{}: no speech detected, clip skipped", clip.utterance_id);
        return Ok(Vec::new());
    }
    let speech = extract_speech(&clip.samples, &intervals);
    let mels = segment(&speech)
        .into_iter()
        .map(|w| frontend.log_mel(w))
        .collect::<Result<Vec<_>>>()?;
    let normed: Vec<(crate::numerics::Tensor<f32>, bool)> = match scope {
        NormScope::PerChunk => mels.iter().map(zscore_normalize).collect(),
        NormScope::PerUtterance => {
            let (xs, flag) = zscore_pooled(&mels);
            xs.into_iter().map(|x| (x, flag)).collect()
        }
        NormScope::None => mels.into_iter().map(|x| (x, false)).collect(),
    };
    Ok(normed
        .into_iter()
        .enumerate()
        .map(|(i, (values, degenerate))| SpectrogramChunk {
            values,
            speaker_id: clip.speaker_id.clone(),
            label: clip.label,
            utterance_id: clip.utterance_id.clone(),
            chunk_index: i,
            degenerate,
        })
        .collect())
}
