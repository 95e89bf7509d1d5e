use serde::{Deserialize, Serialize};

use super::{CHUNK_HOP, CHUNK_SAMPLES};
use crate::error::{Error, Result};

/// Energy VAD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub frame_ms: f64,
    /// Frames within this many dB of the loudest frame count as speech.
    pub threshold_db: f64,
    /// Non-speech gaps of at most this many frames are bridged.
    pub hangover_frames: usize,
    /// Frames below this absolute level (dB re full scale) are never speech.
    pub floor_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 10.0,
            threshold_db: 25.0,
            hangover_frames: 5,
            floor_db: -90.0,
        }
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Sorted, disjoint speech intervals of `samples`.
pub fn energy_vad(samples: &[f32], sample_rate: u32, cfg: &VadConfig) -> Result<Vec<Interval>> {
    if samples.is_empty() {
        return Err(Error::input("energy_vad on an empty clip"));
    }
    let frame = ((cfg.frame_ms * sample_rate as f64 / 1000.0).round() as usize).max(1);
    let levels: Vec<f64> = samples
        .chunks(frame)
        .map(|f| {
            let ms = f.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / f.len() as f64;
            10.0 * (ms + 1e-20).log10()
        })
        .collect();
    let loudest = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gate = (loudest - cfg.threshold_db).max(cfg.floor_db);
    let active: Vec<bool> = levels.iter().map(|&l| l > gate).collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &a) in active.iter().enumerate() {
        if !a {
            continue;
        }
        match runs.last_mut() {
            Some((_, end)) if i - *end <= cfg.hangover_frames => *end = i + 1,
            _ => runs.push((i, i + 1)),
        }
    }
    Ok(runs
        .into_iter()
        .map(|(s, e)| Interval {
            start: s * frame,
            end: (e * frame).min(samples.len()),
        })
        .collect())
}

/// Concatenate the speech intervals.
pub fn extract_speech(samples: &[f32], intervals: &[Interval]) -> Vec<f32> {
    let mut out = Vec::with_capacity(intervals.iter().map(Interval::len).sum());
    for iv in intervals {
        out.extend_from_slice(&samples[iv.start..iv.end]);
    }
    out
}

/// Start offsets of the 500 ms / 50 % overlap windows; a final partial window is dropped.
pub fn segment_offsets(len: usize) -> Vec<usize> {
    if len < CHUNK_SAMPLES {
        return Vec::new();
    }
    (0..=(len - CHUNK_SAMPLES) / CHUNK_HOP)
        .map(|i| i * CHUNK_HOP)
        .collect()
}

pub fn segment(speech: &[f32]) -> Vec<&[f32]> {
    segment_offsets(speech.len())
        .into_iter()
        .map(|o| &speech[o..o + CHUNK_SAMPLES])
        .collect()
}
