//! Synthetic speech-like corpus with planted speaker-identity and pathology cues, and a
//! linear oracle that measures how separable the cues are after the front end.
//!
//! Every utterance is Gaussian noise shaped by a spectral envelope and an amplitude
//! envelope. Identity lives in per-speaker resonances; pathology adds a steeper spectral
//! tilt and a slower amplitude modulation. The two are drawn from independent streams.

mod oracle;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use oracle::{oracle_classifiers, OracleReport};

use crate::dsp::{hz_to_mel, mel_to_hz, write_manifest, write_wav, Label, ManifestRow, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::{substream, Rng};

pub const SPEC_FILE: &str = "synth_spec.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

const RESONANCES: usize = 4;
/// Peak gain of an identity resonance at unit strength, dB.
const RESONANCE_DB: f64 = 12.0;
/// Extra roll-off of pathological speakers at unit strength, dB per octave.
const TILT_DB_PER_OCTAVE: f64 = 6.0;
const AM_DEPTH: f64 = 0.5;
/// Neurotypical modulation rate, Hz; pathology slows it.
const AM_RATE_HZ: f64 = 5.0;
/// Relative slowdown at unit strength.
const AM_SLOWDOWN: f64 = 0.3;
/// Leading and trailing silence around each utterance, seconds.
const PAD_S: f64 = 0.2;
const PEAK: f64 = 0.5;

/// Corpus shape and cue strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub speakers_per_class: usize,
    pub utterances_per_speaker: usize,
    /// Seconds of speech per utterance.
    pub duration_s: f64,
    pub sigma_id: f64,
    pub sigma_pd: f64,
    pub sigma_n: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            speakers_per_class: 10,
            utterances_per_speaker: 6,
            duration_s: 3.0,
            sigma_id: 1.0,
            sigma_pd: 1.0,
            sigma_n: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// The 100-speaker demonstration scale.
    pub fn full() -> Self {
        SynthSpec {
            speakers_per_class: 50,
            utterances_per_speaker: 10,
            duration_s: 6.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers_per_class == 0 {
            return Err(Error::config("speakers_per_class must be positive"));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::config("utterances_per_speaker must be positive"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config(format!("duration_s must be positive, got {}", self.duration_s)));
        }
        for (name, v) in [("sigma_id", self.sigma_id), ("sigma_pd", self.sigma_pd), ("sigma_n", self.sigma_n)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Speaker ids and labels in manifest order.
    pub fn speakers(&self) -> Vec<(String, Label)> {
        let mut out = Vec::new();
        for (prefix, label) in [("nt", Label::Neurotypical), ("pd", Label::Pathological)] {
            for i in 0..self.speakers_per_class {
                out.push((format!("{prefix}{i:03}"), label));
            }
        }
        out
    }
}

/// Generative parameters of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub label: Label,
    /// (centre Hz, gain dB, width mel) per resonance.
    pub resonances: Vec<(f64, f64, f64)>,
    /// Pathology cue multiplier: 0 for neurotypical, 1 for pathological speakers.
    pub severity: f64,
}

pub fn speaker_profile(spec: &SynthSpec, id: &str, label: Label) -> SpeakerProfile {
    let mut rng = substream(spec.seed, &format!("synth.identity.{id}"));
    let (lo, hi) = (hz_to_mel(200.0), hz_to_mel(6000.0));
    let resonances = (0..RESONANCES)
        .map(|_| {
            let centre = mel_to_hz(rng.random_range(lo..hi));
            let gain = RESONANCE_DB * spec.sigma_id * rng.random_range(0.5..1.0);
            let width = rng.random_range(60.0..160.0);
            (centre, gain, width)
        })
        .collect();
    let severity = match label {
        Label::Neurotypical => 0.0,
        Label::Pathological => 1.0,
    };
    SpeakerProfile {
        id: id.to_string(),
        label,
        resonances,
        severity,
    }
}

/// Log-magnitude envelope in dB at `hz`.
fn envelope_db(p: &SpeakerProfile, spec: &SynthSpec, hz: f64, jitter: &[f64]) -> f64 {
    let base = -12.0 * (1.0 + hz / 1000.0).log2();
    let m = hz_to_mel(hz);
    let identity: f64 = p
        .resonances
        .iter()
        .zip(jitter)
        .map(|(&(c, g, w), j)| g * (-0.5 * ((m - hz_to_mel(c) * (1.0 + j)) / w).powi(2)).exp())
        .sum();
    let tilt = -TILT_DB_PER_OCTAVE * spec.sigma_pd * p.severity * ((hz + 100.0) / 1000.0).log2();
    base + identity + tilt
}

/// One utterance: silence, shaped noise with amplitude modulation, silence.
pub fn synthesize(spec: &SynthSpec, p: &SpeakerProfile, utterance: usize) -> Vec<f32> {
    let mut rng: Rng = substream(spec.seed, &format!("synth.utterance.{}.{utterance}", p.id));
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let jitter: Vec<f64> = (0..RESONANCES).map(|_| rng.random_range(-0.02..0.02)).collect();

    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let hz = bin as f64 * SAMPLE_RATE as f64 / n as f64;
        *c *= 10f64.powf(envelope_db(p, spec, hz, &jitter) / 20.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);

    let rate = AM_RATE_HZ * (1.0 - AM_SLOWDOWN * spec.sigma_pd * p.severity).max(0.2);
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut speech: Vec<f64> = buf
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = i as f64 / SAMPLE_RATE as f64;
            c.re * (1.0 + AM_DEPTH * (2.0 * PI * rate * t + phase).sin())
        })
        .collect();
    let rms = (speech.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    for v in speech.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += spec.sigma_n * rms * z;
    }
    let peak = speech.iter().fold(0f64, |m, v| m.max(v.abs())).max(1e-12);
    let pad = (PAD_S * SAMPLE_RATE as f64) as usize;
    let mut out = vec![0f32; pad];
    out.extend(speech.iter().map(|v| (v * PEAK / peak) as f32));
    out.extend(std::iter::repeat_n(0f32, pad));
    out
}

/// Write WAVs, the manifest and the spec into `dir`. Returns the manifest rows.
pub fn generate_corpus(spec: &SynthSpec, dir: &Path) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for (id, label) in spec.speakers() {
        let profile = speaker_profile(spec, &id, label);
        for u in 0..spec.utterances_per_speaker {
            let utterance_id = format!("u{u:02}");
            let rel = format!("wav/{id}_{utterance_id}.wav");
            write_wav(&dir.join(&rel), &synthesize(spec, &profile, u), SAMPLE_RATE)?;
            rows.push(ManifestRow {
                speaker_id: id.clone(),
                label,
                wav_path: rel.into(),
                utterance_id,
            });
        }
        profiles.push(profile);
    }
    write_manifest(&dir.join(MANIFEST_FILE), &rows)?;
    let record = serde_json::json!({ "spec": spec, "speakers": profiles });
    let path = dir.join(SPEC_FILE);
    fs::write(&path, serde_json::to_string_pretty(&record).expect("serialisable")).map_err(|e| Error::io(&path, e))?;
    log::info!("generated {} utterances of {} speakers in {}", rows.len(), profiles.len(), dir.display());
    Ok(rows)
}
