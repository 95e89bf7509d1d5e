use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{CHUNK_SAMPLES, FRAME_HOP, FRAME_LEN, LOG_FLOOR, N_FFT, N_FRAMES, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Floor used when a chunk has zero spread.
const STD_FLOOR: f64 = 1e-8;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Triangular filters `[n_mels, n_fft/2 + 1]`, equally spaced on the mel scale between
/// `f_min` and `f_max`, each with unit peak. Returns the filter weights and the centre
/// frequencies in Hz.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let filters = (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            bin_hz
                .iter()
                .map(|&f| {
                    let rise = (f - lo) / (c - lo);
                    let fall = (hi - f) / (hi - c);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect();
    (filters, edges[1..=n_mels].to_vec())
}

/// One-sided power spectrum `|X_k|^2`, `k = 0..=n/2`, of an already windowed frame.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame.len());
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf[..frame.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Sparse filter: first non-zero bin and its weights.
#[derive(Debug, Clone)]
struct Band {
    start: usize,
    weights: Vec<f64>,
}

/// Log-mel analysis of 500 ms windows.
#[derive(Clone)]
pub struct MelFrontend {
    window: Vec<f64>,
    bands: Vec<Band>,
    centers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFrontend").field("bands", &self.bands.len()).finish()
    }
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new()
    }
}

impl MelFrontend {
    pub fn new() -> Self {
        let (filters, centers) = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, 0.0, SAMPLE_RATE as f64 / 2.0);
        let bands = filters
            .into_iter()
            .map(|w| {
                let start = w.iter().position(|&v| v > 0.0).unwrap_or(0);
                let end = w.iter().rposition(|&v| v > 0.0).map_or(start, |e| e + 1);
                Band {
                    start,
                    weights: w[start..end].to_vec(),
                }
            })
            .collect();
        MelFrontend {
            window: hamming(FRAME_LEN),
            bands,
            centers,
            fft: FftPlanner::<f64>::new().plan_fft_forward(N_FFT),
        }
    }

    /// Centre frequency of each band, Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Index of the band whose centre is closest to `hz` on the mel scale.
    pub fn band_of(&self, hz: f64) -> usize {
        let m = hz_to_mel(hz);
        let mut best = 0;
        for (i, &c) in self.centers.iter().enumerate() {
            if (hz_to_mel(c) - m).abs() < (hz_to_mel(self.centers[best]) - m).abs() {
                best = i;
            }
        }
        best
    }

    /// Power spectra of the 125 centred frames, `[frame][bin]`.
    pub fn stft_power(&self, samples: &[f32]) -> Result<Vec<Vec<f64>>> {
        if samples.len() != CHUNK_SAMPLES {
            return Err(Error::shape(format!(
                "mel window needs {CHUNK_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        let half = FRAME_LEN / 2;
        let n = samples.len() as isize;
        // reflect without repeating the edge sample
        let at = |i: isize| -> f64 {
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            samples[j as usize] as f64
        };
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        Ok((0..N_FRAMES)
            .map(|t| {
                let origin = (t * FRAME_HOP) as isize - half as isize;
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = if k < FRAME_LEN {
                        Complex::new(at(origin + k as isize) * self.window[k], 0.0)
                    } else {
                        Complex::new(0.0, 0.0)
                    };
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..N_FFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect())
    }

    /// `[126, 125]` natural-log mel energies.
    pub fn log_mel(&self, samples: &[f32]) -> Result<Tensor<f32>> {
        let frames = self.stft_power(samples)?;
        let mut out = vec![0f32; N_MELS * N_FRAMES];
        for (m, band) in self.bands.iter().enumerate() {
            for (t, spec) in frames.iter().enumerate() {
                let e: f64 = band
                    .weights
                    .iter()
                    .zip(&spec[band.start..])
                    .map(|(w, p)| w * p)
                    .sum();
                out[m * N_FRAMES + t] = (e + LOG_FLOOR).ln() as f32;
            }
        }
        Tensor::new(vec![N_MELS, N_FRAMES], out)
    }
}

/// Z-score over every value of the tensor. A constant input maps to zeros and is flagged.
pub fn zscore_normalize(x: &Tensor<f32>) -> (Tensor<f32>, bool) {
    let n = x.len() as f64;
    let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return (Tensor::zeros(x.shape().to_vec()), true);
    }
    (x.map(|v| ((v as f64 - mean) / std) as f32), false)
}

/// Z-score a group of tensors with statistics pooled over all of them.
pub fn zscore_pooled(xs: &[Tensor<f32>]) -> (Vec<Tensor<f32>>, bool) {
    let n: f64 = xs.iter().map(|x| x.len() as f64).sum();
    if n == 0.0 {
        return (Vec::new(), false);
    }
    let mean = xs.iter().flat_map(|x| x.data()).map(|&v| v as f64).sum::<f64>() / n;
    let var = xs
        .iter()
        .flat_map(|x| x.data())
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return (xs.iter().map(|x| Tensor::zeros(x.shape().to_vec())).collect(), true);
    }
    (
        xs.iter()
            .map(|x| x.map(|v| ((v as f64 - mean) / std) as f32))
            .collect(),
        false,
    )
}

/// Which values share one set of normalisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerChunk,
    PerUtterance,
    None,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mel_scale_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert_relative_eq!(hz_to_mel(700.0), 2595.0 * 2f64.log10(), epsilon = 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        let mut prev = -1.0;
        for f in (0..8000).step_by(7) {
            let m = hz_to_mel(f as f64);
            assert!(m > prev);
            prev = m;
            assert_relative_eq!(mel_to_hz(m), f as f64, epsilon = 1e-8);
        }
    }

    #[test]
    fn hamming_is_symmetric() {
        let w = hamming(FRAME_LEN);
        assert_relative_eq!(w[0], 0.08, epsilon = 1e-12);
        for i in 0..FRAME_LEN {
            assert_relative_eq!(w[i], w[FRAME_LEN - 1 - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn filterbank_shape_and_weights() {
        let (f, centers) = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, 0.0, 8000.0);
        assert_eq!(f.len(), N_MELS);
        assert!(f.iter().all(|r| r.len() == N_FFT / 2 + 1));
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
        for k in 0..=N_FFT / 2 {
            let s: f64 = f.iter().map(|r| r[k]).sum();
            assert!(s <= 1.0 + 1e-12, "bin {k} weight {s}");
        }
        assert!(f.iter().flatten().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn zero_input_is_constant_floor() {
        let fe = MelFrontend::new();
        let m = fe.log_mel(&vec![0.0; CHUNK_SAMPLES]).unwrap();
        assert_eq!(m.shape(), &[N_MELS, N_FRAMES]);
        let c = (LOG_FLOOR).ln() as f32;
        assert!(m.data().iter().all(|&v| v == c));
        assert!(fe.log_mel(&[0.0; 10]).is_err());
    }

    #[test]
    fn zscore_examples() {
        let c = Tensor::full(vec![N_MELS, N_FRAMES], 3.0f32);
        let (z, flag) = zscore_normalize(&c);
        assert!(flag && z.data().iter().all(|&v| v == 0.0));
        let p = Tensor::new(vec![2, 2], vec![0.0f32, 2.0, 2.0, 0.0]).unwrap();
        let (z, flag) = zscore_normalize(&p);
        assert!(!flag);
        assert_eq!(z.data(), &[-1.0, 1.0, 1.0, -1.0]);
    }
}
