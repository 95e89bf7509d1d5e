use std::f64::consts::PI;
use std::fs;

use advrep::dsp::*;
use advrep::numerics::substream;
use rand::Rng as _;

fn tone(hz: f64, amp: f64, n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| (amp * (2.0 * PI * hz * i as f64 / SAMPLE_RATE as f64).sin()) as f32)
        .collect()
}

#[test]
fn parseval_holds_for_one_sided_spectrum() {
    let mut rng = substream(3, "parseval");
    for n in [8usize, 64, 512] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = power_spectrum(&x);
        assert_eq!(p.len(), n / 2 + 1);
        let full = p[0] + p[n / 2] + 2.0 * p[1..n / 2].iter().sum::<f64>();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        approx::assert_relative_eq!(full, n as f64 * energy, max_relative = 1e-10);
    }
}

#[test]
fn htk_mel_scale_reference_points() {
    // 2595 log10(1 + f / 700)
    assert!((hz_to_mel(1000.0) - 999.9855).abs() < 1e-3);
    assert!((hz_to_mel(8000.0) - 2840.0230).abs() < 1e-3);
    for hz in [0.0, 123.0, 4000.0, 7999.0] {
        approx::assert_relative_eq!(mel_to_hz(hz_to_mel(hz)), hz, epsilon = 1e-9);
    }
}

#[test]
fn filterbank_centres_are_equally_spaced_in_mel() {
    let (filters, centers) = mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE, 0.0, 8000.0);
    assert_eq!(filters.len(), 126);
    assert_eq!(filters[0].len(), 257);
    let step = hz_to_mel(8000.0) / 127.0;
    for (i, c) in centers.iter().enumerate() {
        assert!((hz_to_mel(*c) - step * (i + 1) as f64).abs() < 1e-6);
    }
}

#[test]
fn one_khz_tone_peaks_in_its_band() {
    let fe = MelFrontend::new();
    let x = fe.log_mel(&tone(1000.0, 0.5, CHUNK_SAMPLES)).unwrap();
    assert_eq!(x.shape(), &[N_MELS, N_FRAMES]);
    let expect = fe.band_of(1000.0);
    let c = fe.centers()[expect];
    assert!((hz_to_mel(c) - hz_to_mel(1000.0)).abs() < 12.0);
    for t in [0, 60, 124] {
        let col: Vec<f32> = (0..N_MELS).map(|m| x.data()[m * N_FRAMES + t]).collect();
        let peak = (0..N_MELS).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
        assert!(peak.abs_diff(expect) <= 1, "frame {t}: peak {peak}, expected {expect}");
    }
}

#[test]
fn log_mel_rejects_wrong_length() {
    assert!(MelFrontend::new().log_mel(&[0.0; 100]).is_err());
}

#[test]
fn zscore_per_chunk() {
    let mut rng = substream(1, "z");
    let x = advrep::numerics::Tensor::new(
        vec![N_MELS, N_FRAMES],
        (0..N_MELS * N_FRAMES).map(|_| rng.random_range(-30.0f32..5.0)).collect(),
    )
    .unwrap();
    let (z, degenerate) = zscore_normalize(&x);
    assert!(!degenerate);
    let n = z.len() as f64;
    let mean = z.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = z.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-5);
    assert!((var - 1.0).abs() < 1e-4);

    let flat = advrep::numerics::Tensor::full(vec![N_MELS, N_FRAMES], -23.0f32);
    let (z, degenerate) = zscore_normalize(&flat);
    assert!(degenerate);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn vad_finds_padded_tone() {
    let mut x = vec![0.0f32; 8000];
    x.extend(tone(440.0, 0.5, 16000));
    x.extend(vec![0.0f32; 8000]);
    let iv = energy_vad(&x, SAMPLE_RATE, &VadConfig::default()).unwrap();
    assert_eq!(iv.len(), 1);
    assert!(iv[0].start.abs_diff(8000) <= 160);
    assert!(iv[0].end.abs_diff(24000) <= 160);
    assert!(energy_vad(&vec![0.0; 1600], SAMPLE_RATE, &VadConfig::default()).unwrap().is_empty());
}

#[test]
fn segmentation_counts() {
    for (len, n) in [(7999, 0), (8000, 1), (11999, 1), (12000, 2), (48000, 11)] {
        assert_eq!(segment_offsets(len).len(), n, "len {len}");
    }
    let x = vec![0.25f32; 20000];
    for w in segment(&x) {
        assert_eq!(w.len(), CHUNK_SAMPLES);
    }
}

fn write_corpus(dir: &std::path::Path, rows: &[(&str, &str, &str)]) -> std::path::PathBuf {
    let mut out = Vec::new();
    for (spk, label, utt) in rows {
        let rel = format!("{spk}_{utt}.wav");
        let mut x = vec![0.0f32; 3200];
        x.extend(tone(300.0 + 50.0 * out.len() as f64, 0.4, 20000));
        x.extend(vec![0.0f32; 3200]);
        write_wav(&dir.join(&rel), &x, SAMPLE_RATE).unwrap();
        out.push(ManifestRow {
            speaker_id: spk.to_string(),
            label: label.parse().unwrap(),
            wav_path: rel.into(),
            utterance_id: utt.to_string(),
        });
    }
    let path = dir.join("manifest.csv");
    write_manifest(&path, &out).unwrap();
    path
}

#[test]
fn featurize_round_trips_through_store() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &[("a", "nt", "u0"), ("a", "nt", "u1"), ("b", "pd", "u0")]);
    let store = featurize(&manifest, &FeaturizeConfig::default()).unwrap();
    assert_eq!(store.speakers.len(), 2);
    assert_eq!(store.utterances.len(), 3);
    assert_eq!(store.chunks.len(), 3 * 4);
    for c in &store.chunks {
        assert_eq!(c.values.shape(), &[N_MELS, N_FRAMES]);
    }
    let out = dir.path().join("features");
    store.save(&out).unwrap();
    let back = FeatureStore::load(&out).unwrap();
    assert_eq!(back.chunks, store.chunks);
    assert_eq!(back.speakers, store.speakers);
    assert_eq!(back.report, store.report);

    let again = featurize(&manifest, &FeaturizeConfig::default()).unwrap();
    assert_eq!(again.chunks, store.chunks);
}

#[test]
fn empty_manifest_gives_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    write_manifest(&manifest, &[]).unwrap();
    let store = featurize(&manifest, &FeaturizeConfig::default()).unwrap();
    assert!(store.chunks.is_empty() && store.speakers.is_empty());
    store.save(&dir.path().join("f")).unwrap();
    assert!(FeatureStore::load(&dir.path().join("f")).unwrap().chunks.is_empty());
}

#[test]
fn corrupt_wav_follows_partial_policy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &[("a", "nt", "u0"), ("b", "pd", "u0")]);
    fs::write(dir.path().join("b_u0.wav"), b"not a wav file").unwrap();
    let err = featurize(&manifest, &FeaturizeConfig::default()).unwrap_err();
    assert!(err.to_string().contains("b_u0.wav"), "{err}");
    let cfg = FeaturizeConfig {
        allow_partial: true,
        ..Default::default()
    };
    let store = featurize(&manifest, &cfg).unwrap();
    assert_eq!(store.speakers.len(), 1);
    assert_eq!(store.report.failed.len(), 1);
}

#[test]
fn wrong_sample_rate_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &[("a", "nt", "u0")]);
    write_wav(&dir.path().join("a_u0.wav"), &tone(440.0, 0.4, 20000), 8000).unwrap();
    let err = featurize(&manifest, &FeaturizeConfig::default()).unwrap_err();
    assert!(err.to_string().contains("8000 Hz"), "{err}");
}

#[test]
fn manifest_rejects_conflicting_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "speaker_id,label,wav_path,utterance_id\na,nt,x.wav,u0\na,pd,y.wav,u1\n").unwrap();
    assert!(read_manifest(&path).is_err());
}
