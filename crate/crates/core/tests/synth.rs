use std::fs;
use std::path::Path;

use advrep::dsp::{featurize, FeatureStore, FeaturizeConfig, Label, MelFrontend, CHUNK_SAMPLES, N_FRAMES, N_MELS};
use advrep::synth::*;

fn corpus(spec: &SynthSpec, dir: &Path) -> FeatureStore {
    generate_corpus(spec, dir).unwrap();
    featurize(&dir.join(MANIFEST_FILE), &FeaturizeConfig::default()).unwrap()
}

fn oracle(sigma_pd: f64, sigma_id: f64) -> OracleReport {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        sigma_pd,
        sigma_id,
        ..SynthSpec::default()
    };
    oracle_classifiers(&corpus(&spec, dir.path()), None).unwrap()
}

#[test]
fn default_corpus_shape() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default();
    let store = corpus(&spec, dir.path());
    assert_eq!(store.speakers.len(), 20);
    assert_eq!(store.utterances.len(), 120);
    assert_eq!(store.speakers.iter().filter(|s| s.label == Label::Pathological).count(), 10);
    // 3 s of speech gives (48000 - 8000) / 4000 + 1 windows.
    assert_eq!(store.chunks.len(), 120 * 11);
    assert!(store.chunks.iter().all(|c| c.values.shape() == [N_MELS, N_FRAMES]));
    assert!(store.report.skipped.is_empty());
}

#[test]
fn generation_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        speakers_per_class: 2,
        utterances_per_speaker: 2,
        duration_s: 1.0,
        ..SynthSpec::default()
    };
    generate_corpus(&spec, a.path()).unwrap();
    generate_corpus(&spec, b.path()).unwrap();
    for name in ["manifest.csv", "synth_spec.json", "wav/pd001_u01.wav", "wav/nt000_u00.wav"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let other = SynthSpec { seed: 1, ..spec };
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&other, c.path()).unwrap();
    assert_ne!(fs::read(a.path().join("wav/nt000_u00.wav")).unwrap(), fs::read(c.path().join("wav/nt000_u00.wav")).unwrap());
}

#[test]
fn utterance_layout() {
    let spec = SynthSpec::default();
    let p = speaker_profile(&spec, "nt000", Label::Neurotypical);
    let x = synthesize(&spec, &p, 0);
    assert_eq!(x.len(), 16000 * 3 + 2 * 3200);
    assert!(x[..3200].iter().chain(&x[x.len() - 3200..]).all(|&v| v == 0.0));
    let peak = x.iter().fold(0f32, |m, v| m.max(v.abs()));
    assert!((peak - 0.5).abs() < 1e-3);
    assert_ne!(synthesize(&spec, &p, 1), x);
}

#[test]
fn identity_and_pathology_streams_are_independent() {
    let spec = SynthSpec::default();
    let stronger = SynthSpec { sigma_pd: 0.5, ..spec.clone() };
    let a = speaker_profile(&spec, "pd003", Label::Pathological);
    let b = speaker_profile(&stronger, "pd003", Label::Pathological);
    assert_eq!(a.resonances, b.resonances);
}

/// High-band minus low-band log-mel energy averaged over a speaker's first chunk.
fn tilt(spec: &SynthSpec, id: &str, label: Label) -> f64 {
    let fe = MelFrontend::new();
    let x = synthesize(spec, &speaker_profile(spec, id, label), 0);
    let m = fe.log_mel(&x[4000..4000 + CHUNK_SAMPLES]).unwrap();
    let band = |b: usize| m.data()[b * N_FRAMES..(b + 1) * N_FRAMES].iter().map(|&v| v as f64).sum::<f64>() / N_FRAMES as f64;
    let low: f64 = (10..30).map(band).sum::<f64>() / 20.0;
    let high: f64 = (100..120).map(band).sum::<f64>() / 20.0;
    high - low
}

/// Expected PD minus NT tilt difference in natural-log power: the planted 6 dB/octave
/// slope around 1 kHz evaluated at the band centres.
fn expected_tilt_gap(sigma_pd: f64) -> f64 {
    let fe = MelFrontend::new();
    let db = |hz: f64| -6.0 * sigma_pd * ((hz + 100.0) / 1000.0).log2();
    let mean = |r: std::ops::Range<usize>| r.clone().map(|b| db(fe.centers()[b])).sum::<f64>() / r.len() as f64;
    (mean(100..120) - mean(10..30)) * std::f64::consts::LN_10 / 10.0
}

#[test]
fn pathology_steepens_the_tilt() {
    // Without identity resonances or the white-noise floor (which swamps the weak top bands).
    let spec = SynthSpec {
        sigma_id: 0.0,
        sigma_n: 0.0,
        ..SynthSpec::default()
    };
    let nt: f64 = (0..4).map(|i| tilt(&spec, &format!("nt{i:03}"), Label::Neurotypical)).sum::<f64>() / 4.0;
    let pd: f64 = (0..4).map(|i| tilt(&spec, &format!("pd{i:03}"), Label::Pathological)).sum::<f64>() / 4.0;
    let want = expected_tilt_gap(spec.sigma_pd);
    let ratio = (pd - nt) / want;
    assert!(want < -4.0 && (0.7..1.3).contains(&ratio), "nt {nt:.2} pd {pd:.2} expected gap {want:.2}");
}

#[test]
fn oracle_tracks_cue_strength() {
    let strong = oracle(1.0, 1.0);
    let weak = oracle(0.3, 1.0);
    let none = oracle(0.0, 1.0);
    assert!(strong.pd_accuracy >= 95.0, "{strong:?}");
    assert!(strong.speaker_accuracy >= 90.0, "{strong:?}");
    assert!(strong.pd_accuracy > weak.pd_accuracy && weak.pd_accuracy > none.pd_accuracy);
    assert!(none.pd_accuracy <= 65.0, "{none:?}");

    // Without identity resonances only the class cue separates speakers, which caps the
    // 20-way guess near 1 in 10 (twice chance); allow sampling slack on 120 test utterances.
    let no_id = oracle(1.0, 0.0);
    assert!(no_id.speaker_accuracy <= 3.5 * no_id.speaker_chance, "{no_id:?}");
    assert!(no_id.speaker_accuracy < strong.speaker_accuracy / 4.0);
}

#[test]
fn shuffled_labels_fall_to_chance() {
    let dir = tempfile::tempdir().unwrap();
    let store = corpus(&SynthSpec::default(), dir.path());
    let r = oracle_classifiers(&store, Some(7)).unwrap();
    assert!(r.pd_accuracy <= 70.0, "{r:?}");
    assert!(r.speaker_accuracy <= 3.0 * r.speaker_chance, "{r:?}");
}

#[test]
fn invalid_spec_is_rejected() {
    let bad = SynthSpec {
        sigma_n: -1.0,
        ..SynthSpec::default()
    };
    let err = bad.validate().unwrap_err();
    assert!(err.to_string().contains("sigma_n"));
    let parsed: Result<SynthSpec, _> = serde_json::from_str(r#"{"sigma_q": 1.0}"#);
    assert!(parsed.unwrap_err().to_string().contains("sigma_q"));
}
