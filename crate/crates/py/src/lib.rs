//! Python bindings: corpus generation, featurization, the mel front end, networks,
//! the learning-rate schedule, metrics, fold planning and the CLI.

use std::path::PathBuf;

use advrep_core::dsp::{self, FeatureStore, FeaturizeConfig, Label, MelFrontend, CHUNK_SAMPLES};
use advrep_core::evaluation::{self, FoldPlan};
use advrep_core::models::{EncoderSpec, HeadSpec, Network as CoreNetwork};
use advrep_core::numerics::{Checkpoint, Group, Tensor};
use advrep_core::training::{LrSchedule as CoreSchedule, ScheduleConfig};
use advrep_core::{gradsuite, synth, Error};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        2 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn label(s: &str) -> PyResult<Label> {
    match s {
        "nt" | "neurotypical" | "0" => Ok(Label::Neurotypical),
        "pd" | "pathological" | "1" => Ok(Label::Pathological),
        _ => Err(PyValueError::new_err(format!("unknown label {s:?}"))),
    }
}

/// Write a synthetic corpus (WAVs plus manifest) to `out`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, speakers_per_class=10, utterances_per_speaker=6, duration_s=3.0, sigma_id=1.0, sigma_pd=1.0, sigma_n=0.1, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_corpus(
    out: PathBuf,
    speakers_per_class: usize,
    utterances_per_speaker: usize,
    duration_s: f64,
    sigma_id: f64,
    sigma_pd: f64,
    sigma_n: f64,
    seed: u64,
) -> PyResult<String> {
    let spec = synth::SynthSpec {
        speakers_per_class,
        utterances_per_speaker,
        duration_s,
        sigma_id,
        sigma_pd,
        sigma_n,
        seed,
    };
    synth::generate_corpus(&spec, &out).map_err(err)?;
    Ok(out.join(synth::MANIFEST_FILE).display().to_string())
}

/// Featurize a manifest into a store directory; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (manifest, out, allow_partial=false))]
fn featurize<'py>(py: Python<'py>, manifest: PathBuf, out: PathBuf, allow_partial: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = FeaturizeConfig {
        allow_partial,
        ..FeaturizeConfig::default()
    };
    let store = dsp::featurize(&manifest, &cfg).map_err(err)?;
    store.save(&out).map_err(err)?;
    summary(py, &store)
}

fn summary<'py>(py: Python<'py>, store: &FeatureStore) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("speakers", store.speakers.len())?;
    d.set_item("utterances", store.utterances.len())?;
    d.set_item("chunks", store.chunks.len())?;
    d.set_item("failed", store.report.failed.clone())?;
    Ok(d)
}

/// Load a feature store and return its chunks as `(speaker_id, label_class, values)` rows.
#[pyfunction]
fn load_chunks(dir: PathBuf) -> PyResult<Vec<(String, usize, Vec<f32>)>> {
    let store = FeatureStore::load(&dir).map_err(err)?;
    Ok(store
        .chunks
        .iter()
        .map(|c| (store.speakers[c.speaker].id.clone(), c.label.class(), c.values.data().to_vec()))
        .collect())
}

/// Log-mel spectrogram of one 8000-sample chunk, row-major 126 x 125.
#[pyfunction]
fn log_mel(samples: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
    if samples.len() != CHUNK_SAMPLES {
        return Err(PyValueError::new_err(format!("expected {CHUNK_SAMPLES} samples, got {}", samples.len())));
    }
    let m = MelFrontend::new().log_mel(&samples).map_err(err)?;
    let w = m.shape()[1];
    Ok(m.data().chunks(w).map(|r| r.to_vec()).collect())
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    evaluation::roc_auc_binary(&scores, &positive).map_err(err)
}

#[pyfunction]
fn accuracy(predicted: Vec<usize>, labels: Vec<usize>) -> PyResult<f64> {
    evaluation::accuracy(&predicted, &labels).map_err(err)
}

/// Soft vote over per-chunk probability rows: `(class, mean probability of class 1)`.
#[pyfunction]
fn soft_vote(chunks: Vec<Vec<f64>>) -> PyResult<(usize, f64)> {
    evaluation::soft_vote(&chunks).map_err(err)
}

/// Stratified speaker folds. `speakers` holds `(id, label)` pairs with labels "nt"/"pd".
#[pyfunction]
fn make_folds(speakers: Vec<(String, String)>, k: usize, seed: u64) -> PyResult<Vec<Vec<String>>> {
    let spk = speakers
        .into_iter()
        .map(|(id, l)| Ok((id, label(&l)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let plan: FoldPlan = evaluation::make_folds(&spk, k, seed).map_err(err)?;
    plan.validate(&spk).map_err(err)?;
    Ok(plan.folds)
}

/// Run the finite-difference gradient suite; returns `(case, max relative error, passed)`.
#[pyfunction]
#[pyo3(signature = (trials=100, seed=0))]
fn gradcheck(trials: usize, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let rows = gradsuite::gradcheck_suite(trials, seed).map_err(err)?;
    Ok(rows.iter().map(|r| (r.case.to_string(), r.max_rel_error, r.passed())).collect())
}

/// Run the command-line interface with `args` (without the program name); returns the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let mut full = vec!["advrep".to_string()];
    full.extend(args);
    advrep_core::cli::run(full)
}

/// Halve-on-plateau learning-rate schedule.
#[pyclass]
struct LrSchedule {
    inner: CoreSchedule,
}

#[pymethods]
impl LrSchedule {
    #[new]
    #[pyo3(signature = (lr0=0.02, patience=5, floor=0.002, max_epochs=100))]
    fn new(lr0: f64, patience: usize, floor: f64, max_epochs: usize) -> PyResult<Self> {
        let inner = CoreSchedule::new(ScheduleConfig {
            lr0,
            patience,
            floor,
            max_epochs,
        })
        .map_err(err)?;
        Ok(LrSchedule { inner })
    }

    #[getter]
    fn lr(&self) -> f64 {
        self.inner.lr()
    }

    /// Feed one epoch's dev monitor; returns `(next_lr, halved, stop)`.
    fn observe(&mut self, monitor: f64) -> (f64, bool, bool) {
        let s = self.inner.observe(monitor);
        (s.next_lr, s.halved, s.stop)
    }
}

/// Convolutional auto-encoder with optional speaker-ID and PD heads.
#[pyclass]
struct Network {
    inner: CoreNetwork,
}

impl Network {
    fn tensors(&self, chunks: Vec<Vec<f32>>) -> PyResult<Vec<Tensor<f32>>> {
        let spec = self.inner.autoencoder.spec();
        let shape = vec![spec.input_height, spec.input_width];
        chunks
            .into_iter()
            .map(|c| Tensor::new(shape.clone(), c).map_err(err))
            .collect()
    }
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (speakers=None, pd_head=false, seed=0, feature_maps=None))]
    fn new(speakers: Option<usize>, pd_head: bool, seed: u64, feature_maps: Option<Vec<usize>>) -> PyResult<Self> {
        let mut spec = EncoderSpec::default();
        if let Some(maps) = feature_maps {
            spec.feature_maps = maps;
        }
        let inner = CoreNetwork::new(spec, speakers.map(HeadSpec::new), pd_head.then(HeadSpec::pd), seed).map_err(err)?;
        Ok(Network { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        let (inner, _) = CoreNetwork::from_checkpoint(&ck).map_err(err)?;
        Ok(Network { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.to_checkpoint(String::new()).map_err(err)?.save(&path).map_err(err)
    }

    /// Parameter count, optionally restricted to "encoder", "decoder", "speaker_id" or "pd".
    #[pyo3(signature = (group=None))]
    fn parameter_count(&self, group: Option<&str>) -> PyResult<usize> {
        let g = match group {
            None => None,
            Some("encoder") => Some(Group::Encoder),
            Some("decoder") => Some(Group::Decoder),
            Some("speaker_id") => Some(Group::SpeakerId),
            Some("pd") => Some(Group::PdClassifier),
            Some(other) => return Err(PyValueError::new_err(format!("unknown group {other:?}"))),
        };
        Ok(self.inner.params.count(g))
    }

    /// Bottleneck vectors for flattened row-major chunks.
    #[pyo3(signature = (chunks, batch=32))]
    fn embed(&self, chunks: Vec<Vec<f32>>, batch: usize) -> PyResult<Vec<Vec<f32>>> {
        let ts = self.tensors(chunks)?;
        let refs: Vec<&Tensor<f32>> = ts.iter().collect();
        self.inner.embed(&refs, batch).map_err(err)
    }

    /// Mean squared reconstruction error over the chunks.
    #[pyo3(signature = (chunks, batch=32))]
    fn reconstruction_loss(&self, chunks: Vec<Vec<f32>>, batch: usize) -> PyResult<f64> {
        let ts = self.tensors(chunks)?;
        let refs: Vec<&Tensor<f32>> = ts.iter().collect();
        self.inner.reconstruction_loss(&refs, batch).map_err(err)
    }
}

#[pymodule]
#[pyo3(name = "advrep")]
pub fn advrep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(load_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(soft_vote, m)?)?;
    m.add_function(wrap_pyfunction!(make_folds, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<LrSchedule>()?;
    m.add_class::<Network>()?;
    Ok(())
}
