use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{clip_to_chunks, read_manifest, read_wav, AudioClip, Label, MelFrontend, NormScope, VadConfig};
use super::{N_FRAMES, N_MELS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"ADVFEAT\0";
const VERSION: u32 = 1;
pub const FEATURES_FILE: &str = "features.bin";
pub const INDEX_FILE: &str = "features.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerInfo {
    pub id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceInfo {
    pub id: String,
    pub speaker: usize,
}

/// One stored chunk; indices point into the store's speaker and utterance tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub speaker: usize,
    pub label: Label,
    pub utterance: usize,
    pub chunk_index: usize,
    pub values: Tensor<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizeConfig {
    #[serde(default)]
    pub vad: VadConfig,
    #[serde(default)]
    pub norm: NormScope,
    /// Skip unreadable or malformed WAVs instead of failing the whole run.
    #[serde(default)]
    pub allow_partial: bool,
}

/// What happened during featurisation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeReport {
    pub utterances: usize,
    pub chunks: usize,
    /// Clips with no detected speech or less than one chunk of it.
    pub skipped: Vec<String>,
    /// Chunks that were constant and normalised to zeros.
    pub degenerate: usize,
    /// Files that could not be read, with the reason.
    #[serde(default)]
    pub failed: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    version: u32,
    config: FeaturizeConfig,
    speakers: Vec<SpeakerInfo>,
    utterances: Vec<UtteranceInfo>,
    report: FeaturizeReport,
}

/// All chunks of a corpus, ordered by speaker, utterance and chunk index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    pub speakers: Vec<SpeakerInfo>,
    pub utterances: Vec<UtteranceInfo>,
    pub chunks: Vec<ChunkRecord>,
    pub config: FeaturizeConfig,
    pub report: FeaturizeReport,
}

impl FeatureStore {
    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s.id == id)
    }

    /// Chunk indices of each speaker.
    pub fn chunks_by_speaker(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.speakers.len()];
        for (i, c) in self.chunks.iter().enumerate() {
            out[c.speaker].push(i);
        }
        out
    }

    /// Chunk indices of each utterance.
    pub fn chunks_by_utterance(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.utterances.len()];
        for (i, c) in self.chunks.iter().enumerate() {
            out[c.utterance].push(i);
        }
        out
    }

    /// Utterance indices of each speaker.
    pub fn utterances_by_speaker(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.speakers.len()];
        for (i, u) in self.utterances.iter().enumerate() {
            out[u.speaker].push(i);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join(FEATURES_FILE);
        let file = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&bin, e);
        w.write_all(MAGIC).map_err(io)?;
        for v in [
            VERSION,
            self.speakers.len() as u32,
            self.utterances.len() as u32,
            self.chunks.len() as u32,
            N_MELS as u32,
            N_FRAMES as u32,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for c in &self.chunks {
            if c.values.shape() != [N_MELS, N_FRAMES] {
                return Err(Error::shape(format!("chunk shape {:?}", c.values.shape())));
            }
            w.write_all(&(c.speaker as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&[c.label.class() as u8]).map_err(io)?;
            w.write_all(&(c.utterance as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&(c.chunk_index as u32).to_le_bytes()).map_err(io)?;
            for v in c.values.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        let index = Index {
            version: VERSION,
            config: self.config.clone(),
            speakers: self.speakers.clone(),
            utterances: self.utterances.clone(),
            report: self.report.clone(),
        };
        let idx = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::format(&idx, e.to_string()))?;
        fs::write(&idx, text).map_err(|e| Error::io(&idx, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let idx = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&idx).map_err(|e| Error::io(&idx, e))?;
        let index: Index = serde_json::from_str(&text).map_err(|e| Error::format(&idx, e.to_string()))?;
        let bin = dir.join(FEATURES_FILE);
        let file = fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut r = BufReader::new(file);
        let bad = |reason: &str| Error::format(&bin, reason.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a feature store"));
        }
        let mut header = [0u32; 6];
        for h in header.iter_mut() {
            *h = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
        }
        let [version, n_spk, n_utt, n_chunks, h, w] = header;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if (n_spk as usize, n_utt as usize) != (index.speakers.len(), index.utterances.len()) {
            return Err(bad("header disagrees with index"));
        }
        if (h as usize, w as usize) != (N_MELS, N_FRAMES) {
            return Err(bad(&format!("chunk shape {h}x{w}")));
        }
        let mut chunks = Vec::with_capacity(n_chunks as usize);
        let mut raw = vec![0u8; N_MELS * N_FRAMES * 4];
        for i in 0..n_chunks {
            let trunc = |_| bad(&format!("truncated at chunk {i}"));
            let speaker = read_u32(&mut r).map_err(trunc)? as usize;
            let mut lab = [0u8; 1];
            r.read_exact(&mut lab).map_err(trunc)?;
            let utterance = read_u32(&mut r).map_err(trunc)? as usize;
            let chunk_index = read_u32(&mut r).map_err(trunc)? as usize;
            r.read_exact(&mut raw).map_err(trunc)?;
            let label = Label::from_class(lab[0] as usize).ok_or_else(|| bad("bad label byte"))?;
            if speaker >= index.speakers.len() || utterance >= index.utterances.len() {
                return Err(bad(&format!("chunk {i} index out of range")));
            }
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            chunks.push(ChunkRecord {
                speaker,
                label,
                utterance,
                chunk_index,
                values: Tensor::new(vec![N_MELS, N_FRAMES], values)?,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(&bin, e))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(FeatureStore {
            speakers: index.speakers,
            utterances: index.utterances,
            chunks,
            config: index.config,
            report: index.report,
        })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Run the front end over every utterance of a manifest.
pub fn featurize(manifest: &Path, cfg: &FeaturizeConfig) -> Result<FeatureStore> {
    let rows = read_manifest(manifest)?;
    let frontend = MelFrontend::new();
    let mut speakers: BTreeMap<String, usize> = BTreeMap::new();
    let mut store = FeatureStore {
        config: cfg.clone(),
        ..Default::default()
    };
    if rows.is_empty() {
        log::warn!("{}: manifest lists no utterances, writing an empty store", manifest.display());
    }
    for row in &rows {
        let samples = match read_wav(&row.wav_path) {
            Ok(s) => s,
            Err(e @ (Error::Data(_) | Error::Format { .. } | Error::Io { .. })) => {
                log::warn!("{}/{}: {e}", row.speaker_id, row.utterance_id);
                store.report.failed.push(e.to_string());
                continue;
            }
            Err(e) => return Err(e),
        };
        let clip = AudioClip {
            samples,
            sample_rate: SAMPLE_RATE,
            speaker_id: row.speaker_id.clone(),
            label: row.label,
            utterance_id: row.utterance_id.clone(),
        };
        let chunks = clip_to_chunks(&clip, &frontend, &cfg.vad, cfg.norm)?;
        store.report.utterances += 1;
        if chunks.is_empty() {
            log::warn!("{}/{}: no complete speech chunk", row.speaker_id, row.utterance_id);
            store.report.skipped.push(format!("{}/{}", row.speaker_id, row.utterance_id));
            continue;
        }
        let speaker = *speakers.entry(row.speaker_id.clone()).or_insert_with(|| {
            store.speakers.push(SpeakerInfo {
                id: row.speaker_id.clone(),
                label: row.label,
            });
            store.speakers.len() - 1
        });
        let utterance = store.utterances.len();
        store.utterances.push(UtteranceInfo {
            id: row.utterance_id.clone(),
            speaker,
        });
        for c in chunks {
            store.report.degenerate += usize::from(c.degenerate);
            store.chunks.push(ChunkRecord {
                speaker,
                label: c.label,
                utterance,
                chunk_index: c.chunk_index,
                values: c.values,
            });
        }
    }
    store.report.chunks = store.chunks.len();
    if !store.report.failed.is_empty() && !cfg.allow_partial {
        return Err(Error::Data(format!(
            "{} of {} files failed:\n  {}",
            store.report.failed.len(),
            rows.len(),
            store.report.failed.join("\n  ")
        )));
    }
    if store.chunks.is_empty() && !rows.is_empty() {
        log::warn!("{}: no usable speech in any clip", manifest.display());
    }
    log::info!(
        "featurised {} utterances of {} speakers into {} chunks",
        store.utterances.len(),
        store.speakers.len(),
        store.chunks.len()
    );
    Ok(store)
}
