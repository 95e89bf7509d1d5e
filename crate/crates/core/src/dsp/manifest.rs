use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

/// One utterance of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub speaker_id: String,
    pub label: Label,
    pub wav_path: PathBuf,
    pub utterance_id: String,
}

/// Read a comma-separated manifest with a header row. Relative WAV paths are resolved
/// against the manifest's directory. Rows come back sorted by speaker then utterance.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (line, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let mut row = rec.map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        if row.speaker_id.is_empty() || row.utterance_id.is_empty() {
            return Err(Error::format(path, format!("row {}: empty identifier", line + 2)));
        }
        if row.wav_path.is_relative() {
            row.wav_path = base.join(&row.wav_path);
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| (&a.speaker_id, &a.utterance_id).cmp(&(&b.speaker_id, &b.utterance_id)));
    for w in rows.windows(2) {
        if w[0].speaker_id == w[1].speaker_id && w[0].utterance_id == w[1].utterance_id {
            return Err(Error::format(
                path,
                format!("duplicate utterance {}/{}", w[0].speaker_id, w[0].utterance_id),
            ));
        }
        if w[0].speaker_id == w[1].speaker_id && w[0].label != w[1].label {
            return Err(Error::format(path, format!("speaker {} has two labels", w[0].speaker_id)));
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
