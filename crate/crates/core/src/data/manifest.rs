use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::IntentLabelSet;

/// Where an utterance's acoustics come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    /// 16-bit PCM mono WAV.
    Audio(PathBuf),
    /// Feature matrix in the checkpoint container.
    Features(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: Source,
    pub text: String,
    pub intent: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    text: String,
    intent: String,
}

/// Read a JSON-lines manifest. Relative paths resolve against the manifest's
/// directory. With `labels`, every intent must belong to the set.
pub fn load_manifest(path: &Path, labels: Option<&IntentLabelSet>) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, labels)
}

pub fn parse_manifest(text: &str, path: &Path, labels: Option<&IntentLabelSet>) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let l: Line = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let source = match (l.audio, l.features) {
            (Some(a), None) => Source::Audio(base.join(a)),
            (None, Some(f)) => Source::Features(base.join(f)),
            _ => return Err(parse_err("exactly one of `audio` and `features` is required".into())),
        };
        if !seen.insert(l.id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate utterance id `{}` (line {line_no})",
                l.id
            )));
        }
        if let Some(set) = labels {
            if set.id(&l.intent).is_none() {
                return Err(Error::Validation(format!(
                    "unknown intent `{}` (line {line_no})",
                    l.intent
                )));
            }
        }
        out.push(ManifestEntry {
            id: l.id,
            source,
            text: l.text,
            intent: l.intent,
        });
    }
    Ok(out)
}

/// Write entries as JSON lines, storing paths relative to the manifest's
/// directory where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| p.to_path_buf())
    };
    let mut buf = Vec::new();
    for e in entries {
        let (audio, features) = match &e.source {
            Source::Audio(p) => (Some(rel(p)), None),
            Source::Features(p) => (None, Some(rel(p))),
        };
        let line = Line {
            id: e.id.clone(),
            audio,
            features,
            text: e.text.clone(),
            intent: e.intent.clone(),
        };
        serde_json::to_writer(&mut buf, &line).expect("manifest lines serialize");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
