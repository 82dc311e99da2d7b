//! Corpus manifest: one `wav<TAB>feature-cache` pair per line.
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub features: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (wav, feat) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected `wav<TAB>cache`", lineno + 1)))?;
        entries.push(ManifestEntry {
            wav: base.join(wav.trim()),
            features: base.join(feat.trim()),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, path)
}

/// Writes entries, relative to the manifest directory where possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let text: String = entries
        .iter()
        .map(|e| format!("{}\t{}\n", rel(&e.wav), rel(&e.features)))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
