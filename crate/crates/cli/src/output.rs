//! Output files. Everything is written to a temporary file in the target
//! directory and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(path: PathBuf) -> Self {
        OutDir(path)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes.as_ref())?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }
}

/// One line of `trace.jsonl`. Mode-specific fields are omitted when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub mode: String,
    pub iteration: usize,
    pub ll: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_ll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comm_up_scalars: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comm_down_scalars: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ll_max_disagreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub consensus_invocations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub consensus_rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scalars_on_wire: Option<usize>,
}

impl TraceRecord {
    pub fn new(mode: &str, iteration: usize, ll: f64, previous: Option<f64>) -> Self {
        TraceRecord {
            mode: mode.to_string(),
            iteration,
            ll,
            delta_ll: previous.map(|p| ll - p),
            comm_up_scalars: None,
            comm_down_scalars: None,
            ll_max_disagreement: None,
            consensus_invocations: None,
            consensus_rounds: None,
            scalars_on_wire: None,
        }
    }
}

pub fn to_jsonl(records: &[TraceRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}: line {}", path.display(), i + 1)))
        .collect()
}
