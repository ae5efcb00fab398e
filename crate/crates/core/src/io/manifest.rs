//! Line-delimited JSON dataset manifests.
//!
//! The first line is a header `{"schema":"dehaze-manifest","version":1}`;
//! every following non-blank line is one [`ManifestRecord`]. Relative paths
//! resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA: &str = "dehaze-manifest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub clean_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazy_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<PathBuf>,
    /// Atmospheric light level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Manifest {
            root: root.into(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Parses manifest text; `path` is used for the root and in diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty manifest".into()))?;
        let header: Header =
            serde_json::from_str(header).map_err(|e| err(hl + 1, format!("bad header: {e}")))?;
        if header.schema != SCHEMA {
            return Err(err(
                hl + 1,
                format!("schema `{}`, expected `{SCHEMA}`", header.schema),
            ));
        }
        if header.version != SCHEMA_VERSION {
            return Err(err(
                hl + 1,
                format!(
                    "schema version {}, expected {SCHEMA_VERSION}",
                    header.version
                ),
            ));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut m = Manifest::new(root);
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let r: ManifestRecord =
                serde_json::from_str(line).map_err(|e| err(i + 1, e.to_string()))?;
            if !seen.insert((r.clean_path.clone(), r.hazy_path.clone())) {
                return Err(err(
                    i + 1,
                    format!("duplicate record for {}", r.clean_path.display()),
                ));
            }
            m.records.push(r);
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            schema: SCHEMA.into(),
            version: SCHEMA_VERSION,
        };
        let mut out = serde_json::to_string(&header).unwrap();
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}
