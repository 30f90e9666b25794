use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use crate::error::{Error, Result};

/// Value of the `schema_version` column of every CSV the runners write.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub ok: bool,
    pub error: Option<String>,
    pub wall_seconds: f64,
    /// Files written for this item, relative to the output directory.
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl ItemSummary {
    pub(crate) fn failed(id: impl Into<String>, err: &Error, wall_seconds: f64) -> Self {
        let id = id.into();
        ItemSummary {
            error: Some(format!("{id}: {err}")),
            id,
            ok: false,
            wall_seconds,
            outputs: Vec::new(),
            metrics: Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub items: Vec<ItemSummary>,
    /// Files written for the run as a whole.
    pub outputs: Vec<String>,
    /// Set when the run aborted before finishing every item.
    pub error: Option<String>,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig) -> Self {
        RunSummary {
            schema_version: SCHEMA_VERSION,
            command: cfg.command.as_str().to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            items: Vec::new(),
            outputs: Vec::new(),
            error: None,
            wall_seconds: 0.0,
        }
    }

    pub fn failures(&self) -> usize {
        self.items.iter().filter(|i| !i.ok).count() + usize::from(self.error.is_some())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// Output directory of one run; records what it writes.
pub(crate) struct OutDir {
    pub root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn sub(&self, name: &str) -> Result<OutDir> {
        OutDir::create(&self.root.join(name))
    }

    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }
}

/// CSV text with a leading `schema_version` column.
pub(crate) struct Csv {
    text: String,
}

impl Csv {
    pub fn new(columns: &[&str]) -> Self {
        let mut text = String::from("schema_version");
        for c in columns {
            text.push(',');
            text.push_str(c);
        }
        text.push('\n');
        Csv { text }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = write!(self.text, "{SCHEMA_VERSION}");
        for c in cells {
            self.text.push(',');
            self.text.push_str(c);
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// Empty cell for missing or non-finite values.
pub(crate) fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

/// Quotes a free-text cell when it needs it.
pub(crate) fn text_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
