//! JSON configuration files read by `serve`, `eval run` and `gen corpus`.
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use xpir::evalkit::{CorpusConfig, ExperimentConfig};

/// Defaults applied to searches that do not override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchDefaults {
    pub k: usize,
    pub overlap_filter: bool,
    /// Divide interests by their mean before weighting element vectors.
    pub normalize_profile: bool,
    pub max_hops: u32,
    pub relations: Vec<String>,
}

impl Default for SearchDefaults {
    fn default() -> Self {
        Self {
            k: 10,
            overlap_filter: false,
            normalize_profile: false,
            max_hops: 0,
            relations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// `host:port` to bind.
    pub listen: String,
    pub ontology: PathBuf,
    pub index: PathBuf,
    /// Directory of profile files.
    pub profiles: PathBuf,
    #[serde(default)]
    pub search: SearchDefaults,
    /// Origins allowed by CORS; `"*"` allows any. Empty disables CORS headers.
    #[serde(default)]
    pub cors_origins: Vec<String>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = read_json(path)?;
        let base = base_dir(path);
        c.ontology = base.join(&c.ontology);
        c.index = base.join(&c.index);
        c.profiles = base.join(&c.profiles);
        c.validate()?;
        Ok(c)
    }

    pub fn socket_addr(&self) -> anyhow::Result<SocketAddr> {
        self.listen
            .parse()
            .with_context(|| format!("invalid listen address `{}`", self.listen))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.socket_addr()?;
        for (what, p) in [("ontology", &self.ontology), ("index", &self.index)] {
            if !p.is_file() {
                bail!("{what} file {} does not exist", p.display());
            }
        }
        if !self.profiles.is_dir() {
            bail!("profile directory {} does not exist", self.profiles.display());
        }
        if self.search.k == 0 {
            bail!("search.k must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub ontology: PathBuf,
    /// CSV report destination.
    pub output: PathBuf,
    /// Optional destination of the aligned text table.
    #[serde(default)]
    pub text_output: Option<PathBuf>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl EvalRunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = read_json(path)?;
        let base = base_dir(path);
        c.ontology = base.join(&c.ontology);
        c.output = base.join(&c.output);
        c.text_output = c.text_output.map(|p| base.join(p));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCorpusConfig {
    pub ontology: PathBuf,
    /// Receives `docs/*.xml`, `queries.json` and `qrels.txt`.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusConfig,
}

impl GenCorpusConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: Self = read_json(path)?;
        let base = base_dir(path);
        c.ontology = base.join(&c.ontology);
        c.out_dir = base.join(&c.out_dir);
        Ok(c)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))
}
