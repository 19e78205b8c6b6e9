//! Config documents shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dr_decomp::dataset::{ingest_csv, Block, Column, Dataset, DropReport, FactorSchema, IngestOptions};
use dr_decomp::distreg::GridSpec;
use dr_decomp::glm::Link;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Common;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV, relative to the config file.
    pub path: PathBuf,
    /// (reference, comparison); order of first appearance otherwise.
    #[serde(default)]
    pub periods: Option<[String; 2]>,
    #[serde(default)]
    pub missing: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub columns: Vec<Column>,
    pub blocks: Vec<Block>,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub interactions: Vec<Vec<String>>,
    /// Add every product of dummy columns.
    #[serde(default)]
    pub saturate_dummies: bool,
}

fn yes() -> bool {
    true
}

impl SchemaConfig {
    pub fn build(&self) -> dr_decomp::Result<FactorSchema> {
        let mut s = FactorSchema::new(self.columns.clone(), self.blocks.clone())?;
        s.intercept = self.intercept;
        s = s.with_interactions(self.interactions.clone())?;
        if self.saturate_dummies {
            s = s.saturate_dummies()?;
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Decimals in text tables.
    pub decimals: usize,
    /// Also write every bootstrap draw.
    pub draws: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), decimals: 2, draws: false }
    }
}

/// Reads a TOML document and resolves relative paths against its directory.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<(T, PathBuf)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: T = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn parse_link(s: &str) -> anyhow::Result<Link> {
    s.parse::<Link>().map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn parse_grid(s: &str) -> anyhow::Result<GridSpec> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(GridSpec::AllUnique);
    }
    match s.parse::<usize>() {
        Ok(points) if points >= 2 => Ok(GridSpec::QuantileSpaced { points, trim: None }),
        _ => bail!("--grid takes `all` or a threshold count of at least 2, got `{s}`"),
    }
}

/// Collects every validation problem before giving up.
#[derive(Default)]
pub struct Problems(Vec<String>);

impl Problems {
    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn check<T>(&mut self, r: dr_decomp::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(e.to_string());
                None
            }
        }
    }

    pub fn finish(self) -> anyhow::Result<()> {
        if self.0.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = self.0.iter().map(|p| format!("  - {p}")).collect();
        bail!("invalid configuration ({} problem(s)):\n{}", self.0.len(), list.join("\n"))
    }
}

pub fn check_file(problems: &mut Problems, what: &str, path: &Path) {
    if !path.is_file() {
        problems.push(format!("{what} `{}` does not exist", path.display()));
    }
}

pub fn read_dataset(data: &DataConfig, base: &Path, schema: &FactorSchema) -> anyhow::Result<(Dataset, DropReport)> {
    let mut opts = IngestOptions { periods: data.periods.clone(), ..Default::default() };
    if let Some(m) = &data.missing {
        opts.missing_tokens = m.clone();
    }
    let path = resolve(base, &data.path);
    let (d, drops) = ingest_csv(&path, schema, &opts).with_context(|| format!("reading dataset {}", path.display()))?;
    if drops.total() > 0 {
        log::warn!("dropped {} rows: {drops:?}", drops.total());
    }
    Ok((d, drops))
}

pub fn out_dir(common: &Common, base: &Path, cfg: &OutputConfig) -> anyhow::Result<PathBuf> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => resolve(base, &cfg.dir),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}
