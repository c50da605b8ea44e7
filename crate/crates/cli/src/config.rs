use std::path::{Path, PathBuf};

use cgpfl_core::data::DataSource;
use cgpfl_core::orchestrator::RunConfig;
use serde::Deserialize;
use toml::{Table, Value};

use crate::Failure;

/// Short names accepted by `--set` and `sweep --param`.
const SHORTHANDS: &[(&str, &str)] = &[
    ("K", "hyperparameters.K"),
    ("K_min", "hyperparameters.K_min"),
    ("K_max", "hyperparameters.K_max"),
    ("T", "hyperparameters.T"),
    ("R", "hyperparameters.R"),
    ("S", "hyperparameters.S"),
    ("lambda", "hyperparameters.lambda"),
    ("λ", "hyperparameters.lambda"),
    ("eta", "hyperparameters.eta"),
    ("η", "hyperparameters.eta"),
    ("beta", "hyperparameters.beta"),
    ("β", "hyperparameters.beta"),
    ("alpha", "hyperparameters.alpha"),
    ("α", "hyperparameters.alpha"),
    ("mu", "hyperparameters.mu"),
    ("μ", "hyperparameters.mu"),
    ("batch_size", "hyperparameters.batch_size"),
    ("algorithm", "run.algorithm"),
    ("seed", "run.seed"),
    ("eval_every", "run.eval_every"),
];

pub fn resolve_key(key: &str) -> String {
    SHORTHANDS
        .iter()
        .find(|(short, _)| *short == key)
        .map_or_else(|| key.to_string(), |(_, full)| full.to_string())
}

/// A configuration as a raw table plus the directory relative paths refer to.
#[derive(Debug, Clone)]
pub struct RawConfig {
    pub table: Table,
    pub base_dir: PathBuf,
}

impl RawConfig {
    /// Reads a TOML config, or the `config_snapshot` of a run manifest when
    /// the file is JSON.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let is_json = path.extension().is_some_and(|e| e == "json");
        let table = if is_json {
            let mut v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            if let Some(snapshot) = v.get_mut("config_snapshot") {
                v = snapshot.take();
            }
            Table::try_from(v).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
        } else {
            // typed parse first so field errors come with line numbers
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            text.parse::<Table>()
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
        };
        Ok(RawConfig { table, base_dir })
    }

    /// Applies one `key=value` override. Values are read as TOML literals and
    /// fall back to plain strings.
    pub fn set(&mut self, assignment: &str) -> Result<(), Failure> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects key=value, got `{assignment}`")))?;
        let value = parse_value(raw.trim());
        self.set_value(&resolve_key(key.trim()), value)
    }

    pub fn set_value(&mut self, path: &str, value: Value) -> Result<(), Failure> {
        let parts: Vec<&str> = path.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields at least one part");
        let mut table = &mut self.table;
        for p in parents {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Failure::config(format!("`{p}` in `{path}` is not a section")))?;
        }
        table.insert(last.to_string(), value);
        Ok(())
    }

    /// Builds the typed config and makes data paths absolute.
    pub fn build(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::deserialize(Value::Table(self.table.clone()))
            .map_err(|e| Failure::config(format!("invalid configuration: {e}")))?;
        let base = std::path::absolute(&self.base_dir).unwrap_or_else(|_| self.base_dir.clone());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DataSource::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DataSource::Shards { dir } => fix(dir),
            DataSource::Synthetic(_) => {}
        }
        Ok(cfg)
    }
}

pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
