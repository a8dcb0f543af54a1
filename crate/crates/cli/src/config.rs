//! Experiment configuration: one JSON document with dataset, network,
//! training and cross-validation sections, plus `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use selfonn::crossval::CrossValPlan;
use selfonn::data::synthetic::SyntheticSpec;
use selfonn::train::TrainConfig;
use selfonn::{Error, NetworkConfig, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    #[default]
    ClassFolders,
    Manifest,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Dataset root for the class-folder layout.
    pub root: Option<PathBuf>,
    pub layout: LayoutKind,
    /// `path,label` CSV for the manifest layout.
    pub manifest: Option<PathBuf>,
    /// Directory written by the `cache` subcommand; preferred when set.
    pub cache: Option<PathBuf>,
    /// Generate the blob-versus-ring task instead of reading files.
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub crossval: CrossValPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            training: TrainConfig::default(),
            crossval: CrossValPlan::default(),
        }
    }
}

/// Splits `a.b.c=value`; the value is JSON when it parses, else a string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` must look like section.key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(doc: &mut Value, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = doc;
    for key in parents {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set `{}`: `{key}` is not a section", path.join("."))))?;
        node = map.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("cannot set `{}`: parent is not a section", path.join("."))))?
        .insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults), applies the overrides in
    /// order, and resolves relative dataset paths against the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                serde_json::from_str(&text)?
            }
            None => serde_json::to_value(ExperimentConfig::default())?,
        };
        for spec in overrides {
            let (keys, value) = parse_override(spec)?;
            apply_override(&mut doc, &keys, value)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        if let Some(base) = path.and_then(Path::parent) {
            cfg.dataset.resolve_against(base);
        }
        Ok(cfg)
    }

    /// Applies a global seed to every seeded section except the data.
    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.crossval.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("name must be a non-empty plain file name".into()));
        }
        self.network.validate()?;
        self.training.validate()?;
        self.crossval.validate()?;
        if let Some(s) = &self.dataset.synthetic {
            if s.count < 2 || s.size == 0 {
                return Err(Error::Config("dataset.synthetic needs count >= 2 and size >= 1".into()));
            }
        }
        Ok(())
    }

    /// `<output_dir>/<name>`, with `SELFONN_OUT` replacing `output_dir`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os("SELFONN_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone());
        root.join(&self.name)
    }
}

impl DatasetConfig {
    fn resolve_against(&mut self, base: &Path) {
        for p in [&mut self.root, &mut self.manifest, &mut self.cache].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_then_string() {
        let (k, v) = parse_override("network.q=3").unwrap();
        assert_eq!(k, ["network", "q"]);
        assert_eq!(v, Value::from(3));
        let (_, v) = parse_override("name=demo").unwrap();
        assert_eq!(v, Value::from("demo"));
        let (_, v) = parse_override("network.pools=[2,2,2]").unwrap();
        assert_eq!(v, serde_json::json!([2, 2, 2]));
        assert!(parse_override("network.q").is_err());
        assert!(parse_override("network..q=1").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::load(None, &["training.batch_size=8".into(), "network.q=1".into()]).unwrap();
        assert_eq!(cfg.training.batch_size, 8);
        assert_eq!(cfg.network.q, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = ExperimentConfig::load(None, &["training.learning_rat=1".into()]).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }
}
