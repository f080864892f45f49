//! Run configuration: JSON file plus `--set key=value` overrides.

use std::path::Path;

use dbsde::kernel::{build_grid, DefaultModel, Intensity, TimeGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Intensity used for every name when the config lists none.
pub const DEFAULT_INTENSITY: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { horizon: 1.0, steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    pub d: usize,
    pub k: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { d: 1, k: 1, n_paths: 10_000, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<String>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub bundle: BundleConfig,
    pub intensities: Vec<Intensity>,
    pub gamma_max: Option<f64>,
    /// Experiment-specific parameters; replaced by the fully defaulted set
    /// once the experiment has parsed them.
    pub params: Value,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            bundle: BundleConfig::default(),
            intensities: vec![],
            gamma_max: None,
            params: Value::Object(Map::new()),
            output: OutputConfig::default(),
        }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{raw}` is not of the form key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if key.is_empty() || path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{raw}` has an empty key segment")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((path, value))
}

/// Sets `root[path] = value`, creating intermediate objects.
pub fn apply_override(root: &mut Value, raw: &str) -> Result<(), CliError> {
    let (path, value) = parse_override(raw)?;
    let mut node = root;
    for (n, seg) in path.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            other if other.is_null() => {
                *other = Value::Object(Map::new());
                other.as_object_mut().expect("just created")
            }
            _ => return Err(CliError::Config(format!("override `{raw}`: `{}` is not an object", path[..n].join(".")))),
        };
        if n + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        node = obj.entry(seg.clone()).or_insert(Value::Null);
    }
    unreachable!("path is non-empty")
}

impl RunConfig {
    /// Reads the optional config file, applies overrides in order, fills
    /// derived defaults and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for raw in overrides {
            apply_override(&mut root, raw)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.params.is_null() {
            cfg.params = Value::Object(Map::new());
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    fn resolve(&mut self) -> Result<(), CliError> {
        let grid = self.grid()?;
        if self.bundle.d == 0 {
            return Err(CliError::Config("bundle.d must be at least 1".into()));
        }
        if self.bundle.n_paths < 2 {
            return Err(CliError::Config("bundle.n_paths must be at least 2".into()));
        }
        if self.intensities.is_empty() {
            self.intensities = vec![Intensity::constant(DEFAULT_INTENSITY); self.bundle.k];
        }
        if self.intensities.len() != self.bundle.k {
            return Err(CliError::Config(format!(
                "bundle.k = {} but {} intensities were given",
                self.bundle.k,
                self.intensities.len()
            )));
        }
        if self.gamma_max.is_none() {
            let h = grid.horizon();
            let sup = self
                .intensities
                .iter()
                .flat_map(|g| (0..=1000).map(move |s| g.rate(h * s as f64 / 1000.0)))
                .fold(0.0, f64::max);
            self.gamma_max = Some(sup);
        }
        self.model().validate(&grid).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        build_grid(self.grid.horizon, self.grid.steps).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max.unwrap_or(0.0)
    }

    pub fn model(&self) -> DefaultModel {
        DefaultModel::new(self.intensities.clone(), self.gamma_max())
    }

    /// Constant intensity of name `j`, if it is constant.
    pub fn constant_intensity(&self, j: usize) -> Option<f64> {
        match self.intensities.get(j)? {
            Intensity::Constant { value } => Some(*value),
            _ => None,
        }
    }

    /// Parses `params` into `T` and stores the defaulted result back.
    pub fn take_params<T: DeserializeOwned + Serialize>(&mut self) -> Result<T, CliError> {
        let parsed: T = serde_json::from_value(self.params.clone()).map_err(|e| CliError::Config(format!("params: {e}")))?;
        self.params = serde_json::to_value(&parsed).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(parsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_or_fall_back_to_string() {
        let mut v = serde_json::json!({"grid": {"steps": 10}});
        apply_override(&mut v, "grid.steps=20").unwrap();
        apply_override(&mut v, "output.path=out.json").unwrap();
        apply_override(&mut v, "params.c=[0.5]").unwrap();
        assert_eq!(v["grid"]["steps"], 20);
        assert_eq!(v["output"]["path"], "out.json");
        assert_eq!(v["params"]["c"][0], 0.5);
        assert!(apply_override(&mut v, "grid.steps.x=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn defaults_fill_intensities_and_bound() {
        let cfg = RunConfig::load(None, &["bundle.k=2".into()]).unwrap();
        assert_eq!(cfg.intensities.len(), 2);
        assert_eq!(cfg.gamma_max, Some(DEFAULT_INTENSITY));
        let bad = RunConfig::load(None, &["grid.stepz=3".into()]);
        assert!(matches!(bad, Err(CliError::Config(_))));
        let neg = RunConfig::load(None, &[r#"intensities=[{"kind":"constant","value":-1}]"#.into()]);
        assert!(matches!(neg, Err(CliError::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::load(None, &["gamma_max=0.3".into()]).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
