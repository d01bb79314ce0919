//! Experiment configuration: one JSON document, with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Global,
    Mp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Mp => "mp",
        }
    }

    fn id(self) -> u64 {
        match self {
            Method::Global => 1,
            Method::Mp => 2,
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Global, Method::Mp]
}

fn default_runs() -> usize {
    10
}

fn default_samples() -> usize {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("mpis-out")
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default)]
    pub sizes: BTreeMap<String, f64>,
    #[serde(default)]
    pub data_seed: u64,
    pub k_values: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_samples")]
    pub posterior_samples: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub k_values: Option<Vec<usize>>,
    pub runs: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads `path` (if given), applies the overrides and validates the result.
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut v: serde_json::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        let obj = v.as_object_mut().ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        if let Some(m) = &o.model {
            obj.insert("model".into(), m.clone().into());
        }
        if let Some(k) = &o.k_values {
            obj.insert("k_values".into(), serde_json::to_value(k).unwrap());
        }
        if let Some(r) = o.runs {
            obj.insert("runs".into(), r.into());
        }
        if let Some(out) = &o.out {
            obj.insert("out".into(), out.to_string_lossy().into_owned().into());
        }
        if let Some(w) = o.workers {
            obj.insert("workers".into(), w.into());
        }
        if let Some(s) = o.seed {
            obj.insert("seed".into(), s.into());
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("invalid config field `{field}`: {msg}")));
        if self.k_values.is_empty() {
            return bad("k_values", "at least one K is required");
        }
        if self.k_values.contains(&0) {
            return bad("k_values", "K values must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs", "must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods", "at least one method is required");
        }
        if self.posterior_samples == 0 {
            return bad("posterior_samples", "must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        mpis::zoo::default_params(&self.model).map_err(|e| CliError::Config(format!("invalid config field `model`: {e}")))?;
        Ok(())
    }

    /// Seed of the proposal draws of one (method, K) series; runs use separate streams.
    pub fn job_seed(&self, method: Method, k: usize) -> u64 {
        let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        for v in [method.id(), k as u64] {
            h = splitmix(h ^ v);
        }
        h
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn parse_k_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("invalid K value `{p}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_k_names_the_field() {
        let e = ExperimentConfig::parse(r#"{"model": "bus"}"#).unwrap_err();
        assert!(e.to_string().contains("k_values"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { k_values: Some(vec![2, 4]), runs: Some(3), ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": "bus", "k_values": [1], "runs": 9}"#).unwrap();
        let c = ExperimentConfig::load(Some(&p), &o).unwrap();
        assert_eq!(c.k_values, vec![2, 4]);
        assert_eq!(c.runs, 3);
        assert_eq!(c.methods, vec![Method::Global, Method::Mp]);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"model": "bus", "k_values": []}"#,
            r#"{"model": "bus", "k_values": [0]}"#,
            r#"{"model": "bus", "k_values": [1], "runs": 0}"#,
            r#"{"model": "nope", "k_values": [1]}"#,
            r#"{"model": "bus", "k_values": [1], "colour": 1}"#,
        ] {
            let c = ExperimentConfig::parse(text).and_then(|c| c.validate().map(|_| c));
            assert!(c.is_err(), "{text}");
        }
    }

    #[test]
    fn job_seeds_differ() {
        let c = ExperimentConfig::parse(r#"{"model": "bus", "k_values": [1]}"#).unwrap();
        assert_ne!(c.job_seed(Method::Mp, 3), c.job_seed(Method::Global, 3));
        assert_ne!(c.job_seed(Method::Mp, 3), c.job_seed(Method::Mp, 10));
    }
}
