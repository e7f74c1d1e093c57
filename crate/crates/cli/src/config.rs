//! Settings shared by all subcommands: defaults, an optional TOML file and
//! command-line flags, in increasing order of precedence.

use anyhow::{Context, Result};
use maxent_ts::calibration::{CalibrationOptions, Method};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Keys accepted in the config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub n_rep: Option<usize>,
    pub tol_rel: Option<f64>,
    pub max_iter: Option<usize>,
    pub method: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub missing_tokens: Option<Vec<String>>,
    pub significance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// The settings a run actually used; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effective {
    pub seed: u64,
    pub seed_generated: bool,
    pub n_rep: usize,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub method: Method,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub missing_tokens: Vec<String>,
    pub significance: f64,
}

pub const DEFAULT_OUT_DIR: &str = "maxent-out";

pub fn parse_method(s: &str) -> Result<Method> {
    match s.to_ascii_lowercase().replace(['_', ' '], "-").as_str() {
        "newton" => Ok(Method::Newton),
        "gradient" | "gradient-ascent" => Ok(Method::GradientAscent),
        "fixed-point" | "fixedpoint" => Ok(Method::FixedPoint),
        other => anyhow::bail!("unknown method {other:?} (newton, gradient-ascent, fixed-point)"),
    }
}

/// Values given on the command line, before merging.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_rep: Option<usize>,
    pub tol_rel: Option<f64>,
    pub max_iter: Option<usize>,
    pub method: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub missing_tokens: Option<Vec<String>>,
    pub significance: Option<f64>,
}

impl Effective {
    pub fn merge(cli: Overrides, file: FileConfig) -> Result<Self> {
        let (seed, seed_generated) = match cli.seed.or(file.seed) {
            Some(s) => (s, false),
            None => (rand::random::<u32>() as u64, true),
        };
        let method = match cli.method.or(file.method) {
            Some(m) => parse_method(&m)?,
            None => Method::Newton,
        };
        let defaults = CalibrationOptions::default();
        let eff = Self {
            seed,
            seed_generated,
            n_rep: cli.n_rep.or(file.n_rep).unwrap_or(200),
            tol_rel: cli.tol_rel.or(file.tol_rel).unwrap_or(defaults.tol_rel),
            max_iter: cli.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
            method,
            out_dir: cli.out_dir.or(file.out_dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            threads: cli.threads.or(file.threads),
            missing_tokens: cli
                .missing_tokens
                .or(file.missing_tokens)
                .unwrap_or_else(|| maxent_ts::data::FormatOptions::default().missing_tokens),
            significance: cli.significance.or(file.significance).unwrap_or(0.05),
        };
        if eff.n_rep == 0 {
            anyhow::bail!("n_rep must be positive");
        }
        Ok(eff)
    }

    pub fn calibration(&self) -> CalibrationOptions {
        CalibrationOptions { tol_rel: self.tol_rel, max_iter: self.max_iter, method: self.method, ..Default::default() }
    }

    pub fn format(&self) -> maxent_ts::data::FormatOptions {
        maxent_ts::data::FormatOptions { missing_tokens: self.missing_tokens.clone(), ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beats_defaults() {
        let file: FileConfig = toml::from_str("seed = 3\nn_rep = 50\nmethod = \"fixed-point\"").unwrap();
        let cli = Overrides { n_rep: Some(10), ..Default::default() };
        let e = Effective::merge(cli, file).unwrap();
        assert_eq!((e.seed, e.n_rep, e.method), (3, 10, Method::FixedPoint));
        assert!(!e.seed_generated);
        assert_eq!(e.out_dir, PathBuf::from(DEFAULT_OUT_DIR));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sed = 3").is_err());
    }

    #[test]
    fn missing_seed_is_generated_and_recorded() {
        let e = Effective::merge(Overrides::default(), FileConfig::default()).unwrap();
        assert!(e.seed_generated);
    }
}
