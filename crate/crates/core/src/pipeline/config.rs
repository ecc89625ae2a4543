//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so that typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::classifier::{Optimizer, TrainConfig, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::hash::derive_seed;

pub const DATA_DIR_ENV: &str = "CANON_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub n_surface: usize,
    pub m_sampling: usize,
    pub k_nodes: usize,
    /// Seed of the shared sampling set (or master for per-instance sets).
    pub sampling_seed: u64,
    pub basis_seed: u64,
    /// Master for per-instance surface sampling and subset selection.
    pub subsample_seed: u64,
    /// Number of surface subsets per instance; 1 disables augmentation.
    pub subsets: usize,
    pub n_sub: usize,
    /// Draw a fresh sampling set for every instance instead of sharing one.
    pub per_instance_resample: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig::with_seed(0)
    }
}

impl ExtractionConfig {
    /// Defaults with every seed derived from `master`.
    pub fn with_seed(master: u64) -> Self {
        ExtractionConfig {
            n_surface: 2048,
            m_sampling: 4096,
            k_nodes: 256,
            sampling_seed: derive_seed(master, "sampling"),
            basis_seed: derive_seed(master, "basis"),
            subsample_seed: derive_seed(master, "subsample"),
            subsets: 16,
            n_sub: 512,
            per_instance_resample: false,
        }
    }

    pub fn reseed(&mut self, master: u64) {
        self.sampling_seed = derive_seed(master, "sampling");
        self.basis_seed = derive_seed(master, "basis");
        self.subsample_seed = derive_seed(master, "subsample");
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_surface < 4 || self.m_sampling < 8 || self.k_nodes == 0 || self.subsets == 0 {
            return Err(Error::Config(
                "n_surface >= 4, m_sampling >= 8, k_nodes >= 1 and subsets >= 1 required".into(),
            ));
        }
        if self.subsets > 1 && (self.n_sub < 4 || self.n_sub > self.n_surface) {
            return Err(Error::Config(format!(
                "n_sub must lie in [4, n_surface = {}], got {}",
                self.n_surface, self.n_sub
            )));
        }
        Ok(())
    }
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub extraction: ExtractionConfig,
    pub training: TrainConfig,
    pub hidden: Vec<usize>,
    pub data_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            extraction: ExtractionConfig::default(),
            training: TrainConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            data_dir: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from),
        }
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected key = value"))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("bad value {v:?} for {key}")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::parse(line, format!("bad boolean {v:?} for {key}"))),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let mut cfg = PipelineConfig::default();
        // the master seed goes first so explicit per-stage seeds override it
        if let Some((line, v)) = kv.get("seed") {
            let s: u64 = value(*line, "seed", v)?;
            cfg.extraction.reseed(s);
            cfg.training.seed = s;
        }
        for (key, (line, v)) in &kv {
            let (line, v) = (*line, v.as_str());
            let e = &mut cfg.extraction;
            let t = &mut cfg.training;
            match key.as_str() {
                "seed" => {}
                "n_surface" => e.n_surface = value(line, key, v)?,
                "m_sampling" => e.m_sampling = value(line, key, v)?,
                "k_nodes" => e.k_nodes = value(line, key, v)?,
                "sampling_seed" => e.sampling_seed = value(line, key, v)?,
                "basis_seed" => e.basis_seed = value(line, key, v)?,
                "subsample_seed" => e.subsample_seed = value(line, key, v)?,
                "subsets" => e.subsets = value(line, key, v)?,
                "n_sub" => e.n_sub = value(line, key, v)?,
                "per_instance_resample" => e.per_instance_resample = boolean(line, key, v)?,
                "epochs" => t.epochs = value(line, key, v)?,
                "batch_size" => t.batch_size = value(line, key, v)?,
                "learning_rate" => t.learning_rate = value(line, key, v)?,
                "momentum" => {
                    let mu: f64 = value(line, key, v)?;
                    t.optimizer = if mu == 0.0 {
                        Optimizer::Sgd
                    } else {
                        Optimizer::Momentum(mu)
                    };
                }
                "dropout" => t.dropout_rate = value(line, key, v)?,
                "train_seed" => t.seed = value(line, key, v)?,
                "validation_split" => t.validation_split = value(line, key, v)?,
                "standardize" => t.standardize = boolean(line, key, v)?,
                "lr_decay" => t.lr_decay = value(line, key, v)?,
                "plateau_patience" => t.plateau_patience = value(line, key, v)?,
                "plateau_tolerance" => t.plateau_tolerance = value(line, key, v)?,
                "hidden" => {
                    cfg.hidden = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|s| value(line, key, s.trim()))
                            .collect::<Result<_>>()?
                    }
                }
                "data_dir" => cfg.data_dir = Some(PathBuf::from(v)),
                other => return Err(Error::parse(line, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Config(format!("{}:{line}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.training.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Serializes back to the config format; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let e = &self.extraction;
        let t = &self.training;
        let mut s = String::new();
        let _ = writeln!(s, "n_surface = {}", e.n_surface);
        let _ = writeln!(s, "m_sampling = {}", e.m_sampling);
        let _ = writeln!(s, "k_nodes = {}", e.k_nodes);
        let _ = writeln!(s, "sampling_seed = {}", e.sampling_seed);
        let _ = writeln!(s, "basis_seed = {}", e.basis_seed);
        let _ = writeln!(s, "subsample_seed = {}", e.subsample_seed);
        let _ = writeln!(s, "subsets = {}", e.subsets);
        let _ = writeln!(s, "n_sub = {}", e.n_sub);
        let _ = writeln!(s, "per_instance_resample = {}", e.per_instance_resample);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "learning_rate = {:e}", t.learning_rate);
        let mu = match t.optimizer {
            Optimizer::Sgd => 0.0,
            Optimizer::Momentum(mu) => mu,
        };
        let _ = writeln!(s, "momentum = {mu:e}");
        let _ = writeln!(s, "dropout = {:e}", t.dropout_rate);
        let _ = writeln!(s, "train_seed = {}", t.seed);
        let _ = writeln!(s, "validation_split = {:e}", t.validation_split);
        let _ = writeln!(s, "standardize = {}", t.standardize);
        let _ = writeln!(s, "lr_decay = {:e}", t.lr_decay);
        let _ = writeln!(s, "plateau_patience = {}", t.plateau_patience);
        let _ = writeln!(s, "plateau_tolerance = {:e}", t.plateau_tolerance);
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        if let Some(d) = &self.data_dir {
            let _ = writeln!(s, "data_dir = {}", d.display());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_values() {
        let e = ExtractionConfig::default();
        assert_eq!((e.n_surface, e.m_sampling, e.k_nodes), (2048, 4096, 256));
        assert_eq!((e.subsets, e.n_sub), (16, 512));
        assert!(!e.per_instance_resample);
    }

    #[test]
    fn parses_and_roundtrips() {
        let cfg = PipelineConfig::parse(
            "# synthetic run\nseed = 7\nk_nodes=64\nsubsets = 1\nhidden = 32,16\nper_instance_resample = true\nmomentum = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.extraction.k_nodes, 64);
        assert_eq!(cfg.extraction.basis_seed, derive_seed(7, "basis"));
        assert_eq!(cfg.hidden, vec![32, 16]);
        assert_eq!(cfg.training.optimizer, Optimizer::Sgd);
        assert!(cfg.extraction.per_instance_resample);
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn explicit_seed_overrides_master() {
        let cfg = PipelineConfig::parse("basis_seed = 3\nseed = 9\n").unwrap();
        assert_eq!(cfg.extraction.basis_seed, 3);
        assert_eq!(cfg.extraction.sampling_seed, derive_seed(9, "sampling"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PipelineConfig::parse("k_nodes = 4\nbogus = 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(PipelineConfig::parse("k_nodes\n").is_err());
        assert!(PipelineConfig::parse("k_nodes = x\n").is_err());
        assert!(PipelineConfig::parse("k_nodes = 1\nk_nodes = 2\n").is_err());
        assert!(PipelineConfig::parse("n_surface = 100\nn_sub = 200\n").is_err());
        assert!(PipelineConfig::parse("m_sampling = 0\n").is_err());
    }
}
