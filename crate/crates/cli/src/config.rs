//! Campaign configuration: attack methods, defaults, the JSON config
//! file, and flag/file/default precedence.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use drawl_core::attack::{AttackConfig, Norm};

use crate::CliError;

/// The attack methods a campaign can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Clean,
    SpkL2,
    SpkLinf,
    Text,
    TextBaseline,
    SpkBaseline,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Clean,
        Method::SpkL2,
        Method::SpkLinf,
        Method::Text,
        Method::TextBaseline,
        Method::SpkBaseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Clean => "clean",
            Method::SpkL2 => "spk-l2",
            Method::SpkLinf => "spk-linf",
            Method::Text => "text",
            Method::TextBaseline => "text-baseline",
            Method::SpkBaseline => "spk-baseline",
        }
    }

    pub fn parse(label: &str) -> Result<Method, CliError> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == label)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "unknown method {:?}; expected one of {}",
                    label,
                    Method::ALL.map(|m| m.label()).join(", ")
                ))
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// JSON config file mirroring the command-line flag names. Every field
/// is optional; flags override file values, file values override
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub corpus: Option<PathBuf>,
    pub victim: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub iters: Option<u32>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub norm: Option<String>,
    pub ratio: Option<f64>,
    pub beam: Option<usize>,
    pub candidates: Option<usize>,
    pub limit: Option<usize>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub homoglyphs: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw).map_err(|e| {
            CliError::Config(format!("cannot parse config file {}: {e}", path.display()))
        })
    }
}

/// Command-line values for the attack subcommand, all optional so the
/// precedence merge can tell "flag given" from "default".
#[derive(Debug, Clone, Default)]
pub struct AttackOverrides {
    pub corpus: Option<PathBuf>,
    pub victim: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub iters: Option<u32>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub norm: Option<Norm>,
    pub ratio: Option<f64>,
    pub beam: Option<usize>,
    pub candidates: Option<usize>,
    pub limit: Option<usize>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub homoglyphs: Option<PathBuf>,
}

/// Fully resolved campaign settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub corpus: PathBuf,
    pub victim: PathBuf,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    pub iterations: u32,
    pub alpha: f64,
    /// Budget override; when unset each norm uses its own default.
    pub eps: Option<f64>,
    /// Norm used by the speaker baseline.
    pub norm: Norm,
    pub ratio: f64,
    pub beam: usize,
    pub candidates: usize,
    pub limit: Option<usize>,
    pub jobs: usize,
    pub seed: u64,
    pub homoglyphs: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_METHODS: [Method; 6] = Method::ALL;

impl CampaignConfig {
    /// Applies flag > file > default precedence and validates.
    pub fn resolve(flags: AttackOverrides, file: Option<ConfigFile>) -> Result<Self, CliError> {
        let file = file.unwrap_or_default();
        let methods = match flags.methods.or(file.methods) {
            Some(labels) => {
                let mut methods = labels
                    .iter()
                    .map(|l| Method::parse(l))
                    .collect::<Result<Vec<_>, _>>()?;
                methods.sort();
                methods.dedup();
                methods
            }
            None => DEFAULT_METHODS.to_vec(),
        };
        let norm = match flags.norm {
            Some(n) => n,
            None => match file.norm.as_deref() {
                Some(raw) => raw.parse::<Norm>().map_err(CliError::Config)?,
                None => Norm::L2,
            },
        };
        let config = Self {
            corpus: flags
                .corpus
                .or(file.corpus)
                .ok_or_else(|| CliError::Config("missing --corpus".to_string()))?,
            victim: flags
                .victim
                .or(file.victim)
                .ok_or_else(|| CliError::Config("missing --victim".to_string()))?,
            out: flags
                .out
                .or(file.out)
                .ok_or_else(|| CliError::Config("missing --out".to_string()))?,
            methods,
            iterations: flags.iters.or(file.iters).unwrap_or(100),
            alpha: flags.alpha.or(file.alpha).unwrap_or(0.1),
            eps: flags.eps.or(file.eps),
            norm,
            ratio: flags.ratio.or(file.ratio).unwrap_or(0.05),
            beam: flags.beam.or(file.beam).unwrap_or(3),
            candidates: flags.candidates.or(file.candidates).unwrap_or(100),
            limit: flags.limit.or(file.limit),
            jobs: flags.jobs.or(file.jobs).unwrap_or(1),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            homoglyphs: flags.homoglyphs.or(file.homoglyphs),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::Config("methods must be nonempty".to_string()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".to_string()));
        }
        for (path, flag) in [(&self.corpus, "--corpus"), (&self.victim, "--victim")] {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "{flag} path {} does not exist",
                    path.display()
                )));
            }
        }
        if let Some(path) = &self.homoglyphs {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "--homoglyphs path {} does not exist",
                    path.display()
                )));
            }
        }
        self.attack_config(self.norm, 0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Attack settings for one method run; eps falls back to the
    /// norm-specific default unless overridden.
    pub fn attack_config(&self, norm: Norm, seed: u64) -> AttackConfig {
        AttackConfig {
            iterations: self.iterations,
            beam: self.beam,
            alpha: self.alpha,
            eps: self.eps.unwrap_or_else(|| norm.default_eps()),
            norm,
            ratio: self.ratio,
            candidates_per_strategy: self.candidates,
            target_y: 0.0,
            seed,
        }
    }

    pub fn eps_for(&self, norm: Norm) -> f64 {
        self.eps.unwrap_or_else(|| norm.default_eps())
    }
}
