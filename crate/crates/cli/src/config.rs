//! Flat run configuration shared by every subcommand.
//!
//! A config file is a flat TOML table whose keys are the long flag names
//! (`clip-radius`, or equivalently `clip_radius`). A flag given on the
//! command line wins over the same key in the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use credit_core::embedding::Format;
use credit_core::error::Error;
use serde::Deserialize;

use crate::exit::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Binary,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => Format::Binary,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// Input embeddings (defend, calibrate-sigma).
    #[arg(long, global = true, value_name = "PATH", help_heading = "Files")]
    pub input: Option<PathBuf>,
    /// Output file, or output directory for simulate.
    #[arg(long, global = true, value_name = "PATH", help_heading = "Files")]
    pub output: Option<PathBuf>,
    /// Suspect embeddings (estimate-mi, verify).
    #[arg(long, global = true, value_name = "PATH", help_heading = "Files")]
    pub suspect: Option<PathBuf>,
    /// Defended release embeddings (estimate-mi, verify).
    #[arg(long, global = true, value_name = "PATH", help_heading = "Files")]
    pub defended: Option<PathBuf>,
    /// Defense sidecar written by `defend`; supplies beta to verify.
    #[arg(long, global = true, value_name = "PATH", help_heading = "Files")]
    pub defense: Option<PathBuf>,
    /// Format of written embedding files; inferred from the extension when
    /// absent. Input files are recognized by content.
    #[arg(long, global = true, value_enum, help_heading = "Files")]
    pub format: Option<FormatArg>,

    /// Base seed for noise, tie-breaking jitter and simulation.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs every loop sequentially.
    #[arg(long, global = true, env = "CREDIT_THREADS", value_name = "N")]
    pub threads: Option<usize>,

    #[arg(long, global = true, help_heading = "Defense")]
    pub sigma: Option<f64>,
    #[arg(long, global = true, help_heading = "Defense")]
    pub clip_radius: Option<f64>,
    /// Defaults to twice the clip radius.
    #[arg(long, global = true, help_heading = "Defense")]
    pub delta_sensitivity: Option<f64>,
    /// Embedding dimension; defaults to the data shape.
    #[arg(long, global = true, help_heading = "Defense")]
    pub d: Option<usize>,
    #[arg(long, global = true, help_heading = "Defense")]
    pub n_comp: Option<u64>,
    /// With delta-dp, derives sigma from an (epsilon, delta) budget.
    #[arg(long, global = true, help_heading = "Defense")]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, help_heading = "Defense")]
    pub delta_dp: Option<f64>,

    #[arg(long, global = true, help_heading = "Certification")]
    pub rho: Option<f64>,
    #[arg(long, global = true, help_heading = "Certification")]
    pub eta: Option<f64>,
    #[arg(long, global = true, help_heading = "Certification")]
    pub query_budget: Option<u64>,
    /// Verification set size; defaults to the number of rows.
    #[arg(long, global = true, help_heading = "Certification")]
    pub v_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Certification")]
    pub k: Option<usize>,
    #[arg(long, global = true, help_heading = "Certification")]
    pub mu_ind: Option<f64>,
    #[arg(long, global = true, help_heading = "Certification")]
    pub i_sur: Option<f64>,
    /// MI ceiling; overrides the value derived from the defense.
    #[arg(long, global = true, help_heading = "Certification")]
    pub beta: Option<f64>,

    /// Defaults to the base seed.
    #[arg(long, global = true, help_heading = "Estimator")]
    pub tie_jitter_seed: Option<u64>,
    #[arg(long, global = true, help_heading = "Estimator")]
    pub jitter_scale: Option<f64>,

    #[arg(long, global = true, help_heading = "Trade-off")]
    pub sigma_min: Option<f64>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub sigma_max: Option<f64>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub sigma_count: Option<usize>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub lambda_util: Option<f64>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub lambda_ver: Option<f64>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub pi0: Option<f64>,
    #[arg(long, global = true, help_heading = "Trade-off")]
    pub pi1: Option<f64>,

    #[arg(long, global = true, help_heading = "Simulation")]
    pub d_in: Option<usize>,
    #[arg(long, global = true, help_heading = "Simulation")]
    pub repeat_factor: Option<usize>,
    #[arg(long, global = true, help_heading = "Simulation")]
    pub n_surrogates: Option<usize>,
    #[arg(long, global = true, help_heading = "Simulation")]
    pub n_independents: Option<usize>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr; $($field:ident),* $(,)?) => {
        Settings { $($field: $hi.$field.or($lo.$field)),* }
    };
}

impl Settings {
    /// Read a config file. Underscores in keys are accepted as hyphens.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut normalized = toml::Table::new();
        for (key, value) in table {
            let key = key.replace('_', "-");
            if normalized.contains_key(&key) {
                return Err(format!("key {key:?} given twice"));
            }
            normalized.insert(key, value);
        }
        toml::Value::Table(normalized)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())
    }

    /// Keys set in `self` win over keys set in `base`.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(self, base;
            input, output, suspect, defended, defense, format, seed, threads,
            sigma, clip_radius, delta_sensitivity, d, n_comp, epsilon, delta_dp,
            rho, eta, query_budget, v_size, k, mu_ind, i_sur, beta,
            tie_jitter_seed, jitter_scale,
            sigma_min, sigma_max, sigma_count, lambda_util, lambda_ver, pi0, pi1,
            d_in, repeat_factor, n_surrogates, n_independents,
        )
    }

    /// Range checks on every key that is present, run before any file is
    /// read or any estimate computed.
    pub fn validate(&self) -> Result<(), Error> {
        fn bad(key: &str, why: &str, v: impl std::fmt::Display) -> Error {
            Error::Param(format!("{key} {why}, got {v}"))
        }
        let positive = [
            ("sigma", self.sigma),
            ("clip-radius", self.clip_radius),
            ("delta-sensitivity", self.delta_sensitivity),
            ("jitter-scale", self.jitter_scale),
            ("sigma-min", self.sigma_min),
            ("sigma-max", self.sigma_max),
        ];
        for (key, v) in positive {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad(key, "must be positive and finite", v));
                }
            }
        }
        let nonnegative = [
            ("mu-ind", self.mu_ind),
            ("i-sur", self.i_sur),
            ("beta", self.beta),
            ("lambda-util", self.lambda_util),
            ("lambda-ver", self.lambda_ver),
        ];
        for (key, v) in nonnegative {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(key, "must be nonnegative and finite", v));
                }
            }
        }
        let open_unit = [
            ("rho", self.rho),
            ("eta", self.eta),
            ("epsilon", self.epsilon),
            ("delta-dp", self.delta_dp),
            ("pi0", self.pi0),
            ("pi1", self.pi1),
        ];
        for (key, v) in open_unit {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(bad(key, "must lie in (0, 1)", v));
                }
            }
        }
        let at_least = [
            ("threads", self.threads, 1),
            ("d", self.d, 1),
            ("v-size", self.v_size, 2),
            ("k", self.k, 1),
            ("sigma-count", self.sigma_count, 1),
            ("d-in", self.d_in, 1),
            ("repeat-factor", self.repeat_factor, 1),
            ("n-surrogates", self.n_surrogates, 1),
            ("n-independents", self.n_independents, 1),
        ];
        for (key, v, min) in at_least {
            if let Some(v) = v {
                if v < min {
                    return Err(bad(key, &format!("must be at least {min}"), v));
                }
            }
        }
        if self.n_comp == Some(0) {
            return Err(bad("n-comp", "must be at least 1", 0));
        }
        if self.query_budget == Some(0) {
            return Err(bad("query-budget", "must be at least 1", 0));
        }
        if let (Some(lo), Some(hi)) = (self.sigma_min, self.sigma_max) {
            if lo > hi {
                return Err(Error::Param(format!(
                    "sigma-min {lo} exceeds sigma-max {hi}"
                )));
            }
        }
        if let (Some(p0), Some(p1)) = (self.pi0, self.pi1) {
            if (p0 + p1 - 1.0).abs() > 1e-12 {
                return Err(Error::Param(format!(
                    "pi0 + pi1 must be 1, got {}",
                    p0 + p1
                )));
            }
        }
        if self.epsilon.is_some() != self.delta_dp.is_some() {
            return Err(Error::Param(
                "epsilon and delta-dp must be given together".into(),
            ));
        }
        if self.sigma.is_some() && self.epsilon.is_some() {
            return Err(Error::Param(
                "give either sigma or epsilon/delta-dp, not both".into(),
            ));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing required key {key:?}")))
    }

    /// Embedding file format; `Auto` sniffs on read and follows the
    /// extension on write.
    pub fn embedding_format(&self) -> Format {
        self.format.map(Format::from).unwrap_or(Format::Auto)
    }
}
