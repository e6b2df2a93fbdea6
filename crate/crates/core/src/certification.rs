//! Verification threshold, certified error bounds and the emitted
//! certificate.
//!
//! The threshold sits inside `[β(1-ρ), β)`:
//!
//! ```text
//! τ = β · [1 - ρ · exp(-Q β / (η d |V|))]
//! ```
//!
//! and the KSG statistic on `n = |V|` samples has bounded differences
//! `C_k / n` with `C_k = 2(2k+1) ln n`, which gives McDiarmid tails
//!
//! ```text
//! γ₁ = exp(-2|V| (τ - μ_ind)² / C_k²)    false alarm on an independent model
//! γ₂ = exp(-2|V| (I_sur - τ)² / C_k²)    missed surrogate
//! ```

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::embedding::EmbeddingMatrix;
use crate::error::{ensure, Error, Result};
use crate::ksg::{ksg_estimate, KsgConfig};
use crate::mechanism::DefenseParams;
use crate::record::Record;

pub const TOOL_VERSION: &str = concat!("credit ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationParams {
    pub rho: f64,
    pub eta: f64,
    /// Query budget `Q` a surrogate is assumed to have spent.
    pub query_budget: u64,
    /// Verification-set size `|V|`.
    pub v_size: usize,
    pub d: usize,
    pub k: usize,
    /// MI ceiling certified by the defense.
    pub beta: f64,
    /// Population MI assumed for independent models.
    pub mu_ind: f64,
    /// Hypothesized surrogate population MI for γ₂; `None` means `beta`.
    pub i_sur: Option<f64>,
}

impl CertificationParams {
    /// Deployment defaults: `d = 1024`, `|V| = 1000`, `Q = 5000`, `k = 3`,
    /// `ρ = η = 0.5`, `μ_ind = 0`.
    pub fn with_beta(beta: f64) -> Self {
        Self {
            rho: 0.5,
            eta: 0.5,
            query_budget: 5000,
            v_size: 1000,
            d: 1024,
            k: 3,
            beta,
            mu_ind: 0.0,
            i_sur: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.rho > 0.0 && self.rho < 1.0,
            Error::Param(format!("rho must lie in (0, 1), got {}", self.rho))
        );
        ensure!(
            self.eta > 0.0 && self.eta < 1.0,
            Error::Param(format!("eta must lie in (0, 1), got {}", self.eta))
        );
        ensure!(
            self.query_budget >= 1,
            Error::Param("query budget must be >= 1".into())
        );
        ensure!(
            self.v_size >= 2,
            Error::Param("verification set needs >= 2 samples".into())
        );
        ensure!(self.d >= 1, Error::Param("dimension d must be >= 1".into()));
        ensure!(self.k >= 1, Error::Param("k must be >= 1".into()));
        ensure!(
            self.beta.is_finite() && self.beta >= 0.0,
            Error::Param(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            ))
        );
        ensure!(
            self.mu_ind.is_finite() && self.mu_ind >= 0.0,
            Error::Param(format!("mu_ind must be nonnegative, got {}", self.mu_ind))
        );
        if let Some(i) = self.i_sur {
            ensure!(
                i.is_finite() && i >= 0.0,
                Error::Param(format!("i_sur must be nonnegative, got {i}"))
            );
        }
        Ok(())
    }

    /// The surrogate MI hypothesis actually used for γ₂.
    pub fn surrogate_hypothesis(&self) -> f64 {
        self.i_sur.unwrap_or(self.beta)
    }
}

pub fn credit_threshold(p: &CertificationParams) -> Result<f64> {
    p.validate()?;
    let scale = p.eta * p.d as f64 * p.v_size as f64;
    let exponent = -(p.query_budget as f64) * p.beta / scale;
    Ok(p.beta * (1.0 - p.rho * exponent.exp()))
}

/// `C_k = 2(2k+1) ln n`.
pub fn bounded_difference_constant(k: usize, n: usize) -> Result<f64> {
    ensure!(k >= 1, Error::Param("k must be >= 1".into()));
    ensure!(
        n >= 2,
        Error::Param(format!("need n >= 2 samples, got {n}"))
    );
    Ok(2.0 * (2 * k + 1) as f64 * (n as f64).ln())
}

fn mcdiarmid_tail(margin: f64, v_size: usize, c: f64) -> Result<f64> {
    ensure!(
        c.is_finite() && c > 0.0,
        Error::Param(format!(
            "bounded-difference constant must be positive, got {c}"
        ))
    );
    ensure!(
        v_size >= 1,
        Error::Param("verification set must be nonempty".into())
    );
    let g = (-2.0 * v_size as f64 * margin * margin / (c * c)).exp();
    Ok(g.clamp(0.0, 1.0))
}

/// Bound on the probability that an independent model is flagged.
pub fn type1_bound(tau: f64, v_size: usize, c: f64, mu_ind: f64) -> Result<f64> {
    ensure!(
        tau > mu_ind,
        Error::Margin(format!("tau = {tau} does not exceed mu_ind = {mu_ind}"))
    );
    mcdiarmid_tail(tau - mu_ind, v_size, c)
}

/// Bound on the probability that a surrogate with population MI `i_sur`
/// escapes detection.
pub fn type2_bound(tau: f64, v_size: usize, c: f64, i_sur: f64) -> Result<f64> {
    ensure!(
        i_sur > tau,
        Error::Margin(format!("i_sur = {i_sur} does not exceed tau = {tau}"))
    );
    mcdiarmid_tail(i_sur - tau, v_size, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Surrogate,
    Independent,
}

impl Decision {
    pub fn from_statistic(mi: f64, tau: f64) -> Self {
        if mi > tau {
            Decision::Surrogate
        } else {
            Decision::Independent
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Surrogate => "surrogate",
            Decision::Independent => "independent",
        })
    }
}

impl std::str::FromStr for Decision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Decision::Surrogate),
            "independent" => Ok(Decision::Independent),
            other => Err(Error::Format(format!("unknown decision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub mi_estimate: f64,
    pub tau: f64,
    pub beta: f64,
    /// Type-I bound; 1 when the margin `τ - μ_ind` is not positive.
    pub gamma1: f64,
    pub gamma1_vacuous: bool,
    /// Type-II bound against `i_sur`; `None` when `i_sur <= τ`.
    pub gamma2: Option<f64>,
    /// The surrogate hypothesis γ₂ is conditional on.
    pub i_sur: f64,
    pub c_k: f64,
    pub decision: Decision,
    pub params: CertificationParams,
    pub defense: Option<DefenseParams>,
    pub suspect_label: String,
    pub defended_label: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Honors `SOURCE_DATE_EPOCH` so reruns can produce identical certificates.
pub fn current_timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Estimate MI between suspect and defended embeddings over the
/// verification set and certify the resulting decision.
///
/// Vacuous error bounds are flagged in the certificate, never fatal.
pub fn verify(
    suspect: &EmbeddingMatrix,
    defended: &EmbeddingMatrix,
    params: &CertificationParams,
    cfg: &KsgConfig,
) -> Result<Certificate> {
    params.validate()?;
    ensure!(
        suspect.n() == params.v_size && defended.n() == params.v_size,
        Error::Param(format!(
            "suspect has {} rows and defended has {}, verification set size is {}",
            suspect.n(),
            defended.n(),
            params.v_size
        ))
    );
    ensure!(
        cfg.k == params.k,
        Error::Param(format!(
            "estimator k = {} differs from certified k = {}",
            cfg.k, params.k
        ))
    );
    let mi = ksg_estimate(suspect, defended, cfg)?;
    certify(mi, params, suspect.label(), defended.label())
}

/// Build a certificate for an already computed MI statistic.
pub fn certify(
    mi_estimate: f64,
    params: &CertificationParams,
    suspect_label: &str,
    defended_label: &str,
) -> Result<Certificate> {
    params.validate()?;
    let tau = credit_threshold(params)?;
    let c_k = bounded_difference_constant(params.k, params.v_size)?;
    let (gamma1, gamma1_vacuous) = match type1_bound(tau, params.v_size, c_k, params.mu_ind) {
        Ok(g) => (g, false),
        Err(Error::Margin(_)) => (1.0, true),
        Err(e) => return Err(e),
    };
    let i_sur = params.surrogate_hypothesis();
    let gamma2 = match type2_bound(tau, params.v_size, c_k, i_sur) {
        Ok(g) => Some(g),
        Err(Error::Margin(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Certificate {
        mi_estimate,
        tau,
        beta: params.beta,
        gamma1,
        gamma1_vacuous,
        gamma2,
        i_sur,
        c_k,
        decision: Decision::from_statistic(mi_estimate, tau),
        params: *params,
        defense: None,
        suspect_label: suspect_label.to_owned(),
        defended_label: defended_label.to_owned(),
        tool_version: TOOL_VERSION.to_owned(),
        timestamp: current_timestamp(),
    })
}

impl Certificate {
    pub fn with_defense(mut self, defense: DefenseParams) -> Self {
        self.defense = Some(defense);
        self
    }

    /// The stored decision agrees with the indicator `Î > τ`.
    pub fn is_consistent(&self) -> bool {
        self.decision == Decision::from_statistic(self.mi_estimate, self.tau)
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        let p = &self.params;
        r.set("beta", self.beta)
            .set("c_k", self.c_k)
            .set("d", p.d)
            .set("decision", self.decision.to_string())
            .set("defended_label", self.defended_label.as_str())
            .set("eta", p.eta)
            .set("gamma1", self.gamma1)
            .set("gamma1_vacuous", self.gamma1_vacuous)
            .set("gamma2_conditional", true)
            .set("gamma2_vacuous", self.gamma2.is_none())
            .set("i_sur", self.i_sur)
            .set("i_sur_default", p.i_sur.is_none())
            .set("k", p.k)
            .set("mi_estimate", self.mi_estimate)
            .set("mu_ind", p.mu_ind)
            .set("query_budget", p.query_budget)
            .set("rho", p.rho)
            .set("suspect_label", self.suspect_label.as_str())
            .set("tau", self.tau)
            .set("timestamp", self.timestamp)
            .set("tool_version", self.tool_version.as_str())
            .set("v_size", p.v_size);
        if let Some(g) = self.gamma2 {
            r.set("gamma2", g);
        }
        if let Some(dp) = &self.defense {
            r.set("defense_d", dp.d)
                .set("defense_delta_sensitivity", dp.delta_sensitivity)
                .set("defense_seed", dp.seed)
                .set("defense_sigma", dp.sigma);
        }
        r
    }

    pub fn to_text(&self) -> String {
        self.to_record().to_text()
    }

    pub fn from_record(r: &Record) -> Result<Self> {
        let i_sur = r.real("i_sur")?;
        let params = CertificationParams {
            rho: r.real("rho")?,
            eta: r.real("eta")?,
            query_budget: r.uint("query_budget")?,
            v_size: r.uint("v_size")? as usize,
            d: r.uint("d")? as usize,
            k: r.uint("k")? as usize,
            beta: r.real("beta")?,
            mu_ind: r.real("mu_ind")?,
            i_sur: if r.boolean("i_sur_default")? {
                None
            } else {
                Some(i_sur)
            },
        };
        let defense = match r.get("defense_sigma") {
            Some(_) => Some(DefenseParams {
                sigma: r.real("defense_sigma")?,
                delta_sensitivity: r.real("defense_delta_sensitivity")?,
                d: r.uint("defense_d")? as usize,
                seed: r.uint("defense_seed")?,
            }),
            None => None,
        };
        Ok(Self {
            mi_estimate: r.real("mi_estimate")?,
            tau: r.real("tau")?,
            beta: r.real("beta")?,
            gamma1: r.real("gamma1")?,
            gamma1_vacuous: r.boolean("gamma1_vacuous")?,
            gamma2: r.opt_real("gamma2")?,
            i_sur,
            c_k: r.real("c_k")?,
            decision: r.text("decision")?.parse()?,
            params,
            defense,
            suspect_label: r.text("suspect_label")?.to_owned(),
            defended_label: r.text("defended_label")?.to_owned(),
            tool_version: r.text("tool_version")?.to_owned(),
            timestamp: r.uint("timestamp")?,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_record(&Record::parse(text)?)
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let gamma2 = self
            .gamma2
            .map(|g| format!("{g:.6}"))
            .unwrap_or_else(|| "vacuous".into());
        format!(
            "decision={} mi={:.6} tau={:.6} beta={:.6} gamma1={:.6}{} gamma2={} (i_sur={:.6})",
            self.decision,
            self.mi_estimate,
            self.tau,
            self.beta,
            self.gamma1,
            if self.gamma1_vacuous {
                " (vacuous)"
            } else {
                ""
            },
            gamma2,
            self.i_sur
        )
    }
}
