//! Utility/verification entropy trade-off and grid selection of the noise
//! scale.
//!
//! Utility cost is the entropy gained by a Gaussian surrogate of the clean
//! embeddings, `ΔH_util(σ) = ½ Σ_j ln(1 + σ²/λ_j)` over the covariance
//! eigenvalues. Verification cost is the prior-weighted binary entropy of the
//! two certified error bounds. `σ*` minimizes
//! `λ_util·ΔH_util + λ_ver·H_ver` over a fixed grid.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::certification::{
    bounded_difference_constant, credit_threshold, type1_bound, type2_bound, CertificationParams,
};
use crate::embedding::EmbeddingMatrix;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::mechanism::{mi_upper_bound, DefenseParams};
use crate::record::format_real;

/// Eigenvalues below this are clamped so `σ²/λ` stays finite.
pub const SPECTRUM_FLOOR: f64 = 1e-12;

/// Eigenvalues of the sample covariance (divisor `n - 1`), descending,
/// clamped below at [`SPECTRUM_FLOOR`].
pub fn covariance_spectrum(m: &EmbeddingMatrix) -> Result<Vec<f64>> {
    let (n, d) = (m.n(), m.d());
    ensure!(
        n >= 2,
        Error::Param(format!("covariance needs n >= 2 rows, got {n}"))
    );
    let data = DMatrix::from_row_slice(n, d, m.values());
    let mean = data.row_mean();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|&l| l.max(SPECTRUM_FLOOR))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

fn check_spectrum(spectrum: &[f64]) -> Result<()> {
    ensure!(
        !spectrum.is_empty(),
        Error::Param("spectrum is empty".into())
    );
    ensure!(
        spectrum.iter().all(|l| l.is_finite() && *l > 0.0),
        Error::Param("spectrum entries must be positive and finite".into())
    );
    Ok(())
}

/// `½ Σ_j ln(1 + σ²/λ_j)`, i.e. `½ ln det(I + σ² Σ⁻¹)`.
pub fn utility_entropy_gain(spectrum: &[f64], sigma: f64) -> Result<f64> {
    check_spectrum(spectrum)?;
    ensure!(
        sigma.is_finite() && sigma >= 0.0,
        Error::Param(format!("sigma must be nonnegative, got {sigma}"))
    );
    let s2 = sigma * sigma;
    Ok(0.5 * spectrum.iter().map(|l| (s2 / l).ln_1p()).sum::<f64>())
}

/// Binary entropy in nats with `h(0) = h(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    ensure!(
        (0.0..=1.0).contains(&p),
        Error::Domain(format!("binary entropy needs p in [0, 1], got {p}"))
    );
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.ln() - (1.0 - p) * (-p).ln_1p())
}

fn check_priors(pi0: f64, pi1: f64) -> Result<()> {
    ensure!(
        pi0 >= 0.0 && pi1 >= 0.0 && (pi0 + pi1 - 1.0).abs() <= 1e-12,
        Error::Param(format!(
            "priors must be nonnegative and sum to 1, got {pi0} + {pi1}"
        ))
    );
    Ok(())
}

/// `π₀ h(γ₁) + π₁ h(γ₂)`.
pub fn verification_entropy(gamma1: f64, gamma2: f64, pi0: f64, pi1: f64) -> Result<f64> {
    check_priors(pi0, pi1)?;
    Ok(pi0 * binary_entropy(gamma1)? + pi1 * binary_entropy(gamma2)?)
}

/// `count` points log-spaced over `[lo, hi]`, strictly increasing.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    ensure!(
        lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite(),
        Error::Param(format!("log grid needs 0 < lo < hi, got [{lo}, {hi}]"))
    );
    ensure!(
        count >= 2,
        Error::Param("log grid needs at least 2 points".into())
    );
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[count - 1] = hi;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffConfig {
    pub sigma_grid: Vec<f64>,
    pub lambda_util: f64,
    pub lambda_ver: f64,
    pub pi0: f64,
    pub pi1: f64,
    /// Eigenvalues of the clean embedding covariance.
    pub spectrum: Vec<f64>,
    /// β and τ are recomputed per grid point; `beta` here is ignored.
    pub certification: CertificationParams,
    /// Composition count for β.
    pub n_comp: u64,
    pub exec: Exec,
}

impl TradeoffConfig {
    /// Defaults: 41 log-spaced points on `[0.01, 1]`, unit weights, uniform
    /// priors, deployment certification parameters.
    pub fn new(spectrum: Vec<f64>) -> Self {
        Self {
            sigma_grid: log_grid(0.01, 1.0, 41).expect("static grid"),
            lambda_util: 1.0,
            lambda_ver: 1.0,
            pi0: 0.5,
            pi1: 0.5,
            spectrum,
            certification: CertificationParams::with_beta(0.0),
            n_comp: 1,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.sigma_grid.is_empty(),
            Error::Param("sigma grid is empty".into())
        );
        ensure!(
            self.sigma_grid.iter().all(|s| s.is_finite() && *s > 0.0),
            Error::Param("sigma grid entries must be positive".into())
        );
        ensure!(
            self.sigma_grid.windows(2).all(|w| w[0] < w[1]),
            Error::Param("sigma grid must be strictly increasing".into())
        );
        ensure!(
            self.lambda_util >= 0.0 && self.lambda_ver >= 0.0,
            Error::Param("weights must be nonnegative".into())
        );
        check_priors(self.pi0, self.pi1)?;
        check_spectrum(&self.spectrum)?;
        self.certification.validate()
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffRow {
    pub sigma: f64,
    pub beta: f64,
    pub tau: f64,
    pub delta_h_util: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub h_ver: f64,
    /// `λ_util·ΔH_util + λ_ver·H_ver`; `+∞` when either bound is vacuous,
    /// since a vacuous bound carries no verification guarantee.
    pub objective: f64,
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSelection {
    pub sigma_star: f64,
    pub table: Vec<TradeoffRow>,
}

impl SigmaSelection {
    pub fn best(&self) -> &TradeoffRow {
        self.table
            .iter()
            .find(|r| r.sigma == self.sigma_star)
            .expect("sigma_star comes from the table")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,beta,tau,delta_h_util,gamma1,gamma2,h_ver,objective\n");
        for r in &self.table {
            let fields = [
                r.sigma,
                r.beta,
                r.tau,
                r.delta_h_util,
                r.gamma1,
                r.gamma2,
                r.h_ver,
                r.objective,
            ];
            let line: Vec<String> = fields.iter().map(|v| format_real(*v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn evaluate(cfg: &TradeoffConfig, delta_sensitivity: f64, sigma: f64) -> Result<TradeoffRow> {
    let beta = mi_upper_bound(delta_sensitivity, sigma, cfg.n_comp)?;
    let params = CertificationParams {
        beta,
        ..cfg.certification
    };
    let tau = credit_threshold(&params)?;
    let c = bounded_difference_constant(params.k, params.v_size)?;
    let i_sur = params.surrogate_hypothesis();
    let g1 = type1_bound(tau, params.v_size, c, params.mu_ind);
    let g2 = type2_bound(tau, params.v_size, c, i_sur);
    let delta_h_util = utility_entropy_gain(&cfg.spectrum, sigma)?;
    let vacuous = matches!(g1, Err(Error::Margin(_))) || matches!(g2, Err(Error::Margin(_)));
    let or_one = |g: Result<f64>| match g {
        Ok(v) => Ok(v),
        Err(Error::Margin(_)) => Ok(1.0),
        Err(e) => Err(e),
    };
    let (gamma1, gamma2) = (or_one(g1)?, or_one(g2)?);
    let h_ver = verification_entropy(gamma1, gamma2, cfg.pi0, cfg.pi1)?;
    let objective = if vacuous {
        f64::INFINITY
    } else {
        cfg.lambda_util * delta_h_util + cfg.lambda_ver * h_ver
    };
    Ok(TradeoffRow {
        sigma,
        beta,
        tau,
        delta_h_util,
        gamma1,
        gamma2,
        h_ver,
        objective,
        vacuous,
    })
}

/// Evaluate every grid point and return the minimizer (ties go to the
/// smaller σ) together with the full table in grid order.
///
/// The defense template supplies the sensitivity Δ; its own σ is ignored.
pub fn select_sigma(cfg: &TradeoffConfig, defense: &DefenseParams) -> Result<SigmaSelection> {
    cfg.validate()?;
    ensure!(
        defense.delta_sensitivity.is_finite() && defense.delta_sensitivity > 0.0,
        Error::Param("defense template needs a positive sensitivity".into())
    );
    let delta = defense.delta_sensitivity;
    let table = cfg.exec.try_map(cfg.sigma_grid.len(), |i| {
        evaluate(cfg, delta, cfg.sigma_grid[i])
    })?;
    let best = table
        .iter()
        .filter(|r| !r.vacuous)
        .fold(None::<&TradeoffRow>, |best, r| match best {
            Some(b) if b.objective <= r.objective => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| {
            Error::Calibration("every grid point yields a vacuous error bound".into())
        })?;
    Ok(SigmaSelection {
        sigma_star: best.sigma,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_gain_examples() {
        let g = utility_entropy_gain(&[1.0, 1.0], 1.0).unwrap();
        assert!((g - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(utility_entropy_gain(&[0.3, 2.0], 0.0).unwrap(), 0.0);
        let spec = [4.0, 1.0, 0.01];
        let mut prev = 0.0;
        for s in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let g = utility_entropy_gain(&spec, s).unwrap();
            assert!(g > prev);
            prev = g;
        }
        assert!(utility_entropy_gain(&[], 1.0).is_err());
        assert!(utility_entropy_gain(&[0.0], 1.0).is_err());
    }

    #[test]
    fn binary_entropy_examples() {
        assert!((binary_entropy(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        for p in [0.1, 0.3] {
            assert!((binary_entropy(p).unwrap() - binary_entropy(1.0 - p).unwrap()).abs() < 1e-15);
        }
        assert!(matches!(binary_entropy(1.5), Err(Error::Domain(_))));
        assert!(matches!(binary_entropy(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn verification_entropy_examples() {
        assert_eq!(verification_entropy(0.0, 0.0, 0.5, 0.5).unwrap(), 0.0);
        let h = verification_entropy(0.5, 0.5, 0.5, 0.5).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(verification_entropy(1.0, 0.0, 0.5, 0.5).unwrap(), 0.0);
        assert!(verification_entropy(0.5, 0.5, 0.7, 0.5).is_err());
    }

    #[test]
    fn spectrum_of_constant_matrix_clamps() {
        let m = EmbeddingMatrix::new(5, 3, vec![2.0; 15], "c").unwrap();
        let s = covariance_spectrum(&m).unwrap();
        assert_eq!(s, vec![SPECTRUM_FLOOR; 3]);
        let one = EmbeddingMatrix::new(1, 3, vec![1.0; 3], "c").unwrap();
        assert!(matches!(covariance_spectrum(&one), Err(Error::Param(_))));
    }

    #[test]
    fn spectrum_small_exact() {
        // Rows (1,0), (-1,0), (0,2), (0,-2): covariance diag(2/3, 8/3).
        let m = EmbeddingMatrix::new(4, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 2.0, 0.0, -2.0], "m")
            .unwrap();
        let s = covariance_spectrum(&m).unwrap();
        assert!((s[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.01, 1.0, 41).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[40], 1.0);
        assert!((g[20] - 0.1).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    fn small_config() -> (TradeoffConfig, DefenseParams) {
        let mut cfg = TradeoffConfig::new(vec![0.5; 16]);
        cfg.certification.d = 16;
        cfg.certification.v_size = 2000;
        cfg.sigma_grid = log_grid(0.2, 2.0, 25).unwrap();
        (cfg, DefenseParams::new(1.0, 2.0, 16, 0).unwrap())
    }

    #[test]
    fn zero_verification_weight_picks_smallest_sigma() {
        let (mut cfg, def) = small_config();
        cfg.lambda_ver = 0.0;
        let sel = select_sigma(&cfg, &def).unwrap();
        assert_eq!(sel.sigma_star, cfg.sigma_grid[0]);
    }

    #[test]
    fn zero_utility_weight_picks_h_ver_argmin() {
        let (mut cfg, def) = small_config();
        cfg.lambda_util = 0.0;
        let sel = select_sigma(&cfg, &def).unwrap();
        // Exhaustive scan computed independently of the selection fold.
        let mut best = (f64::INFINITY, f64::NAN);
        for &s in &cfg.sigma_grid {
            let beta = 2.0 * 2.0 / (2.0 * s * s);
            let p = CertificationParams {
                beta,
                ..cfg.certification
            };
            let tau = beta
                * (1.0
                    - p.rho
                        * (-(p.query_budget as f64) * beta
                            / (p.eta * p.d as f64 * p.v_size as f64))
                            .exp());
            let c = 2.0 * 7.0 * (p.v_size as f64).ln();
            let g1 = (-2.0 * p.v_size as f64 * tau * tau / (c * c)).exp();
            let g2 = (-2.0 * p.v_size as f64 * (beta - tau).powi(2) / (c * c)).exp();
            let h = |p: f64| {
                if p <= 0.0 || p >= 1.0 {
                    0.0
                } else {
                    -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
                }
            };
            let hv = 0.5 * h(g1) + 0.5 * h(g2);
            if hv < best.0 {
                best = (hv, s);
            }
        }
        assert_eq!(sel.sigma_star, best.1);
    }

    #[test]
    fn objective_column_is_exact_and_argmin_matches() {
        let (cfg, def) = small_config();
        let sel = select_sigma(&cfg, &def).unwrap();
        for r in &sel.table {
            assert_eq!(
                r.objective,
                cfg.lambda_util * r.delta_h_util + cfg.lambda_ver * r.h_ver
            );
        }
        let min = sel
            .table
            .iter()
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sel.best().objective, min);
        let seq = select_sigma(
            &TradeoffConfig {
                exec: Exec::Sequential,
                ..cfg.clone()
            },
            &def,
        )
        .unwrap();
        assert_eq!(seq, sel);
    }

    #[test]
    fn all_vacuous_is_calibration_error() {
        let (mut cfg, def) = small_config();
        // mu_ind above every achievable tau makes gamma1 vacuous everywhere.
        cfg.certification.mu_ind = 1e9;
        assert!(matches!(
            select_sigma(&cfg, &def),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn rejects_unsorted_grid() {
        let (mut cfg, def) = small_config();
        cfg.sigma_grid = vec![0.5, 0.4];
        assert!(matches!(select_sigma(&cfg, &def), Err(Error::Param(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let (cfg, def) = small_config();
        let sel = select_sigma(&cfg, &def).unwrap();
        let csv = sel.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sigma,beta,tau,delta_h_util,gamma1,gamma2,h_ver,objective"
        );
        assert_eq!(lines.count(), cfg.sigma_grid.len());
    }
}
