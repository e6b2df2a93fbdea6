//! Gaussian-mechanism defense of embeddings and the mutual-information
//! ceiling it certifies.

use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingMatrix;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Domain};

/// Smallest noise scale accepted: below this `sigma^2` leaves the normal
/// `f64` range and the certified bound is no longer representable.
pub const MIN_SIGMA: f64 = 1.4916681462400413e-154;

/// Slack allowed when comparing `2 * clip_radius` against the declared
/// sensitivity.
const SENSITIVITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseParams {
    /// Per-coordinate noise standard deviation.
    pub sigma: f64,
    /// Global ℓ2 sensitivity of the embedding map.
    pub delta_sensitivity: f64,
    pub d: usize,
    pub seed: u64,
}

impl DefenseParams {
    pub fn new(sigma: f64, delta_sensitivity: f64, d: usize, seed: u64) -> Result<Self> {
        let p = Self {
            sigma,
            delta_sensitivity,
            d,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma.is_finite() && self.sigma >= MIN_SIGMA,
            Error::Param(format!(
                "sigma must be finite and at least {MIN_SIGMA:e}, got {}",
                self.sigma
            ))
        );
        ensure!(
            self.delta_sensitivity.is_finite() && self.delta_sensitivity > 0.0,
            Error::Param(format!(
                "sensitivity must be positive, got {}",
                self.delta_sensitivity
            ))
        );
        ensure!(self.d >= 1, Error::Param("dimension d must be >= 1".into()));
        Ok(())
    }

    /// Sensitivity induced by clipping rows to `radius`.
    pub fn for_clip_radius(sigma: f64, radius: f64, d: usize, seed: u64) -> Result<Self> {
        Self::new(sigma, 2.0 * radius, d, seed)
    }

    /// Certified MI ceiling for this defense with `n_comp` composed releases.
    pub fn beta(&self, n_comp: u64) -> Result<f64> {
        mi_upper_bound(self.delta_sensitivity, self.sigma, n_comp)
    }
}

/// Release `e_g(x) = e_f(x) + Z`, `Z ~ N(0, sigma^2 I_d)`, for each row.
///
/// Row `i` draws its noise from its own seeded stream, so the output for a
/// row is independent of `n` and of the thread schedule.
pub fn apply_mechanism(m: &EmbeddingMatrix, p: &DefenseParams) -> Result<EmbeddingMatrix> {
    apply_mechanism_with(m, p, Exec::default())
}

pub fn apply_mechanism_with(
    m: &EmbeddingMatrix,
    p: &DefenseParams,
    exec: Exec,
) -> Result<EmbeddingMatrix> {
    p.validate()?;
    ensure!(
        m.d() == p.d,
        Error::Param(format!(
            "embedding dimension {} does not match defense dimension {}",
            m.d(),
            p.d
        ))
    );
    let radius = m.clip_radius().ok_or_else(|| {
        Error::Sensitivity("input embeddings are unclipped; clip them before defending".into())
    })?;
    ensure!(
        2.0 * radius <= p.delta_sensitivity + SENSITIVITY_SLACK,
        Error::Sensitivity(format!(
            "clip radius {radius} implies sensitivity {} above declared {}",
            2.0 * radius,
            p.delta_sensitivity
        ))
    );

    let mut values = m.values().to_vec();
    let sigma = p.sigma;
    let seed = p.seed;
    exec.for_each_row_mut(&mut values, m.d(), |i, row| {
        let mut rng = rng::stream(seed, Domain::MechanismNoise, i as u64);
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    });
    m.with_values_unclipped(values)
}

/// Noise scale of the classical `(epsilon, delta)` Gaussian mechanism:
/// `sqrt(2 ln(1.25 / delta)) * sensitivity / epsilon`.
pub fn calibrate_sigma_dp(epsilon: f64, delta_dp: f64, delta_sensitivity: f64) -> Result<f64> {
    ensure!(
        epsilon > 0.0 && epsilon < 1.0,
        Error::Param(format!("epsilon must lie in (0, 1), got {epsilon}"))
    );
    ensure!(
        delta_dp > 0.0 && delta_dp < 1.0,
        Error::Param(format!("delta must lie in (0, 1), got {delta_dp}"))
    );
    ensure!(
        delta_sensitivity.is_finite() && delta_sensitivity > 0.0,
        Error::Param(format!(
            "sensitivity must be positive, got {delta_sensitivity}"
        ))
    );
    Ok((2.0 * (1.25 / delta_dp).ln()).sqrt() * delta_sensitivity / epsilon)
}

/// Certified ceiling on mutual information (nats) between any model's
/// embeddings and the defended release: `Δ² · n_comp / (2σ²)`.
pub fn mi_upper_bound(delta_sensitivity: f64, sigma: f64, n_comp: u64) -> Result<f64> {
    ensure!(
        delta_sensitivity.is_finite() && delta_sensitivity > 0.0,
        Error::Param(format!(
            "sensitivity must be positive, got {delta_sensitivity}"
        ))
    );
    ensure!(
        sigma.is_finite() && sigma >= MIN_SIGMA,
        Error::Param(format!("sigma must be at least {MIN_SIGMA:e}, got {sigma}"))
    );
    ensure!(n_comp >= 1, Error::Param("n_comp must be >= 1".into()));
    Ok(delta_sensitivity * delta_sensitivity * n_comp as f64 / (2.0 * sigma * sigma))
}
