//! Reference computations that check the certified quantities
//! independently of the estimator.
//!
//! * closed-form MI of a bivariate Gaussian,
//! * MI of the binary-input Gaussian channel `Y = X + N(0, σ²)` with
//!   `X = ±Δ/2`, computed as `H(Y) - ½ ln(2πeσ²)` by quadrature,
//! * Monte-Carlo frequencies of both verification errors against the
//!   certified bounds.

use rand_distr::{Distribution, StandardNormal};

use crate::certification::{verify, CertificationParams, Decision};
use crate::embedding::{clip_embeddings, EmbeddingMatrix};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::ksg::KsgConfig;
use crate::mechanism::{apply_mechanism_with, mi_upper_bound, DefenseParams};
use crate::quadrature::{integrate_refined, GaussLegendre};
use crate::record::Record;
use crate::rng::{self, Domain};

/// Absolute tolerance granted to quadrature results in bound checks.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
pub const MIN_QUADRATURE_POINTS: usize = 1024;
/// Largest β for which the lower bracket `β/4 - β²` is enforced.
pub const LOWER_BRACKET_MAX_BETA: f64 = 0.2;
pub const MIN_TRIALS: usize = 100;

const RULE_ORDER: usize = 16;
const MAX_QUADRATURE_POINTS: usize = 1 << 24;
const REFINE_TOL: f64 = 1e-9;
const TAIL_SIGMAS: f64 = 10.0;

/// `I = -½ ln(1 - ρ²)` for a bivariate Gaussian with correlation `ρ`.
pub fn gaussian_mi_closed_form(correlation: f64) -> Result<f64> {
    ensure!(
        correlation.abs() < 1.0,
        Error::Domain(format!(
            "correlation must satisfy |rho| < 1, got {correlation}"
        ))
    );
    Ok(-0.5 * (-correlation * correlation).ln_1p())
}

/// Binary Gaussian channel with inputs `±delta/2` and noise std `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub delta: f64,
    pub sigma: f64,
}

impl ChannelSpec {
    pub fn new(delta: f64, sigma: f64) -> Result<Self> {
        let s = Self { delta, sigma };
        s.validate()?;
        Ok(s)
    }

    /// The sign of `delta` is irrelevant; only its magnitude must be positive.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.delta.is_finite() && self.delta != 0.0,
            Error::Param(format!(
                "channel delta must be finite and nonzero, got {}",
                self.delta
            ))
        );
        ensure!(
            self.sigma.is_finite() && self.sigma > 0.0,
            Error::Param(format!(
                "channel sigma must be positive, got {}",
                self.sigma
            ))
        );
        Ok(())
    }

    /// Single-query ceiling `Δ² / (2σ²)`.
    pub fn beta(&self) -> Result<f64> {
        mi_upper_bound(self.delta.abs(), self.sigma, 1)
    }
}

/// `ln cosh t` without overflow.
fn ln_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn binary_channel_mi(spec: &ChannelSpec, quadrature_points: usize) -> Result<f64> {
    binary_channel_mi_with(spec, quadrature_points, Exec::default())
}

/// Channel MI in nats; panels are evaluated under `exec`.
pub fn binary_channel_mi_with(
    spec: &ChannelSpec,
    quadrature_points: usize,
    exec: Exec,
) -> Result<f64> {
    spec.validate()?;
    ensure!(
        quadrature_points >= MIN_QUADRATURE_POINTS,
        Error::Param(format!(
            "need at least {MIN_QUADRATURE_POINTS} quadrature points, got {quadrature_points}"
        ))
    );
    let a = 0.5 * spec.delta.abs();
    let s2 = spec.sigma * spec.sigma;
    let log_norm = -(spec.sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let neg_p_ln_p = |y: f64| {
        let lp = log_norm - (y * y + a * a) / (2.0 * s2) + ln_cosh(a * y / s2);
        -lp.exp() * lp
    };
    // The mixture is symmetric, so integrate the right half and double it.
    let hi = a + TAIL_SIGMAS * spec.sigma;
    let rule = GaussLegendre::new(RULE_ORDER)?;
    let half = integrate_refined(
        &rule,
        &neg_p_ln_p,
        0.0,
        hi,
        quadrature_points / 2,
        MAX_QUADRATURE_POINTS,
        REFINE_TOL / 2.0,
        exec,
    )?;
    let h_y = 2.0 * half.value;
    let h_noise = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s2).ln();
    Ok((h_y - h_noise).max(0.0))
}

/// Check one MI value against `I ≤ β` and, for small β, `I ≥ β/4 - β²`.
pub fn check_tightness(spec: &ChannelSpec, mi: f64) -> Result<TightnessEntry> {
    let beta = spec.beta()?;
    let violation = |reason: String| Error::TightnessViolation {
        delta: spec.delta,
        sigma: spec.sigma,
        reason,
    };
    ensure!(
        mi.is_finite(),
        violation(format!("mutual information {mi} is not finite"))
    );
    ensure!(
        mi <= beta + QUADRATURE_TOLERANCE,
        violation(format!("I = {mi} exceeds beta = {beta}"))
    );
    let lower = (beta <= LOWER_BRACKET_MAX_BETA).then(|| beta / 4.0 - beta * beta);
    if let Some(lo) = lower {
        ensure!(
            mi >= lo - QUADRATURE_TOLERANCE,
            violation(format!("I = {mi} is below beta/4 - beta^2 = {lo}"))
        );
    }
    Ok(TightnessEntry {
        spec: *spec,
        beta,
        mi,
        lower,
        ratio: mi / beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessEntry {
    pub spec: ChannelSpec,
    pub beta: f64,
    pub mi: f64,
    /// Lower bracket, present only when it is enforced.
    pub lower: Option<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    pub entries: Vec<TightnessEntry>,
}

impl TightnessReport {
    /// True when `I/β` grows as β shrinks along the list.
    pub fn ratios_increasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].ratio > w[0].ratio)
    }

    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.set("count", self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let p = format!("spec_{i:02}");
            r.set(&format!("{p}_delta"), e.spec.delta)
                .set(&format!("{p}_sigma"), e.spec.sigma)
                .set(&format!("{p}_beta"), e.beta)
                .set(&format!("{p}_mi"), e.mi)
                .set(&format!("{p}_ratio"), e.ratio);
            if let Some(lo) = e.lower {
                r.set(&format!("{p}_lower"), lo);
            }
        }
        r
    }
}

/// Quadrature MI for each spec, checked against both brackets.
///
/// Specs must be ordered by decreasing β.
pub fn tightness_check(specs: &[ChannelSpec]) -> Result<TightnessReport> {
    ensure!(
        !specs.is_empty(),
        Error::Param("no channel specs given".into())
    );
    let betas = specs.iter().map(|s| s.beta()).collect::<Result<Vec<_>>>()?;
    ensure!(
        betas.windows(2).all(|w| w[0] > w[1]),
        Error::Param("channel specs must be ordered by strictly decreasing beta".into())
    );
    let entries = specs
        .iter()
        .map(|s| check_tightness(s, binary_channel_mi(s, MIN_QUADRATURE_POINTS)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(TightnessReport { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Suspect embeddings are independent of the release.
    Independent,
    /// Suspect embeddings are the release plus a small perturbation.
    Surrogate,
}

/// How Monte-Carlo embedding pairs are synthesized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub d: usize,
    pub clip_radius: f64,
    pub sigma: f64,
    /// Surrogate perturbation std as a fraction of the release's RMS value.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            d: 8,
            clip_radius: 1.0,
            sigma: 1.0,
            perturbation: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOutcome {
    pub scenario: Scenario,
    pub trials: usize,
    pub errors: usize,
    pub empirical_rate: f64,
    /// γ₁ or γ₂; 1 when the bound is vacuous.
    pub bound: f64,
    pub vacuous: bool,
    /// Binomial standard error at the bound.
    pub std_error: f64,
    pub mean_mi: f64,
    pub tau: f64,
    pub pass: bool,
}

impl MonteCarloOutcome {
    pub fn to_record(&self) -> Record {
        let mut r = Record::new();
        r.set(
            "scenario",
            match self.scenario {
                Scenario::Independent => "independent",
                Scenario::Surrogate => "surrogate",
            },
        )
        .set("trials", self.trials)
        .set("errors", self.errors)
        .set("empirical_rate", self.empirical_rate)
        .set("bound", self.bound)
        .set("vacuous", self.vacuous)
        .set("std_error", self.std_error)
        .set("mean_mi", self.mean_mi)
        .set("tau", self.tau)
        .set("pass", self.pass);
        r
    }
}

fn gaussian_matrix(
    n: usize,
    d: usize,
    seed: u64,
    domain: Domain,
    label: &str,
) -> Result<EmbeddingMatrix> {
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rng = rng::stream(seed, domain, i as u64);
        values.extend((0..d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    }
    EmbeddingMatrix::new(n, d, values, label)
}

/// Run `trials` synthetic verifications and compare the error frequency
/// with the certified bound plus three binomial standard errors.
///
/// `cert.beta` and `cert.d` are replaced by the values implied by `gen`.
/// The clean embeddings are clipped standard Gaussians; the release adds
/// mechanism noise with `Δ = 2 · clip_radius`.
pub fn monte_carlo_error_rates(
    scenario: Scenario,
    trials: usize,
    gen: &GeneratorParams,
    cert: &CertificationParams,
    exec: Exec,
) -> Result<MonteCarloOutcome> {
    ensure!(
        trials >= MIN_TRIALS,
        Error::Param(format!("need at least {MIN_TRIALS} trials, got {trials}"))
    );
    ensure!(
        gen.perturbation.is_finite() && gen.perturbation >= 0.0,
        Error::Param(format!(
            "perturbation must be nonnegative, got {}",
            gen.perturbation
        ))
    );
    let defense_template = DefenseParams::for_clip_radius(gen.sigma, gen.clip_radius, gen.d, 0)?;
    let params = CertificationParams {
        beta: defense_template.beta(1)?,
        d: gen.d,
        ..*cert
    };
    params.validate()?;
    let n = params.v_size;
    let ksg = KsgConfig::with_k(params.k).with_exec(Exec::Sequential);

    let certs = exec.try_map(trials, |t| -> Result<_> {
        let seed = rng::derive_seed(gen.seed, Domain::MonteCarlo, t as u64);
        let clean = clip_embeddings(
            &gaussian_matrix(n, gen.d, seed, Domain::Synthetic, "clean")?,
            gen.clip_radius,
        )?;
        let defense = DefenseParams {
            seed,
            ..defense_template
        };
        let defended = apply_mechanism_with(&clean, &defense, Exec::Sequential)?;
        let suspect = match scenario {
            Scenario::Independent => {
                gaussian_matrix(n, gen.d, seed, Domain::IndependentWeights, "independent")?
            }
            Scenario::Surrogate => {
                let vals = defended.values();
                let rms = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
                let noise = gaussian_matrix(n, gen.d, seed, Domain::QueryNoise, "noise")?;
                let scale = gen.perturbation * rms;
                let values = vals
                    .iter()
                    .zip(noise.values())
                    .map(|(v, z)| v + scale * z)
                    .collect();
                EmbeddingMatrix::new(n, gen.d, values, "surrogate")?
            }
        };
        verify(&suspect, &defended, &params, &ksg)
    })?;

    let wrong = match scenario {
        Scenario::Independent => Decision::Surrogate,
        Scenario::Surrogate => Decision::Independent,
    };
    let errors = certs.iter().filter(|c| c.decision == wrong).count();
    let first = &certs[0];
    let (bound, vacuous) = match scenario {
        Scenario::Independent => (first.gamma1, first.gamma1_vacuous),
        Scenario::Surrogate => match first.gamma2 {
            Some(g) => (g, false),
            None => (1.0, true),
        },
    };
    let empirical_rate = errors as f64 / trials as f64;
    let std_error = (bound * (1.0 - bound) / trials as f64).sqrt();
    let mean_mi = certs.iter().map(|c| c.mi_estimate).sum::<f64>() / trials as f64;
    Ok(MonteCarloOutcome {
        scenario,
        trials,
        errors,
        empirical_rate,
        bound,
        vacuous,
        std_error,
        mean_mi,
        tau: first.tau,
        pass: empirical_rate <= bound + 3.0 * std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Second route: `I = ln 2 - E[ln(1 + exp(-2aY/σ²))]`, `Y ~ N(a, σ²)`,
    /// evaluated with a plain midpoint rule.
    fn channel_mi_midpoint(delta: f64, sigma: f64) -> f64 {
        let a = delta.abs() / 2.0;
        let steps = 400_000;
        let (lo, hi) = (a - 14.0 * sigma, a + 14.0 * sigma);
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let y = lo + (i as f64 + 0.5) * h;
            let z = (y - a) / sigma;
            let pdf = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let t = -2.0 * a * y / (sigma * sigma);
            let softplus = if t > 0.0 {
                t + (-t).exp().ln_1p()
            } else {
                t.exp().ln_1p()
            };
            acc += pdf * softplus * h;
        }
        std::f64::consts::LN_2 - acc
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(gaussian_mi_closed_form(0.0).unwrap(), 0.0);
        assert!((gaussian_mi_closed_form(0.6).unwrap() - 0.22314).abs() < 1e-5);
        assert!((gaussian_mi_closed_form(0.9).unwrap() - 0.83038).abs() < 5e-5);
        assert!((gaussian_mi_closed_form(-0.9).unwrap() - 0.83038).abs() < 5e-5);
        for r in [1.0, -1.0, 1.5, f64::NAN] {
            assert!(matches!(gaussian_mi_closed_form(r), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn channel_matches_second_route() {
        for (delta, sigma) in [(1.0, 2.0), (1.0, 0.5), (2.0, 1.0), (1.0, 8.0), (1.0, 0.1)] {
            let spec = ChannelSpec::new(delta, sigma).unwrap();
            let q = binary_channel_mi(&spec, 1024).unwrap();
            let m = channel_mi_midpoint(delta, sigma);
            assert!(
                (q - m).abs() < 1e-8,
                "delta={delta} sigma={sigma}: {q} vs {m}"
            );
        }
    }

    #[test]
    fn channel_reference_point_and_limits() {
        let spec = ChannelSpec::new(1.0, 2.0).unwrap();
        let i = binary_channel_mi(&spec, 1024).unwrap();
        assert!(i > 0.01563 && i < 0.125);
        // Small-SNR expansion s/2 - s²/4 with s = Δ²/(4σ²) gives 0.0303.
        assert!((i - 0.0309).abs() < 1e-3, "got {i}");
        assert!((i - (0.03125 - 0.0625 * 0.0625 / 4.0)).abs() < 1e-4);
        let wide = binary_channel_mi(&ChannelSpec::new(1.0, 1e3).unwrap(), 1024).unwrap();
        assert!(wide < 1e-6);
        let sharp = binary_channel_mi(&ChannelSpec::new(1.0, 0.02).unwrap(), 1024).unwrap();
        assert!((sharp - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn channel_sign_and_scale_invariance() {
        let a = binary_channel_mi(&ChannelSpec::new(1.0, 1.5).unwrap(), 1024).unwrap();
        let b = binary_channel_mi(&ChannelSpec::new(-1.0, 1.5).unwrap(), 1024).unwrap();
        let c = binary_channel_mi(&ChannelSpec::new(2.0, 3.0).unwrap(), 1024).unwrap();
        assert_eq!(a, b);
        assert!((a - c).abs() < 1e-8);
    }

    #[test]
    fn channel_preconditions() {
        assert!(ChannelSpec::new(0.0, 1.0).is_err());
        assert!(ChannelSpec::new(1.0, 0.0).is_err());
        let spec = ChannelSpec::new(1.0, 1.0).unwrap();
        assert!(matches!(
            binary_channel_mi(&spec, 1023),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn tightness_passes_and_ratio_rises() {
        let specs: Vec<_> = [2.0, 4.0, 8.0]
            .iter()
            .map(|r| ChannelSpec::new(1.0, *r).unwrap())
            .collect();
        let report = tightness_check(&specs).unwrap();
        assert!(report.ratios_increasing());
        assert!(report.entries.iter().all(|e| e.ratio < 0.25));
        let text = report.to_record().to_text();
        assert!(text.contains("spec_02_ratio"));
    }

    #[test]
    fn corrupted_value_is_caught() {
        let spec = ChannelSpec::new(1.0, 2.0).unwrap();
        let beta = spec.beta().unwrap();
        assert!(matches!(
            check_tightness(&spec, 1.1 * beta),
            Err(Error::TightnessViolation { .. })
        ));
        assert!(matches!(
            check_tightness(&spec, 0.0),
            Err(Error::TightnessViolation { .. })
        ));
    }

    #[test]
    fn tightness_requires_decreasing_beta() {
        let specs = [
            ChannelSpec::new(1.0, 4.0).unwrap(),
            ChannelSpec::new(1.0, 2.0).unwrap(),
        ];
        assert!(matches!(tightness_check(&specs), Err(Error::Param(_))));
    }

    #[test]
    fn too_few_trials() {
        let cert = CertificationParams::with_beta(0.0);
        let r = monte_carlo_error_rates(
            Scenario::Independent,
            50,
            &GeneratorParams::default(),
            &cert,
            Exec::Sequential,
        );
        assert!(matches!(r, Err(Error::Param(_))));
    }
}
