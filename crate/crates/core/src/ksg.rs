//! Kraskov–Stögbauer–Grassberger mutual-information estimator (variant 1).
//!
//! For each sample `i` the joint-space radius `ε_i` is the distance to its
//! k-th nearest neighbor under the max of the two marginal ℓ2 distances.
//! `n_x(i)` and `n_y(i)` count the other samples strictly closer than `ε_i`
//! in each marginal space, and
//!
//! ```text
//! Î = ψ(k) - mean_i[ψ(n_x(i) + 1) + ψ(n_y(i) + 1)] + ψ(n)
//! ```
//!
//! Neighbor search is exact brute force, one sample per task. All
//! comparisons are made on squared distances so that counts are exact.

use rand::Rng;

use crate::embedding::EmbeddingMatrix;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::rng::{self, Domain};
use crate::special::digamma_unchecked;

/// Jitter relative to the data range used when `jitter_scale` is left at 0.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-10;
const MAX_JITTER_ROUNDS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsgConfig {
    pub k: usize,
    pub tie_jitter_seed: u64,
    /// Tie-breaking jitter amplitude relative to each matrix's value range.
    /// Zero selects [`DEFAULT_RELATIVE_JITTER`]. Jitter is only ever applied
    /// when some joint radius is exactly zero.
    pub jitter_scale: f64,
    pub exec: Exec,
}

impl Default for KsgConfig {
    fn default() -> Self {
        Self {
            k: 3,
            tie_jitter_seed: 0,
            jitter_scale: 0.0,
            exec: Exec::default(),
        }
    }
}

impl KsgConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

/// Neighbor statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborStats {
    /// Joint-space distance to the k-th nearest neighbor.
    pub radius: f64,
    pub n_x: usize,
    pub n_y: usize,
}

fn check_inputs(a: &EmbeddingMatrix, b: &EmbeddingMatrix, cfg: &KsgConfig) -> Result<()> {
    ensure!(cfg.k >= 1, Error::Param("k must be >= 1".into()));
    ensure!(
        a.n() == b.n(),
        Error::Param(format!("row counts differ: {} vs {}", a.n(), b.n()))
    );
    ensure!(
        a.n() > cfg.k,
        Error::Param(format!("need n > k, got n={} and k={}", a.n(), cfg.k))
    );
    ensure!(
        cfg.jitter_scale.is_finite() && cfg.jitter_scale >= 0.0,
        Error::Param(format!(
            "jitter scale must be nonnegative, got {}",
            cfg.jitter_scale
        ))
    );
    Ok(())
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn stats_for(a: &EmbeddingMatrix, b: &EmbeddingMatrix, k: usize, i: usize) -> NeighborStats {
    let n = a.n();
    let (ai, bi) = (a.row(i), b.row(i));
    let mut dx = Vec::with_capacity(n - 1);
    let mut dy = Vec::with_capacity(n - 1);
    for j in (0..n).filter(|&j| j != i) {
        dx.push(sq_dist(ai, a.row(j)));
        dy.push(sq_dist(bi, b.row(j)));
    }
    let mut joint: Vec<f64> = dx.iter().zip(&dy).map(|(x, y)| x.max(*y)).collect();
    let (_, kth, _) = joint.select_nth_unstable_by(k - 1, f64::total_cmp);
    let eps2 = *kth;
    NeighborStats {
        radius: eps2.sqrt(),
        n_x: dx.iter().filter(|&&v| v < eps2).count(),
        n_y: dy.iter().filter(|&&v| v < eps2).count(),
    }
}

/// Per-sample joint radii and strict marginal counts, without tie handling.
pub fn knn_joint_radii(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    cfg: &KsgConfig,
) -> Result<Vec<NeighborStats>> {
    check_inputs(a, b, cfg)?;
    let k = cfg.k;
    Ok(cfg.exec.map(a.n(), |i| stats_for(a, b, k, i)))
}

/// Combine neighbor statistics into the KSG estimate (nats).
///
/// Counts are binned first and the digamma terms summed in increasing count
/// order, which makes the result independent of sample order.
pub fn ksg_from_stats(stats: &[NeighborStats], k: usize) -> Result<f64> {
    ksg_from_stats_with(stats, k, digamma_unchecked)
}

/// [`ksg_from_stats`] with a caller-supplied digamma, for self-checks.
pub fn ksg_from_stats_with<F>(stats: &[NeighborStats], k: usize, psi: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let n = stats.len();
    ensure!(
        n > k && k >= 1,
        Error::Param(format!("need n > k >= 1, got n={n}, k={k}"))
    );
    let mut hist = vec![0u64; n];
    for s in stats {
        hist[s.n_x] += 1;
        hist[s.n_y] += 1;
    }
    let marginal: f64 = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(count, &mult)| mult as f64 * psi(count as f64 + 1.0))
        .sum();
    Ok(psi(k as f64) - marginal / n as f64 + psi(n as f64))
}

/// Estimate `I(a; b)` in nats.
///
/// Duplicate joint points (some `ε_i = 0`) trigger deterministic uniform
/// jitter seeded by `cfg.tie_jitter_seed`; the amplitude grows tenfold per
/// round until every radius is positive.
pub fn ksg_estimate(a: &EmbeddingMatrix, b: &EmbeddingMatrix, cfg: &KsgConfig) -> Result<f64> {
    let stats = knn_joint_radii(a, b, cfg)?;
    if stats.iter().all(|s| s.radius > 0.0) {
        return ksg_from_stats(&stats, cfg.k);
    }
    let base = if cfg.jitter_scale > 0.0 {
        cfg.jitter_scale
    } else {
        DEFAULT_RELATIVE_JITTER
    };
    for round in 0..MAX_JITTER_ROUNDS {
        let rel = base * 10f64.powi(round as i32);
        let ja = jitter(a, rel, cfg.tie_jitter_seed, 2 * round as u64)?;
        let jb = jitter(b, rel, cfg.tie_jitter_seed, 2 * round as u64 + 1)?;
        let stats = knn_joint_radii(&ja, &jb, cfg)?;
        if stats.iter().all(|s| s.radius > 0.0) {
            return ksg_from_stats(&stats, cfg.k);
        }
    }
    Err(Error::Data(
        "duplicate samples persist after tie-breaking jitter".into(),
    ))
}

fn jitter(m: &EmbeddingMatrix, rel: f64, seed: u64, tag: u64) -> Result<EmbeddingMatrix> {
    let (lo, hi) = m
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = if hi > lo { hi - lo } else { 1.0 };
    let amp = rel * range;
    let mut values = m.values().to_vec();
    for (i, row) in values.chunks_exact_mut(m.d()).enumerate() {
        let mut rng = rng::stream(seed, Domain::TieJitter, (tag << 40) | i as u64);
        for v in row {
            *v += amp * rng.random_range(-1.0..1.0);
        }
    }
    m.with_values_unclipped(values)
}
