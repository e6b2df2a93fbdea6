//! Oracle-backed self test: channel tightness, digamma identities and a
//! small KSG accuracy benchmark against the bivariate-Gaussian closed form.

use std::time::Instant;

use credit_core::embedding::EmbeddingMatrix;
use credit_core::exec::Exec;
use credit_core::ksg::{knn_joint_radii, ksg_from_stats_with, KsgConfig};
use credit_core::oracles::{gaussian_mi_closed_form, tightness_check, ChannelSpec};
use credit_core::record::Record;
use credit_core::rng::{self, Domain};
use credit_core::special::digamma;
use rand_distr::{Distribution, StandardNormal};

use crate::exit::CliError;

/// Setting this variable to `1` swaps in a deliberately wrong digamma.
pub const CORRUPT_ENV: &str = "CREDIT_SELFCHECK_CORRUPT_DIGAMMA";

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const KSG_SAMPLES: usize = 5000;
const KSG_TOLERANCE: f64 = 0.05;
const DIGAMMA_TOLERANCE: f64 = 1e-10;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn psi_for(corrupt: bool) -> impl Fn(f64) -> f64 + Copy {
    move |x| {
        let v = digamma(x).unwrap_or(f64::NAN);
        // Off-by-one in the recurrence: returns ψ(x + 1).
        if corrupt {
            v + 1.0 / x
        } else {
            v
        }
    }
}

fn digamma_identities(psi: impl Fn(f64) -> f64) -> Check {
    let mut worst: f64 = 0.0;
    worst = worst.max((psi(1.0) + EULER_GAMMA).abs());
    worst = worst.max((psi(0.5) + EULER_GAMMA + 2.0 * std::f64::consts::LN_2).abs());
    for x in [0.25, 1.0, 2.5, 7.0, 30.0, 1e3] {
        worst = worst.max((psi(x + 1.0) - psi(x) - 1.0 / x).abs());
    }
    // ψ(n) = H_{n-1} - γ.
    let mut harmonic = 0.0;
    for n in 1..=200u32 {
        worst = worst.max((psi(n as f64) - (harmonic - EULER_GAMMA)).abs());
        harmonic += 1.0 / n as f64;
    }
    Check {
        name: "digamma",
        pass: worst <= DIGAMMA_TOLERANCE,
        detail: format!("max identity error {worst:.3e}"),
    }
}

fn correlated_pair(
    rho: f64,
    n: usize,
    seed: u64,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix), CliError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Synthetic, i as u64);
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (a, rho * a + (1.0 - rho * rho).sqrt() * b)
        })
        .unzip();
    Ok((
        EmbeddingMatrix::new(n, 1, xs, "x")?,
        EmbeddingMatrix::new(n, 1, ys, "y")?,
    ))
}

fn ksg_benchmark(
    psi: impl Fn(f64) -> f64 + Copy,
    seed: u64,
    exec: Exec,
) -> Result<Check, CliError> {
    let cfg = KsgConfig::default().with_exec(exec);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for rho in [0.5, 0.9] {
        let (x, y) = correlated_pair(rho, KSG_SAMPLES, seed)?;
        let stats = knn_joint_radii(&x, &y, &cfg)?;
        let est = ksg_from_stats_with(&stats, cfg.k, psi)?;
        let truth = gaussian_mi_closed_form(rho)?;
        worst = worst.max((est - truth).abs());
        parts.push(format!("rho={rho} est={est:.4} true={truth:.4}"));
    }
    Ok(Check {
        name: "ksg-benchmark",
        pass: worst <= KSG_TOLERANCE,
        detail: format!("{} max error {worst:.4}", parts.join(" ")),
    })
}

fn channel_tightness() -> Result<Check, CliError> {
    let specs = [2.0, 4.0, 8.0]
        .iter()
        .map(|&sigma| ChannelSpec::new(1.0, sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let report = tightness_check(&specs)?;
    let ratios: Vec<String> = report
        .entries
        .iter()
        .map(|e| format!("{:.4}", e.ratio))
        .collect();
    Ok(Check {
        name: "channel-tightness",
        pass: report.ratios_increasing(),
        detail: format!("I/beta {}", ratios.join(" ")),
    })
}

/// Run every check, print one line each, and fail if any check fails.
pub fn run(
    seed: u64,
    corrupt: bool,
    exec: Exec,
    output: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let start = Instant::now();
    let psi = psi_for(corrupt);
    let checks = vec![
        channel_tightness()?,
        digamma_identities(psi),
        ksg_benchmark(psi, seed, exec)?,
    ];
    let elapsed = start.elapsed().as_secs_f64();

    let mut record = Record::new();
    for c in &checks {
        println!(
            "{} {} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        record.set(&format!("{}_pass", c.name.replace('-', "_")), c.pass);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    record.set("all_pass", failed.is_empty());
    println!(
        "selfcheck {} in {elapsed:.2}s",
        if failed.is_empty() { "ok" } else { "failed" }
    );
    if let Some(path) = output {
        record.write(path)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Selfcheck(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_digamma_passes_and_corrupt_fails() {
        assert!(digamma_identities(psi_for(false)).pass);
        assert!(!digamma_identities(psi_for(true)).pass);
    }

    #[test]
    fn corrupt_digamma_breaks_the_benchmark() {
        assert!(
            ksg_benchmark(psi_for(false), 0, Exec::Sequential)
                .unwrap()
                .pass
        );
        assert!(
            !ksg_benchmark(psi_for(true), 0, Exec::Sequential)
                .unwrap()
                .pass
        );
    }
}
