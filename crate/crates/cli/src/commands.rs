use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use credit_core::certification::{verify, CertificationParams, TOOL_VERSION};
use credit_core::embedding::{
    clip_embeddings, load_embeddings, save_embeddings, EmbeddingMatrix, Format,
};
use credit_core::error::Error;
use credit_core::exec::Exec;
use credit_core::ksg::{ksg_estimate, KsgConfig};
use credit_core::mechanism::{apply_mechanism_with, calibrate_sigma_dp, DefenseParams};
use credit_core::record::Record;
use credit_core::simulation::{run_separation_experiment, SimulationParams};
use credit_core::tradeoff::{covariance_spectrum, log_grid, select_sigma, TradeoffConfig};

use crate::config::Settings;
use crate::exit::CliError;

const DEFAULT_SUSPECTS: usize = 20;

/// Path of the defense record written next to a defended release.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = OsString::from(output.as_os_str());
    name.push(".defense.toml");
    PathBuf::from(name)
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_owned(),
        source,
    }
    .into()
}

fn load(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    Ok(load_embeddings(path, Format::Auto)?)
}

/// Sensitivity from the explicit key or from the clip radius.
fn sensitivity(s: &Settings) -> Result<f64, CliError> {
    s.delta_sensitivity
        .or(s.clip_radius.map(|r| 2.0 * r))
        .ok_or_else(|| {
            Error::Sensitivity("neither clip-radius nor delta-sensitivity is set".into()).into()
        })
}

fn ksg_config(s: &Settings, exec: Exec) -> KsgConfig {
    KsgConfig {
        k: s.k.unwrap_or(3),
        tie_jitter_seed: s.tie_jitter_seed.unwrap_or(s.seed()),
        jitter_scale: s.jitter_scale.unwrap_or(0.0),
        exec,
    }
}

/// Deployment defaults with every present key applied.
fn certification(s: &Settings, beta: f64, d: usize, v_size: usize) -> CertificationParams {
    let base = CertificationParams::with_beta(beta);
    CertificationParams {
        rho: s.rho.unwrap_or(base.rho),
        eta: s.eta.unwrap_or(base.eta),
        query_budget: s.query_budget.unwrap_or(base.query_budget),
        v_size: s.v_size.unwrap_or(v_size),
        d: s.d.unwrap_or(d),
        k: s.k.unwrap_or(base.k),
        beta,
        mu_ind: s.mu_ind.unwrap_or(base.mu_ind),
        i_sur: s.i_sur,
    }
}

pub fn defend(s: &Settings, exec: Exec) -> Result<(), CliError> {
    let input = s.require(&s.input, "input")?;
    let output = s.require(&s.output, "output")?;
    let delta = sensitivity(s)?;
    let sigma = match (s.sigma, s.epsilon, s.delta_dp) {
        (Some(sigma), _, _) => sigma,
        (None, Some(eps), Some(dp)) => calibrate_sigma_dp(eps, dp, delta)?,
        _ => return Err(CliError::Config("missing required key \"sigma\"".into())),
    };
    let radius = s.clip_radius.unwrap_or(delta / 2.0);
    let n_comp = s.n_comp.unwrap_or(1);

    let raw = load(input)?;
    let defense = DefenseParams::new(sigma, delta, s.d.unwrap_or(raw.d()), s.seed())?;
    let beta = defense.beta(n_comp)?;
    let clipped = clip_embeddings(&raw, radius)?;
    let defended = apply_mechanism_with(&clipped, &defense, exec)?;
    save_embeddings(&defended, output, s.embedding_format())?;

    let mut sidecar = Record::new();
    sidecar
        .set("beta", beta)
        .set("clip_radius", radius)
        .set("d", defense.d)
        .set("delta_sensitivity", defense.delta_sensitivity)
        .set("input", input.display().to_string())
        .set("n", defended.n())
        .set("n_comp", n_comp)
        .set("seed", defense.seed)
        .set("sigma", defense.sigma)
        .set("tool_version", TOOL_VERSION);
    let sidecar_file = sidecar_path(output);
    sidecar.write(&sidecar_file)?;
    println!(
        "defended n={} d={} sigma={} delta={} beta={} -> {}",
        defended.n(),
        defended.d(),
        sigma,
        delta,
        beta,
        output.display()
    );
    Ok(())
}

pub fn estimate_mi(s: &Settings, exec: Exec) -> Result<(), CliError> {
    let suspect = load(s.require(&s.suspect, "suspect")?)?;
    let defended = load(s.require(&s.defended, "defended")?)?;
    let cfg = ksg_config(s, exec);
    let mi = ksg_estimate(&suspect, &defended, &cfg)?;
    let mut r = Record::new();
    r.set("defended_d", defended.d())
        .set("defended_label", defended.label())
        .set("k", cfg.k)
        .set("mi_estimate", mi)
        .set("n", suspect.n())
        .set("suspect_d", suspect.d())
        .set("suspect_label", suspect.label())
        .set("tie_jitter_seed", cfg.tie_jitter_seed)
        .set("tool_version", TOOL_VERSION);
    if let Some(out) = &s.output {
        r.write(out)?;
    }
    println!("mi={mi:.6} k={} n={}", cfg.k, suspect.n());
    Ok(())
}

/// Beta and, when known, the defense it came from.
fn resolve_beta(s: &Settings, d: usize) -> Result<(f64, Option<DefenseParams>), CliError> {
    let defense = if let Some(path) = &s.defense {
        let r = Record::read(path)?;
        let dp = DefenseParams::new(
            r.real("sigma")?,
            r.real("delta_sensitivity")?,
            r.uint("d")? as usize,
            r.uint("seed")?,
        )?;
        Some((dp, s.n_comp.unwrap_or(r.uint("n_comp")?)))
    } else if let Some(sigma) = s.sigma {
        let dp = DefenseParams::new(sigma, sensitivity(s)?, d, s.seed())?;
        Some((dp, s.n_comp.unwrap_or(1)))
    } else {
        None
    };
    match (s.beta, defense) {
        (Some(beta), dp) => Ok((beta, dp.map(|(dp, _)| dp))),
        (None, Some((dp, n_comp))) => Ok((dp.beta(n_comp)?, Some(dp))),
        (None, None) => Err(CliError::Config(
            "beta is unknown: set defense, sigma with clip-radius, or beta".into(),
        )),
    }
}

fn truncate(m: EmbeddingMatrix, v_size: Option<usize>) -> Result<EmbeddingMatrix, CliError> {
    match v_size {
        Some(v) if v < m.n() => {
            let rows: Vec<usize> = (0..v).collect();
            Ok(m.select_rows(&rows)?)
        }
        _ => Ok(m),
    }
}

pub fn verify_cmd(s: &Settings, exec: Exec) -> Result<(), CliError> {
    let output = s.require(&s.output, "output")?;
    let suspect = truncate(load(s.require(&s.suspect, "suspect")?)?, s.v_size)?;
    let defended = truncate(load(s.require(&s.defended, "defended")?)?, s.v_size)?;
    let (beta, defense) = resolve_beta(s, defended.d())?;
    let params = certification(s, beta, defended.d(), defended.n());
    let mut cert = verify(&suspect, &defended, &params, &ksg_config(s, exec))?;
    if let Some(dp) = defense {
        cert = cert.with_defense(dp);
    }
    cert.to_record().write(output)?;
    println!("{}", cert.summary());
    Ok(())
}

pub fn calibrate_sigma(s: &Settings, exec: Exec) -> Result<(), CliError> {
    let input = s.require(&s.input, "input")?;
    let output = s.require(&s.output, "output")?;
    let delta = sensitivity(s)?;
    let m = load(input)?;

    let mut cfg = TradeoffConfig::new(covariance_spectrum(&m)?);
    if s.sigma_min.is_some() || s.sigma_max.is_some() || s.sigma_count.is_some() {
        cfg.sigma_grid = log_grid(
            s.sigma_min.unwrap_or(0.01),
            s.sigma_max.unwrap_or(1.0),
            s.sigma_count.unwrap_or(41),
        )?;
    }
    cfg.lambda_util = s.lambda_util.unwrap_or(cfg.lambda_util);
    cfg.lambda_ver = s.lambda_ver.unwrap_or(cfg.lambda_ver);
    cfg.pi0 = s.pi0.or(s.pi1.map(|p| 1.0 - p)).unwrap_or(cfg.pi0);
    cfg.pi1 = s.pi1.unwrap_or(1.0 - cfg.pi0);
    cfg.certification = certification(s, 0.0, m.d(), m.n());
    cfg.n_comp = s.n_comp.unwrap_or(1);
    cfg.exec = exec;

    let template = DefenseParams::new(cfg.sigma_grid[0], delta, cfg.certification.d, s.seed())?;
    let selection = select_sigma(&cfg, &template)?;
    selection.write_csv(output)?;
    let best = selection.best();
    println!(
        "sigma_star={} beta={} tau={} objective={}",
        selection.sigma_star, best.beta, best.tau, best.objective
    );
    Ok(())
}

pub fn simulate(s: &Settings, exec: Exec) -> Result<(), CliError> {
    let out_dir = s.require(&s.output, "output")?;
    let base = SimulationParams::default();
    let params = SimulationParams {
        d_in: s.d_in.unwrap_or(base.d_in),
        d: s.d.unwrap_or(base.d),
        clip_radius: s.clip_radius.unwrap_or(base.clip_radius),
        sigma: s.sigma.unwrap_or(base.sigma),
        v_size: s.v_size.unwrap_or(base.v_size),
        query_budget: s.query_budget.map(|q| q as usize).or(base.query_budget),
        repeat_factor: s.repeat_factor.unwrap_or(base.repeat_factor),
        rho: s.rho.unwrap_or(base.rho),
        eta: s.eta.unwrap_or(base.eta),
        k: s.k.unwrap_or(base.k),
        n_comp: s.n_comp.unwrap_or(base.n_comp),
        seed: s.seed(),
        exec,
    };
    params.certification()?;
    let n_sur = s.n_surrogates.unwrap_or(DEFAULT_SUSPECTS);
    let n_ind = s.n_independents.unwrap_or(DEFAULT_SUSPECTS);

    let report = run_separation_experiment(n_sur, n_ind, &params)?;
    let cert_dir = out_dir.join("certificates");
    fs::create_dir_all(&cert_dir).map_err(|e| io_error(&cert_dir, e))?;
    let mut record = report.to_record(&params);
    record.set("tool_version", TOOL_VERSION);
    record.write(out_dir.join("report.toml"))?;
    let csv_path = out_dir.join("suspects.csv");
    fs::write(&csv_path, report.to_csv()).map_err(|e| io_error(&csv_path, e))?;
    for suspect in &report.suspects {
        suspect
            .certificate
            .to_record()
            .write(cert_dir.join(format!("{}.toml", suspect.label)))?;
    }
    println!(
        "auc={:.4} accuracy={:.4} tau={:.6} beta={:.6} suspects={} -> {}",
        report.auc,
        report.accuracy(),
        report.tau,
        report.beta,
        report.suspects.len(),
        out_dir.display()
    );
    Ok(())
}
