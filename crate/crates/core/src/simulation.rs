//! Desk-scale attack/defense simulation with linear embedding models.
//!
//! A teacher `e(x) = clip(Wᵀx)` is released through the Gaussian mechanism.
//! Surrogates are fitted by least squares to query responses of the
//! release; independent models are fresh random maps. Verification runs on
//! a shared set of standard-normal inputs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::certification::{verify, Certificate, CertificationParams, Decision};
use crate::embedding::{clip_embeddings, EmbeddingMatrix};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::ksg::{ksg_estimate, KsgConfig};
use crate::mechanism::{apply_mechanism_with, DefenseParams};
use crate::record::Record;
use crate::rng::{self, Domain};

/// Largest utility budget a decorrelation attack may spend.
pub const MAX_UTILITY_BUDGET: f64 = 0.2;
pub const MIN_SUSPECTS: usize = 10;
const HOLDOUT_SIZE: usize = 1000;
const RANK_TOLERANCE: f64 = 1e-10;

/// Linear embedding map followed by ℓ2 clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    weight: DMatrix<f64>,
    clip_radius: f64,
    seed: u64,
}

impl SyntheticModel {
    pub fn new(weight: DMatrix<f64>, clip_radius: f64, seed: u64) -> Result<Self> {
        ensure!(
            weight.nrows() >= 1 && weight.ncols() >= 1,
            Error::Param("weight matrix must be nonempty".into())
        );
        ensure!(
            weight.iter().all(|w| w.is_finite()),
            Error::Data("weight matrix has non-finite entries".into())
        );
        ensure!(
            clip_radius.is_finite() && clip_radius > 0.0,
            Error::Param(format!("clip radius must be positive, got {clip_radius}"))
        );
        Ok(Self {
            weight,
            clip_radius,
            seed,
        })
    }

    /// Random `N(0, 1/d_in)` weights drawn from `domain`.
    fn random(d_in: usize, d: usize, clip_radius: f64, seed: u64, domain: Domain) -> Result<Self> {
        ensure!(
            d_in >= 1 && d >= 1,
            Error::Param(format!("dimensions must be positive, got {d_in}x{d}"))
        );
        let mut rng = rng::stream(seed, domain, 0);
        let scale = 1.0 / (d_in as f64).sqrt();
        let weight = DMatrix::from_fn(d_in, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        Self::new(weight, clip_radius, seed)
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d(&self) -> usize {
        self.weight.ncols()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn clip_radius(&self) -> f64 {
        self.clip_radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Clipped embeddings of the rows of `inputs`.
    pub fn embed(&self, inputs: &DMatrix<f64>, label: &str) -> Result<EmbeddingMatrix> {
        ensure!(
            inputs.ncols() == self.d_in(),
            Error::Param(format!(
                "inputs have {} columns, model expects {}",
                inputs.ncols(),
                self.d_in()
            ))
        );
        let out = inputs * &self.weight;
        clip_embeddings(&to_embedding(&out, label)?, self.clip_radius)
    }
}

fn to_embedding(m: &DMatrix<f64>, label: &str) -> Result<EmbeddingMatrix> {
    let (n, d) = m.shape();
    let values = (0..n)
        .flat_map(|i| (0..d).map(move |j| m[(i, j)]))
        .collect();
    EmbeddingMatrix::new(n, d, values, label)
}

fn to_dmatrix(m: &EmbeddingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.n(), m.d(), m.values())
}

/// `n` standard-normal inputs; row `i` depends only on `(seed, domain, i)`.
pub fn sample_inputs(n: usize, d_in: usize, seed: u64, domain: Domain) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, d_in);
    for i in 0..n {
        let mut rng = rng::stream(seed, domain, i as u64);
        for j in 0..d_in {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

pub fn make_teacher(d_in: usize, d: usize, clip_radius: f64, seed: u64) -> Result<SyntheticModel> {
    SyntheticModel::random(d_in, d, clip_radius, seed, Domain::TeacherWeights)
}

/// A model trained from scratch by someone else: weights from a stream
/// disjoint from every teacher stream.
pub fn make_independent(
    d_in: usize,
    d: usize,
    clip_radius: f64,
    seed: u64,
) -> Result<SyntheticModel> {
    SyntheticModel::random(d_in, d, clip_radius, seed, Domain::IndependentWeights)
}

/// Fit a surrogate to `q_budget` queries of the defended teacher, spent as
/// `q_budget / m` distinct inputs each queried `m` times and averaged.
pub fn extract_surrogate(
    teacher: &SyntheticModel,
    defense: &DefenseParams,
    q_budget: usize,
    m: usize,
    seed: u64,
) -> Result<SyntheticModel> {
    ensure!(m >= 1, Error::Param("repeat factor must be >= 1".into()));
    let d_in = teacher.d_in();
    ensure!(
        q_budget >= d_in,
        Error::Rank(format!(
            "query budget {q_budget} is below input dimension {d_in}"
        ))
    );
    ensure!(
        q_budget.is_multiple_of(m),
        Error::Param(format!(
            "query budget {q_budget} is not divisible by m = {m}"
        ))
    );
    let distinct = q_budget / m;
    ensure!(
        distinct >= d_in,
        Error::Rank(format!(
            "{distinct} distinct queries cannot determine {d_in} inputs"
        ))
    );
    let inputs = sample_inputs(distinct, d_in, seed, Domain::QueryInputs);
    let clean = teacher.embed(&inputs, "queries")?;
    let noise_seed = rng::derive_seed(defense.seed, Domain::QueryNoise, seed);
    let mut sum = DMatrix::zeros(distinct, teacher.d());
    for rep in 0..m {
        let p = DefenseParams {
            seed: rng::derive_seed(noise_seed, Domain::QueryNoise, rep as u64),
            ..*defense
        };
        sum += to_dmatrix(&apply_mechanism_with(&clean, &p, Exec::Sequential)?);
    }
    let responses = sum / m as f64;
    let svd = inputs.svd(true, true);
    let cutoff = RANK_TOLERANCE * svd.singular_values.max();
    ensure!(
        svd.rank(cutoff) == d_in,
        Error::Rank(format!("query design has rank below {d_in}"))
    );
    let weight = svd
        .solve(&responses, cutoff)
        .map_err(|e| Error::Rank(e.to_string()))?;
    SyntheticModel::new(weight, teacher.clip_radius(), seed)
}

/// `‖W_a - W_b‖_F / ‖W_b‖_F`.
pub fn relative_weight_error(a: &SyntheticModel, b: &SyntheticModel) -> Result<f64> {
    ensure!(
        a.weight.shape() == b.weight.shape(),
        Error::Param("models have different shapes".into())
    );
    Ok((&a.weight - &b.weight).norm() / b.weight.norm())
}

/// Relative Frobenius distance between the embeddings of two models.
pub fn relative_output_error(
    a: &SyntheticModel,
    b: &SyntheticModel,
    inputs: &DMatrix<f64>,
) -> Result<f64> {
    let ea = to_dmatrix(&a.embed(inputs, "a")?);
    let eb = to_dmatrix(&b.embed(inputs, "b")?);
    Ok((&ea - &eb).norm() / eb.norm())
}

/// Haar-random rotation of `R^n` (QR of a Gaussian matrix, sign-fixed).
fn random_rotation(n: usize, seed: u64, index: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, Domain::Decorrelation, index);
    let g = DMatrix::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecorrelationConfig {
    /// Random rotations the attacker tries.
    pub candidates: usize,
    /// Mixing weights tried per rotation, evenly spaced up to the weight
    /// that spends the largest allowed budget.
    pub grid: usize,
    pub seed: u64,
    pub ksg: KsgConfig,
}

impl Default for DecorrelationConfig {
    fn default() -> Self {
        Self {
            candidates: 4,
            grid: 8,
            seed: 0,
            ksg: KsgConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelationOutcome {
    pub model: SyntheticModel,
    /// Mixing weight of the chosen rotation.
    pub alpha: f64,
    /// Measured utility loss: relative output change on held-out inputs.
    pub degradation: f64,
    /// MI of the returned model's embeddings with the release.
    pub mi: f64,
}

/// Mix the surrogate with rotated copies of itself,
/// `W' = (1 - α) W + α R W`, keeping the utility loss within `delta_u`,
/// and return the candidate with the smallest MI against the release.
///
/// The search set for a budget contains the search set for every smaller
/// budget, so the attained MI never increases with `delta_u`. If no nonzero
/// mix fits the budget the unmodified surrogate is returned.
pub fn decorrelation_attack(
    surrogate: &SyntheticModel,
    defended: &EmbeddingMatrix,
    verification_inputs: &DMatrix<f64>,
    delta_u: f64,
    cfg: &DecorrelationConfig,
) -> Result<DecorrelationOutcome> {
    ensure!(
        (0.0..=MAX_UTILITY_BUDGET).contains(&delta_u),
        Error::Param(format!(
            "utility budget must lie in [0, {MAX_UTILITY_BUDGET}], got {delta_u}"
        ))
    );
    ensure!(
        cfg.candidates >= 1 && cfg.grid >= 1,
        Error::Param("decorrelation search needs at least one candidate and grid point".into())
    );
    ensure!(
        verification_inputs.nrows() == defended.n(),
        Error::Param("verification inputs and defended embeddings differ in length".into())
    );
    let holdout = sample_inputs(
        HOLDOUT_SIZE,
        surrogate.d_in(),
        cfg.seed,
        Domain::HoldoutInputs,
    );
    let mi_of = |m: &SyntheticModel| {
        ksg_estimate(
            &m.embed(verification_inputs, "suspect")?,
            defended,
            &cfg.ksg,
        )
    };

    let mut best = DecorrelationOutcome {
        model: surrogate.clone(),
        alpha: 0.0,
        degradation: 0.0,
        mi: mi_of(surrogate)?,
    };
    for c in 0..cfg.candidates {
        let rot = random_rotation(surrogate.d_in(), cfg.seed, c as u64);
        let rotated = &rot * &surrogate.weight;
        let mix = |alpha: f64| -> Result<SyntheticModel> {
            let w = &surrogate.weight * (1.0 - alpha) + &rotated * alpha;
            SyntheticModel::new(w, surrogate.clip_radius, surrogate.seed)
        };
        let loss = |alpha: f64| relative_output_error(&mix(alpha)?, surrogate, &holdout);
        let cap = alpha_for_loss(&loss, MAX_UTILITY_BUDGET)?;
        for j in 1..=cfg.grid {
            let alpha = cap * j as f64 / cfg.grid as f64;
            let model = mix(alpha)?;
            let degradation = relative_output_error(&model, surrogate, &holdout)?;
            if degradation > delta_u {
                break;
            }
            let mi = mi_of(&model)?;
            if mi < best.mi {
                best = DecorrelationOutcome {
                    model,
                    alpha,
                    degradation,
                    mi,
                };
            }
        }
    }
    Ok(best)
}

/// Smallest mixing weight in `[0, 1]` whose loss reaches `target`, by
/// bisection; 1 if the target is out of reach.
fn alpha_for_loss(loss: &dyn Fn(f64) -> Result<f64>, target: f64) -> Result<f64> {
    if loss(1.0)? <= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if loss(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Area under the ROC curve of `positives` against `negatives`; ties count
/// one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    ensure!(
        !positives.is_empty() && !negatives.is_empty(),
        Error::Param("AUC needs at least one score per class".into())
    );
    let wins: f64 = positives
        .iter()
        .flat_map(|p| negatives.iter().map(move |n| (p, n)))
        .map(|(p, n)| match p.partial_cmp(n) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    Ok(wins / (positives.len() * negatives.len()) as f64)
}

/// Parameters of the linear-teacher pipeline.
///
/// Defaults keep the threshold below what a least-squares surrogate can
/// reach: a small input dimension keeps the query budget `10 · d_in` low
/// relative to `d · |V|`, and `ρ` near one keeps `τ/β` small.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationParams {
    pub d_in: usize,
    pub d: usize,
    pub clip_radius: f64,
    pub sigma: f64,
    pub v_size: usize,
    /// `None` means `10 · d_in`.
    pub query_budget: Option<usize>,
    pub repeat_factor: usize,
    pub rho: f64,
    pub eta: f64,
    pub k: usize,
    pub n_comp: u64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            d_in: 32,
            d: 4,
            clip_radius: 2.0,
            sigma: 2.0,
            v_size: 4000,
            query_budget: None,
            repeat_factor: 1,
            rho: 0.995,
            eta: 0.95,
            k: 3,
            n_comp: 1,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl SimulationParams {
    pub fn query_budget(&self) -> usize {
        self.query_budget.unwrap_or(10 * self.d_in)
    }

    pub fn defense(&self) -> Result<DefenseParams> {
        DefenseParams::for_clip_radius(
            self.sigma,
            self.clip_radius,
            self.d,
            rng::derive_seed(self.seed, Domain::MechanismNoise, 0),
        )
    }

    pub fn certification(&self) -> Result<CertificationParams> {
        let p = CertificationParams {
            rho: self.rho,
            eta: self.eta,
            query_budget: self.query_budget() as u64,
            v_size: self.v_size,
            d: self.d,
            k: self.k,
            beta: self.defense()?.beta(self.n_comp)?,
            mu_ind: 0.0,
            i_sur: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn ksg(&self) -> KsgConfig {
        KsgConfig::with_k(self.k).with_exec(self.exec)
    }
}

/// Teacher, verification inputs and the defended release they produce.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub params: SimulationParams,
    pub teacher: SyntheticModel,
    pub defense: DefenseParams,
    pub inputs: DMatrix<f64>,
    pub defended: EmbeddingMatrix,
}

impl Deployment {
    pub fn new(params: &SimulationParams) -> Result<Self> {
        let teacher = make_teacher(params.d_in, params.d, params.clip_radius, params.seed)?;
        let defense = params.defense()?;
        let inputs = sample_inputs(
            params.v_size,
            params.d_in,
            params.seed,
            Domain::VerificationInputs,
        );
        let clean = teacher.embed(&inputs, "teacher")?;
        let defended = apply_mechanism_with(&clean, &defense, params.exec)?.with_label("defended");
        Ok(Self {
            params: *params,
            teacher,
            defense,
            inputs,
            defended,
        })
    }

    pub fn surrogate(&self, index: usize) -> Result<SyntheticModel> {
        let p = &self.params;
        extract_surrogate(
            &self.teacher,
            &self.defense,
            p.query_budget(),
            p.repeat_factor,
            rng::derive_seed(p.seed, Domain::QueryInputs, index as u64),
        )
    }

    pub fn independent(&self, index: usize) -> Result<SyntheticModel> {
        let p = &self.params;
        make_independent(
            p.d_in,
            p.d,
            p.clip_radius,
            rng::derive_seed(p.seed, Domain::IndependentWeights, index as u64),
        )
    }

    /// Certificate for a suspect's embeddings of the verification inputs.
    pub fn verify_model(&self, model: &SyntheticModel, label: &str) -> Result<Certificate> {
        let suspect = model.embed(&self.inputs, label)?;
        let cert = verify(
            &suspect,
            &self.defended,
            &self.params.certification()?,
            &self.params.ksg(),
        )?;
        Ok(cert.with_defense(self.defense))
    }

    pub fn mi(&self, model: &SyntheticModel) -> Result<f64> {
        ksg_estimate(
            &model.embed(&self.inputs, "suspect")?,
            &self.defended,
            &self.params.ksg(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuspectKind {
    Surrogate,
    Independent,
}

impl SuspectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SuspectKind::Surrogate => "surrogate",
            SuspectKind::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuspectResult {
    pub label: String,
    pub kind: SuspectKind,
    /// Relative output error against the clean teacher on held-out inputs.
    pub utility_error: f64,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub auc: f64,
    pub tau: f64,
    pub beta: f64,
    pub suspects: Vec<SuspectResult>,
}

impl SeparationReport {
    pub fn scores(&self, kind: SuspectKind) -> Vec<f64> {
        self.suspects
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.certificate.mi_estimate)
            .collect()
    }

    /// Fraction of suspects whose decision matches their true kind.
    pub fn accuracy(&self) -> f64 {
        let right = self
            .suspects
            .iter()
            .filter(|s| match s.kind {
                SuspectKind::Surrogate => s.certificate.decision == Decision::Surrogate,
                SuspectKind::Independent => s.certificate.decision == Decision::Independent,
            })
            .count();
        right as f64 / self.suspects.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,kind,mi_estimate,tau,decision,utility_error\n");
        for s in &self.suspects {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{},{:?}",
                s.label,
                s.kind.as_str(),
                s.certificate.mi_estimate,
                s.tau(),
                s.certificate.decision,
                s.utility_error
            );
        }
        out
    }

    pub fn to_record(&self, params: &SimulationParams) -> Record {
        let mut r = Record::new();
        r.set("auc", self.auc)
            .set("accuracy", self.accuracy())
            .set("tau", self.tau)
            .set("beta", self.beta)
            .set("n_surrogates", self.scores(SuspectKind::Surrogate).len())
            .set(
                "n_independents",
                self.scores(SuspectKind::Independent).len(),
            )
            .set("d_in", params.d_in)
            .set("d", params.d)
            .set("clip_radius", params.clip_radius)
            .set("sigma", params.sigma)
            .set("v_size", params.v_size)
            .set("query_budget", params.query_budget())
            .set("repeat_factor", params.repeat_factor)
            .set("rho", params.rho)
            .set("eta", params.eta)
            .set("k", params.k)
            .set("n_comp", params.n_comp)
            .set("seed", params.seed);
        r
    }
}

impl SuspectResult {
    fn tau(&self) -> f64 {
        self.certificate.tau
    }
}

/// Verify `n_surrogates` extracted surrogates and `n_independents`
/// independent models against one defended teacher and score the
/// separation by AUC of the MI estimates.
pub fn run_separation_experiment(
    n_surrogates: usize,
    n_independents: usize,
    params: &SimulationParams,
) -> Result<SeparationReport> {
    ensure!(
        n_surrogates >= MIN_SUSPECTS && n_independents >= MIN_SUSPECTS,
        Error::Param(format!(
            "need at least {MIN_SUSPECTS} suspects of each kind, got {n_surrogates} and {n_independents}"
        ))
    );
    let dep = Deployment::new(params)?;
    let holdout = sample_inputs(
        HOLDOUT_SIZE,
        params.d_in,
        params.seed,
        Domain::HoldoutInputs,
    );
    let total = n_surrogates + n_independents;
    let suspects = params.exec.try_map(total, |i| -> Result<SuspectResult> {
        let (kind, model, label) = if i < n_surrogates {
            (
                SuspectKind::Surrogate,
                dep.surrogate(i)?,
                format!("surrogate-{i:03}"),
            )
        } else {
            let j = i - n_surrogates;
            (
                SuspectKind::Independent,
                dep.independent(j)?,
                format!("independent-{j:03}"),
            )
        };
        Ok(SuspectResult {
            utility_error: relative_output_error(&model, &dep.teacher, &holdout)?,
            certificate: dep.verify_model(&model, &label)?,
            label,
            kind,
        })
    })?;
    let cert = params.certification()?;
    let report = SeparationReport {
        auc: 0.0,
        tau: suspects[0].certificate.tau,
        beta: cert.beta,
        suspects,
    };
    Ok(SeparationReport {
        auc: auc(
            &report.scores(SuspectKind::Surrogate),
            &report.scores(SuspectKind::Independent),
        )?,
        ..report
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingRow {
    pub m: usize,
    pub median_weight_error: f64,
    pub median_mi: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Surrogate quality at a fixed query budget for each repeat factor,
/// as medians over `seeds` independent extractions.
pub fn query_averaging_sweep(
    params: &SimulationParams,
    repeat_factors: &[usize],
    q_budget: usize,
    seeds: usize,
) -> Result<Vec<AveragingRow>> {
    ensure!(seeds >= 1, Error::Param("need at least one seed".into()));
    let dep = Deployment::new(params)?;
    repeat_factors
        .iter()
        .map(|&m| {
            let runs = params.exec.try_map(seeds, |s| -> Result<(f64, f64)> {
                let seed = rng::derive_seed(params.seed, Domain::QueryInputs, s as u64);
                let sur = extract_surrogate(&dep.teacher, &dep.defense, q_budget, m, seed)?;
                Ok((relative_weight_error(&sur, &dep.teacher)?, dep.mi(&sur)?))
            })?;
            Ok(AveragingRow {
                m,
                median_weight_error: median(runs.iter().map(|r| r.0).collect()),
                median_mi: median(runs.iter().map(|r| r.1).collect()),
            })
        })
        .collect()
}
