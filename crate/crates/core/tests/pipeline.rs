use credit_core::certification::{verify, CertificationParams, Decision};
use credit_core::embedding::{clip_embeddings, EmbeddingMatrix};
use credit_core::error::Error;
use credit_core::exec::Exec;
use credit_core::ksg::KsgConfig;
use credit_core::mechanism::{apply_mechanism, DefenseParams};
use credit_core::oracles::{monte_carlo_error_rates, GeneratorParams, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, d: usize, seed: u64, scale: f64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * d)
        .map(|_| {
            scale * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }
        })
        .collect();
    EmbeddingMatrix::new(n, d, values, "g").unwrap()
}

struct Setup {
    defended: EmbeddingMatrix,
    params: CertificationParams,
}

fn setup() -> Setup {
    let (n, d) = (1000, 8);
    let clean = clip_embeddings(&gaussian(n, d, 1, 1.0), 1.0).unwrap();
    let defense = DefenseParams::for_clip_radius(1.0, 1.0, d, 2).unwrap();
    let defended = apply_mechanism(&clean, &defense).unwrap();
    let params = CertificationParams {
        d,
        beta: defense.beta(1).unwrap(),
        ..CertificationParams::with_beta(0.0)
    };
    Setup { defended, params }
}

#[test]
fn near_copy_is_flagged() {
    let s = setup();
    let noise = gaussian(1000, 8, 3, 0.01);
    let values = s
        .defended
        .values()
        .iter()
        .zip(noise.values())
        .map(|(a, b)| a + b)
        .collect();
    let suspect = EmbeddingMatrix::new(1000, 8, values, "copy").unwrap();
    let cert = verify(&suspect, &s.defended, &s.params, &KsgConfig::default()).unwrap();
    assert_eq!(cert.decision, Decision::Surrogate);
    assert!(cert.mi_estimate > 2.0 * cert.tau);
    assert!(cert.is_consistent());
}

#[test]
fn fresh_gaussian_is_independent() {
    let s = setup();
    let suspect = gaussian(1000, 8, 4, 1.0);
    let cert = verify(&suspect, &s.defended, &s.params, &KsgConfig::default()).unwrap();
    assert_eq!(cert.decision, Decision::Independent);
    assert!(cert.mi_estimate.abs() < 0.1);
}

#[test]
fn size_mismatch_is_param_error() {
    let s = setup();
    let suspect = gaussian(999, 8, 5, 1.0);
    assert!(matches!(
        verify(&suspect, &s.defended, &s.params, &KsgConfig::default()),
        Err(Error::Param(_))
    ));
}

#[test]
fn monte_carlo_independent_scenario_passes() {
    let cert = CertificationParams::with_beta(0.0);
    let out = monte_carlo_error_rates(
        Scenario::Independent,
        100,
        &GeneratorParams::default(),
        &cert,
        Exec::default(),
    )
    .unwrap();
    assert!(out.pass);
    assert!(out.mean_mi < out.tau);
    assert!(!out.vacuous);
    let text = out.to_record().to_text();
    assert!(text.contains("scenario = \"independent\""));
}

#[test]
fn monte_carlo_is_order_deterministic() {
    let cert = CertificationParams::with_beta(0.0);
    let gen = GeneratorParams {
        d: 2,
        ..GeneratorParams::default()
    };
    let small = CertificationParams {
        v_size: 200,
        ..cert
    };
    let seq =
        monte_carlo_error_rates(Scenario::Surrogate, 100, &gen, &small, Exec::Sequential).unwrap();
    let par =
        monte_carlo_error_rates(Scenario::Surrogate, 100, &gen, &small, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
}
