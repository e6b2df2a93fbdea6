use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use credit_core::certification::{Certificate, Decision};
use credit_core::embedding::{load_embeddings, save_embeddings, EmbeddingMatrix, Format};
use credit_core::record::Record;
use credit_core::rng::{stream, Domain};
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

const N: usize = 2000;
const D: usize = 2;

fn credit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credit"))
        .args(args)
        .current_dir(dir)
        .env_remove("CREDIT_THREADS")
        .env_remove("CREDIT_SELFCHECK_CORRUPT_DIGAMMA")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gaussian_file(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let values = (0..N * D)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut stream(seed, Domain::Synthetic, i as u64));
            z
        })
        .collect();
    let m = EmbeddingMatrix::new(N, D, values, name).unwrap();
    let path = dir.join(name);
    save_embeddings(&m, &path, Format::Auto).unwrap();
    path
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        gaussian_file(dir.path(), "clean.csv", 1);
        gaussian_file(dir.path(), "other.crem", 2);
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        credit(args, self.path())
    }

    fn defend(&self, output: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "defend",
            "--input",
            "clean.csv",
            "--output",
            output,
            "--sigma",
            "1",
            "--clip-radius",
            "1",
            "--seed",
            "7",
        ];
        args.extend_from_slice(extra);
        self.run(&args)
    }
}

#[test]
fn defend_writes_loadable_release_and_sidecar() {
    let f = Fixture::new();
    let out = f.defend("rel.crem", &[]);
    assert!(out.status.success(), "{out:?}");
    let rel = load_embeddings(f.path().join("rel.crem"), Format::Binary).unwrap();
    assert_eq!((rel.n(), rel.d()), (N, D));
    let sidecar = Record::read(f.path().join("rel.crem.defense.toml")).unwrap();
    assert_eq!(sidecar.real("sigma").unwrap(), 1.0);
    assert_eq!(sidecar.real("delta_sensitivity").unwrap(), 2.0);
    assert_eq!(sidecar.uint("seed").unwrap(), 7);
    assert_eq!(sidecar.real("beta").unwrap(), 2.0);
}

#[test]
fn defend_reruns_are_byte_identical() {
    let f = Fixture::new();
    assert!(f.defend("a.crem", &["--threads", "1"]).status.success());
    assert!(f.defend("b.crem", &["--threads", "2"]).status.success());
    assert!(f.defend("c.crem", &[]).status.success());
    let a = fs::read(f.path().join("a.crem")).unwrap();
    assert_eq!(a, fs::read(f.path().join("b.crem")).unwrap());
    assert_eq!(a, fs::read(f.path().join("c.crem")).unwrap());
    let reseeded = f.run(&[
        "defend",
        "--input",
        "clean.csv",
        "--output",
        "s.crem",
        "--sigma",
        "1",
        "--clip-radius",
        "1",
        "--seed",
        "8",
    ]);
    assert!(reseeded.status.success());
    assert_ne!(a, fs::read(f.path().join("s.crem")).unwrap());
}

#[test]
fn defend_csv_output_round_trips() {
    let f = Fixture::new();
    assert!(f.defend("rel.out", &["--format", "csv"]).status.success());
    let text = fs::read_to_string(f.path().join("rel.out")).unwrap();
    assert!(text.starts_with("dim_0,dim_1"));
    let rel = load_embeddings(f.path().join("rel.out"), Format::Csv).unwrap();
    assert_eq!(rel.n(), N);
}

#[test]
fn defend_without_clip_radius_is_sensitivity_error() {
    let f = Fixture::new();
    let out = f.run(&[
        "defend",
        "--input",
        "clean.csv",
        "--output",
        "x.crem",
        "--sigma",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(8));
    assert!(!f.path().join("x.crem").exists());
}

#[test]
fn defend_with_dp_budget_derives_sigma() {
    let f = Fixture::new();
    let out = f.run(&[
        "defend",
        "--input",
        "clean.csv",
        "--output",
        "dp.crem",
        "--clip-radius",
        "0.5",
        "--epsilon",
        "0.5",
        "--delta-dp",
        "1e-5",
    ]);
    assert!(out.status.success(), "{out:?}");
    let sigma = Record::read(f.path().join("dp.crem.defense.toml"))
        .unwrap()
        .real("sigma")
        .unwrap();
    let expected = (2.0 * (1.25f64 / 1e-5).ln()).sqrt() * 1.0 / 0.5;
    assert!((sigma - expected).abs() < 1e-12);
}

fn verify(f: &Fixture, suspect: &str, cert: &str) -> Output {
    f.run(&[
        "verify",
        "--suspect",
        suspect,
        "--defended",
        "rel.crem",
        "--defense",
        "rel.crem.defense.toml",
        "--output",
        cert,
        "--rho",
        "0.99",
        "--eta",
        "0.9",
        "--query-budget",
        "1",
    ])
}

#[test]
fn verify_reports_decision_without_encoding_it_in_exit_code() {
    let f = Fixture::new();
    assert!(f.defend("rel.crem", &[]).status.success());

    let out = verify(&f, "clean.csv", "sur.toml");
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(
        stdout(&out).contains("decision=surrogate"),
        "{}",
        stdout(&out)
    );
    let cert =
        Certificate::from_text(&fs::read_to_string(f.path().join("sur.toml")).unwrap()).unwrap();
    assert_eq!(cert.decision, Decision::Surrogate);
    assert_eq!(cert.params.v_size, N);
    assert_eq!(cert.params.d, D);
    assert_eq!(cert.defense.unwrap().sigma, 1.0);
    assert_eq!(cert.timestamp, 1_700_000_000);

    let out = verify(&f, "other.crem", "ind.toml");
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(
        stdout(&out).contains("decision=independent"),
        "{}",
        stdout(&out)
    );

    let again = verify(&f, "other.crem", "ind2.toml");
    assert!(again.status.success());
    assert_eq!(
        fs::read(f.path().join("ind.toml")).unwrap(),
        fs::read(f.path().join("ind2.toml")).unwrap()
    );
}

#[test]
fn verify_without_beta_source_is_config_error() {
    let f = Fixture::new();
    let out = f.run(&[
        "verify",
        "--suspect",
        "clean.csv",
        "--defended",
        "other.crem",
        "--output",
        "c.toml",
    ]);
    assert_eq!(out.status.code(), Some(15));
}

#[test]
fn estimate_mi_prints_and_records() {
    let f = Fixture::new();
    let out = f.run(&[
        "estimate-mi",
        "--suspect",
        "clean.csv",
        "--defended",
        "clean.csv",
        "--output",
        "mi.toml",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).starts_with("mi="));
    let r = Record::read(f.path().join("mi.toml")).unwrap();
    assert!(r.real("mi_estimate").unwrap() > 3.0);
    assert_eq!(r.uint("k").unwrap(), 3);
    assert_eq!(r.uint("n").unwrap(), N as u64);
}

#[test]
fn calibrate_sigma_writes_tradeoff_table() {
    let f = Fixture::new();
    let out = f.run(&[
        "calibrate-sigma",
        "--input",
        "clean.csv",
        "--clip-radius",
        "1",
        "--output",
        "sweep.csv",
        "--sigma-min",
        "0.5",
        "--sigma-max",
        "4",
        "--sigma-count",
        "12",
        "--rho",
        "0.9",
        "--eta",
        "0.9",
        "--query-budget",
        "10",
    ]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).starts_with("sigma_star="));
    let table = fs::read_to_string(f.path().join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("sigma,beta,tau"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn simulate_writes_report_table_and_certificates() {
    let f = Fixture::new();
    let sim = |dir: &str| {
        f.run(&[
            "simulate",
            "--output",
            dir,
            "--v-size",
            "1000",
            "--seed",
            "3",
            "--n-surrogates",
            "10",
            "--n-independents",
            "12",
        ])
    };
    let out = sim("sim");
    assert!(out.status.success(), "{out:?}");
    let report = Record::read(f.path().join("sim/report.toml")).unwrap();
    assert!(report.real("auc").unwrap() >= 0.0);
    assert_eq!(report.uint("v_size").unwrap(), 1000);
    assert_eq!(report.uint("n_independents").unwrap(), 12);
    let csv = fs::read_to_string(f.path().join("sim/suspects.csv")).unwrap();
    assert_eq!(csv.lines().count(), 23);
    let certs = fs::read_dir(f.path().join("sim/certificates"))
        .unwrap()
        .count();
    assert_eq!(certs, 22);
    let one = fs::read_to_string(f.path().join("sim/certificates/surrogate-000.toml")).unwrap();
    assert!(Certificate::from_text(&one).is_ok());

    assert!(sim("again").status.success());
    for name in [
        "report.toml",
        "suspects.csv",
        "certificates/independent-011.toml",
    ] {
        assert_eq!(
            fs::read(f.path().join("sim").join(name)).unwrap(),
            fs::read(f.path().join("again").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn selfcheck_passes_clean_and_fails_corrupted() {
    let dir = tempfile::tempdir().unwrap();
    let out = credit(&["selfcheck", "--output", "check.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(Record::read(dir.path().join("check.toml"))
        .unwrap()
        .boolean("all_pass")
        .unwrap());

    let flagged = credit(&["selfcheck", "--corrupt-digamma"], dir.path());
    assert_eq!(flagged.status.code(), Some(14));
    assert!(stdout(&flagged).contains("FAIL digamma"));

    let via_env = Command::new(env!("CARGO_BIN_EXE_credit"))
        .arg("selfcheck")
        .env("CREDIT_SELFCHECK_CORRUPT_DIGAMMA", "1")
        .output()
        .unwrap();
    assert_eq!(via_env.status.code(), Some(14));
}

#[test]
fn config_file_supplies_keys_and_flags_override() {
    let f = Fixture::new();
    fs::write(
        f.path().join("run.toml"),
        "input = \"clean.csv\"\noutput = \"cfg.crem\"\nsigma = 0.5\nclip_radius = 1.0\nseed = 7\n",
    )
    .unwrap();
    let out = f.run(&["--config", "run.toml", "defend", "--sigma", "1"]);
    assert!(out.status.success(), "{out:?}");
    let sidecar = Record::read(f.path().join("cfg.crem.defense.toml")).unwrap();
    assert_eq!(sidecar.real("sigma").unwrap(), 1.0);
    assert_eq!(sidecar.uint("seed").unwrap(), 7);
    // Same settings as the flag-only run, so the same bytes.
    assert!(f.defend("flags.crem", &[]).status.success());
    assert_eq!(
        fs::read(f.path().join("cfg.crem")).unwrap(),
        fs::read(f.path().join("flags.crem")).unwrap()
    );
}

#[test]
fn error_classes_map_to_documented_exit_codes() {
    let f = Fixture::new();
    let good = fs::read(f.path().join("other.crem")).unwrap();
    fs::write(f.path().join("short.crem"), &good[..good.len() - 8]).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"CREX");
    fs::write(f.path().join("magic.crem"), &bad_magic).unwrap();
    fs::write(f.path().join("bad.toml"), "sigmaa = 1.0\n").unwrap();

    let mi = |a: &str| f.run(&["estimate-mi", "--suspect", a, "--defended", "other.crem"]);
    assert_eq!(mi("absent.crem").status.code(), Some(3));
    assert_eq!(mi("short.crem").status.code(), Some(6));
    assert_eq!(
        f.run(&[
            "estimate-mi",
            "--suspect",
            "magic.crem",
            "--defended",
            "other.crem",
            "--format",
            "binary"
        ])
        .status
        .code(),
        Some(4)
    );
    assert_eq!(f.run(&["selfcheck", "--rho", "1.5"]).status.code(), Some(7));
    assert_eq!(
        f.run(&["--config", "bad.toml", "selfcheck"]).status.code(),
        Some(15)
    );
    assert_eq!(
        f.run(&["--config", "missing.toml", "selfcheck"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(f.run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        f.run(&["defend", "--output", "x.crem"]).status.code(),
        Some(15)
    );
}
