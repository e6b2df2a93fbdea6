use std::fs;

use credit_core::certification::{certify, Certificate, CertificationParams};
use credit_core::embedding::{
    load_embeddings, save_embeddings, EmbeddingMatrix, Format, CREM_HEADER_LEN,
};
use credit_core::error::Error;
use credit_core::mechanism::DefenseParams;
use credit_core::tradeoff::{select_sigma, TradeoffConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    EmbeddingMatrix::new(n, d, values, "g").unwrap()
}

fn same_bits(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> bool {
    a.n() == b.n()
        && a.d() == b.d()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn large_binary_file_size_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.crem");
    let m = gaussian(1000, 1024, 1);
    save_embeddings(&m, &path, Format::Binary).unwrap();
    let len = fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(len, CREM_HEADER_LEN + 1000 * 1024 * 8);
    assert!(same_bits(
        &load_embeddings(&path, Format::Binary).unwrap(),
        &m
    ));
}

#[test]
fn csv_round_trip_and_auto_detection() {
    let dir = tempfile::tempdir().unwrap();
    let m = gaussian(40, 7, 2);
    let csv = dir.path().join("m.csv");
    let bin = dir.path().join("m.bin");
    save_embeddings(&m, &csv, Format::Auto).unwrap();
    save_embeddings(&m, &bin, Format::Auto).unwrap();
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .starts_with("dim_0,dim_1,"));
    assert_eq!(&fs::read(&bin).unwrap()[..4], b"CREM");
    let from_csv = load_embeddings(&csv, Format::Auto).unwrap();
    for (a, b) in from_csv.values().iter().zip(m.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(same_bits(&load_embeddings(&bin, Format::Auto).unwrap(), &m));
    assert_eq!(
        load_embeddings(&bin, Format::Auto).unwrap().label(),
        bin.display().to_string()
    );
}

#[test]
fn load_errors_by_class() {
    let dir = tempfile::tempdir().unwrap();
    let good = gaussian(3, 2, 3).to_crem_bytes();

    let nan = {
        let mut b = good.clone();
        b[CREM_HEADER_LEN..CREM_HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        dir.path().join("nan.crem").tap_write(&b)
    };
    assert!(matches!(
        load_embeddings(&nan, Format::Binary),
        Err(Error::Data(_))
    ));

    let short = dir
        .path()
        .join("short.crem")
        .tap_write(&good[..good.len() - 8]);
    assert!(matches!(
        load_embeddings(&short, Format::Binary),
        Err(Error::Truncation {
            expected: 48,
            found: 40
        })
    ));

    let magic = {
        let mut b = good.clone();
        b[0] = b'X';
        dir.path().join("magic.crem").tap_write(&b)
    };
    assert!(matches!(
        load_embeddings(&magic, Format::Binary),
        Err(Error::Format(_))
    ));

    let missing = dir.path().join("absent.crem");
    assert!(matches!(
        load_embeddings(&missing, Format::Auto),
        Err(Error::Io { .. })
    ));

    let csv_nan = dir
        .path()
        .join("nan.csv")
        .tap_write(b"dim_0,dim_1\n0.5,NaN\n");
    assert!(matches!(
        load_embeddings(&csv_nan, Format::Csv),
        Err(Error::Data(_))
    ));
}

#[test]
fn unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("no/such/dir/m.crem");
    assert!(matches!(
        save_embeddings(&gaussian(2, 2, 4), &path, Format::Binary),
        Err(Error::Io { .. })
    ));
}

#[test]
fn certificate_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = CertificationParams::with_beta(2.0);
    let cert = certify(1.5, &params, "suspect.crem", "defended.crem")
        .unwrap()
        .with_defense(DefenseParams::new(0.5, 1.0, 1024, 7).unwrap());
    let path = dir.path().join("cert.toml");
    cert.to_record().write(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let back = Certificate::from_text(&text).unwrap();
    assert_eq!(back, cert);
    assert_eq!(back.to_text(), text);
}

#[test]
fn tradeoff_table_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TradeoffConfig::new(vec![1.0; 16]);
    let defense = DefenseParams::new(1.0, 2.0, 1024, 0).unwrap();
    let sel = select_sigma(&cfg, &defense).unwrap();
    let path = dir.path().join("sweep.csv");
    sel.write_csv(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), cfg.sigma_grid.len() + 1);
}

trait TapWrite {
    fn tap_write(self, bytes: &[u8]) -> Self;
}

impl TapWrite for std::path::PathBuf {
    fn tap_write(self, bytes: &[u8]) -> Self {
        fs::write(&self, bytes).unwrap();
        self
    }
}
