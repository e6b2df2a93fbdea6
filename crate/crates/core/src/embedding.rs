//! Embedding matrices and their on-disk interchange formats.
//!
//! Two formats are supported:
//!
//! * **CREM** binary: a 24-byte little-endian header followed by the
//!   row-major `f64` payload.
//!
//!   | bytes  | field                        |
//!   |--------|------------------------------|
//!   | 0..4   | magic `b"CREM"`              |
//!   | 4..6   | version, `u16` (= 1)         |
//!   | 6..8   | dtype code, `u16` (2 = f64)  |
//!   | 8..16  | rows `n`, `u64`              |
//!   | 16..24 | columns `d`, `u64`           |
//!   | 24..   | `n * d` values, `f64` LE     |
//!
//! * CSV: a `dim_0,...,dim_{d-1}` header line and one row per line. Only `.`
//!   is accepted as decimal separator.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};

pub const CREM_MAGIC: &[u8; 4] = b"CREM";
pub const CREM_VERSION: u16 = 1;
pub const CREM_DTYPE_F64: u16 = 2;
pub const CREM_HEADER_LEN: usize = 24;

/// Relative slack allowed when checking rows against a declared clip radius.
const CLIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
    /// On load, sniff the magic bytes. On save, pick CSV for a `.csv`
    /// extension and binary otherwise.
    Auto,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "crem" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            "auto" => Ok(Format::Auto),
            other => Err(Error::Param(format!("unknown embedding format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Binary => "binary",
            Format::Csv => "csv",
            Format::Auto => "auto",
        })
    }
}

/// An `n x d` matrix of per-sample embeddings, stored row-major.
///
/// Immutable once constructed; every constructor enforces that entries are
/// finite and, if a clip radius is attached, that each row lies inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    label: String,
    clip_radius: Option<f64>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        Self::build(n, d, values, label.into(), None)
    }

    /// Build from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        ensure!(
            !rows.is_empty(),
            Error::Param("matrix needs at least one row".into())
        );
        let d = rows[0].len();
        ensure!(
            rows.iter().all(|r| r.len() == d),
            Error::Param("rows have differing lengths".into())
        );
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), d, values, label)
    }

    fn build(
        n: usize,
        d: usize,
        values: Vec<f64>,
        label: String,
        clip_radius: Option<f64>,
    ) -> Result<Self> {
        ensure!(n >= 1, Error::Param("matrix needs n >= 1 rows".into()));
        ensure!(d >= 1, Error::Param("matrix needs d >= 1 columns".into()));
        ensure!(
            n.checked_mul(d) == Some(values.len()),
            Error::Param(format!(
                "{} values cannot fill a {n}x{d} matrix",
                values.len()
            ))
        );
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite entry {} at row {}, column {}",
                values[pos],
                pos / d,
                pos % d
            )));
        }
        if let Some(r) = clip_radius {
            ensure!(
                r.is_finite() && r >= 0.0,
                Error::Param(format!(
                    "clip radius must be finite and nonnegative, got {r}"
                ))
            );
            let limit = r * (1.0 + CLIP_TOLERANCE);
            for (i, row) in values.chunks_exact(d).enumerate() {
                let norm = l2_norm(row);
                ensure!(
                    norm <= limit,
                    Error::Data(format!("row {i} has norm {norm} outside clip radius {r}"))
                );
            }
        }
        Ok(Self {
            n,
            d,
            values,
            label,
            clip_radius,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn clip_radius(&self) -> Option<f64> {
        self.clip_radius
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.d)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Replace the values while keeping shape and label; used by transforms
    /// whose output is no longer bounded (the clip radius is dropped).
    pub(crate) fn with_values_unclipped(&self, values: Vec<f64>) -> Result<Self> {
        Self::build(self.n, self.d, values, self.label.clone(), None)
    }

    /// Attach a clip radius after verifying every row lies inside it.
    pub fn with_clip_radius(self, radius: f64) -> Result<Self> {
        Self::build(self.n, self.d, self.values, self.label, Some(radius))
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            ensure!(
                i < self.n,
                Error::Param(format!("row index {i} out of range"))
            );
            values.extend_from_slice(self.row(i));
        }
        Self::build(
            indices.len(),
            self.d,
            values,
            self.label.clone(),
            self.clip_radius,
        )
    }

    /// Serialize to the CREM binary layout.
    pub fn to_crem_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CREM_HEADER_LEN + self.values.len() * 8);
        out.extend_from_slice(CREM_MAGIC);
        out.extend_from_slice(&CREM_VERSION.to_le_bytes());
        out.extend_from_slice(&CREM_DTYPE_F64.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse a CREM byte buffer.
    pub fn from_crem_bytes(bytes: &[u8], label: impl Into<String>) -> Result<Self> {
        ensure!(
            bytes.len() >= CREM_HEADER_LEN,
            Error::Format(format!(
                "file is {} bytes, shorter than the {CREM_HEADER_LEN}-byte header",
                bytes.len()
            ))
        );
        ensure!(
            &bytes[0..4] == CREM_MAGIC,
            Error::Format(format!("bad magic {:?}", &bytes[0..4]))
        );
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        ensure!(
            version == CREM_VERSION,
            Error::Format(format!("unsupported version {version}"))
        );
        let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
        ensure!(
            dtype == CREM_DTYPE_F64,
            Error::Format(format!("unsupported dtype code {dtype}"))
        );
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
        let d = u64::from_le_bytes(bytes[16..24].try_into().expect("8-byte slice"));
        ensure!(
            n >= 1 && d >= 1,
            Error::Format(format!("header declares empty shape {n}x{d}"))
        );
        let expected = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Format(format!("header shape {n}x{d} overflows")))?;
        let payload = &bytes[CREM_HEADER_LEN..];
        ensure!(
            payload.len() as u64 == expected,
            Error::Truncation {
                expected,
                found: payload.len() as u64,
            }
        );
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::build(n as usize, d as usize, values, label.into(), None)
    }

    /// Render the CSV form. Values use the shortest representation that
    /// parses back to the identical `f64`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.d).map(|j| format!("dim_{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.rows() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?
            .clone();
        let d = header.len();
        ensure!(
            d >= 1 && !(d == 1 && header[0].is_empty()),
            Error::Format("empty CSV header".into())
        );
        for (j, name) in header.iter().enumerate() {
            ensure!(
                name == format!("dim_{j}"),
                Error::Format(format!(
                    "header column {j} is {name:?}, expected \"dim_{j}\""
                ))
            );
        }
        let mut values = Vec::new();
        let mut n = 0usize;
        for record in reader.records() {
            let record = record.map_err(|e| Error::Format(format!("bad CSV record: {e}")))?;
            for (j, field) in record.iter().enumerate() {
                values.push(parse_csv_value(field, n, j)?);
            }
            n += 1;
        }
        ensure!(n >= 1, Error::Format("CSV has a header but no rows".into()));
        Self::build(n, d, values, label.into(), None)
    }
}

fn parse_csv_value(field: &str, row: usize, col: usize) -> Result<f64> {
    // `f64::from_str` is locale independent; anything it rejects, including
    // comma decimal separators or grouping characters, is a format error.
    let v: f64 = field.parse().map_err(|_| {
        Error::Format(format!(
            "row {row}, column {col}: {field:?} is not a number"
        ))
    })?;
    ensure!(
        v.is_finite(),
        Error::Data(format!(
            "row {row}, column {col}: non-finite value {field:?}"
        ))
    );
    Ok(v)
}

pub fn l2_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn load_embeddings(path: impl AsRef<Path>, format: Format) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let format = match format {
        Format::Auto if bytes.starts_with(CREM_MAGIC) => Format::Binary,
        Format::Auto => Format::Csv,
        f => f,
    };
    match format {
        Format::Binary => EmbeddingMatrix::from_crem_bytes(&bytes, label),
        _ => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::Format("CSV file is not valid UTF-8".into()))?;
            EmbeddingMatrix::from_csv_str(text, label)
        }
    }
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let format = match format {
        Format::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        },
        f => f,
    };
    let bytes = match format {
        Format::Csv => m.to_csv_string().into_bytes(),
        _ => m.to_crem_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Project each row onto the ℓ2 ball of the given radius.
///
/// The output carries `clip_radius = radius`, which induces a global ℓ2
/// sensitivity of `2 * radius` for the Gaussian mechanism. Clipping is
/// exactly idempotent.
pub fn clip_embeddings(m: &EmbeddingMatrix, radius: f64) -> Result<EmbeddingMatrix> {
    ensure!(
        radius.is_finite() && radius > 0.0,
        Error::Param(format!(
            "clip radius must be positive and finite, got {radius}"
        ))
    );
    let mut values = m.values.clone();
    for row in values.chunks_exact_mut(m.d) {
        clip_row(row, radius);
    }
    EmbeddingMatrix::build(m.n, m.d, values, m.label.clone(), Some(radius))
}

fn clip_row(row: &mut [f64], radius: f64) {
    let mut norm = l2_norm(row);
    if norm <= radius {
        return;
    }
    let scale = radius / norm;
    row.iter_mut().for_each(|v| *v *= scale);
    // Rounding can leave the norm an ulp above the radius; shrink until the
    // recomputed norm is inside so a second clip is a no-op.
    norm = l2_norm(row);
    while norm > radius {
        row.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
        norm = l2_norm(row);
    }
}
