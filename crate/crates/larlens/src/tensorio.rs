//! Tensor and trace I/O.
//!
//! Two disk formats, both chosen for zero-dependency interop:
//!
//! - **NPY v1.0** for matrices: only 2-D little-endian `f64` (`'<f8'`)
//!   payloads are accepted. Fortran-order files are transposed into row-major
//!   on load. Any NaN/Inf element, malformed header, unsupported dtype, or
//!   size mismatch is a hard, typed error — a tensor that loads is finite
//!   and well-shaped by construction.
//! - **trace CSV** for per-step metric series: one row per logged step, a
//!   header naming a subset of the [`TraceRow`] fields (`step` mandatory,
//!   strictly increasing), empty cells for absent values. Floats are written
//!   in Rust's shortest round-trip form, so a write/read cycle reproduces
//!   every present value bit-for-bit (stronger than the 17-significant-digit
//!   requirement).

use crate::matrix::{DenseMatrix, MatrixError};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

// ───────────────────────────── errors ──────────────────────────────

#[derive(Debug)]
pub enum TensorIoError {
    Io(io::Error),
    /// File does not begin with `\x93NUMPY`.
    BadMagic,
    /// Only NPY format version 1.0 is supported.
    UnsupportedVersion { major: u8, minor: u8 },
    /// Header dict could not be parsed; `detail` names the offending part.
    HeaderSyntax { detail: String },
    /// Only `'<f8'` payloads are supported.
    UnsupportedDtype { descr: String },
    /// Only 2-D tensors are supported.
    UnsupportedDimensionality { ndim: usize },
    /// Shapes with a zero extent cannot back a matrix.
    ZeroDimension { rows: usize, cols: usize },
    /// Payload byte count disagrees with the header shape.
    ElementCountMismatch { expected_bytes: usize, found_bytes: usize },
    /// Loaded tensors must be entirely finite.
    NonFiniteElement { row: usize, col: usize },
    /// Trace header lacks the mandatory `step` column.
    MissingStepColumn,
    /// Trace header names a column that is not a known field.
    UnknownColumn { name: String },
    /// Trace header repeats a column.
    DuplicateColumn { name: String },
    /// `step` must be strictly increasing (1-based data line number).
    NonMonotoneStep { line: usize, step: u64 },
    /// A cell failed to parse as its column's type.
    UnparseableCell { line: usize, column: String, content: String },
    /// A parsed value violates its field's range (losses nonnegative,
    /// accuracies in [0, 1], no NaN anywhere, infinities only in `lar`).
    FieldOutOfRange { line: usize, column: String, value: f64 },
    /// A data row has the wrong number of cells.
    RowLength { line: usize, expected: usize, found: usize },
}

impl fmt::Display for TensorIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TensorIoError::*;
        match self {
            Io(e) => write!(f, "i/o error: {e}"),
            BadMagic => write!(f, "not an NPY file (bad magic)"),
            UnsupportedVersion { major, minor } => {
                write!(f, "unsupported NPY version {major}.{minor} (only 1.0)")
            }
            HeaderSyntax { detail } => write!(f, "malformed NPY header: {detail}"),
            UnsupportedDtype { descr } => {
                write!(f, "unsupported dtype {descr:?} (only '<f8')")
            }
            UnsupportedDimensionality { ndim } => {
                write!(f, "unsupported dimensionality {ndim} (only 2-D)")
            }
            ZeroDimension { rows, cols } => {
                write!(f, "shape ({rows}, {cols}) has a zero extent")
            }
            ElementCountMismatch { expected_bytes, found_bytes } => write!(
                f,
                "payload holds {found_bytes} bytes but the shape needs {expected_bytes}"
            ),
            NonFiniteElement { row, col } => {
                write!(f, "non-finite element at ({row}, {col})")
            }
            MissingStepColumn => write!(f, "trace header is missing the 'step' column"),
            UnknownColumn { name } => write!(f, "unknown trace column {name:?}"),
            DuplicateColumn { name } => write!(f, "duplicate trace column {name:?}"),
            NonMonotoneStep { line, step } => {
                write!(f, "line {line}: step {step} is not strictly increasing")
            }
            UnparseableCell { line, column, content } => {
                write!(f, "line {line}, column {column}: cannot parse {content:?}")
            }
            FieldOutOfRange { line, column, value } => {
                write!(f, "line {line}, column {column}: value {value} out of range")
            }
            RowLength { line, expected, found } => {
                write!(f, "line {line}: expected {expected} cells, found {found}")
            }
        }
    }
}

impl std::error::Error for TensorIoError {}

impl From<io::Error> for TensorIoError {
    fn from(e: io::Error) -> Self {
        TensorIoError::Io(e)
    }
}

impl From<MatrixError> for TensorIoError {
    fn from(e: MatrixError) -> Self {
        match e {
            MatrixError::EmptyDimensions { rows, cols } => {
                TensorIoError::ZeroDimension { rows, cols }
            }
            other => TensorIoError::HeaderSyntax { detail: other.to_string() },
        }
    }
}

// ───────────────────────────── NPY format ──────────────────────────

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Serializes a matrix as NPY v1.0, `'<f8'`, C order. Bit-exact round trip.
pub fn write_npy<W: Write>(mut out: W, m: &DenseMatrix) -> Result<(), TensorIoError> {
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // Pad with spaces so magic+version+len+header is a multiple of 64,
    // newline-terminated (mirrors what numpy itself writes).
    let unpadded = 6 + 2 + 2 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;
    out.write_all(NPY_MAGIC)?;
    out.write_all(&[1, 0])?;
    out.write_all(&(header_len as u16).to_le_bytes())?;
    out.write_all(dict.as_bytes())?;
    out.write_all(&vec![b' '; padding])?;
    out.write_all(b"\n")?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_npy<P: AsRef<Path>>(path: P, m: &DenseMatrix) -> Result<(), TensorIoError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write_npy(&mut f, m)?;
    f.flush()?;
    Ok(())
}

/// Extracts the quoted string after `'key':` in the header dict.
fn dict_str(dict: &str, key: &str) -> Result<String, TensorIoError> {
    let rest = dict_value(dict, key)?;
    let mut chars = rest.chars();
    match chars.next() {
        Some('\'') => {}
        _ => {
            return Err(TensorIoError::HeaderSyntax {
                detail: format!("value of {key:?} is not a quoted string"),
            })
        }
    }
    let s: String = chars.take_while(|&c| c != '\'').collect();
    Ok(s)
}

/// Returns the text of the header dict following `'key':`, trimmed.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str, TensorIoError> {
    let pat = format!("'{key}'");
    let at = dict.find(&pat).ok_or_else(|| TensorIoError::HeaderSyntax {
        detail: format!("missing key {key:?}"),
    })?;
    let after = &dict[at + pat.len()..];
    let colon = after.find(':').ok_or_else(|| TensorIoError::HeaderSyntax {
        detail: format!("missing ':' after {key:?}"),
    })?;
    Ok(after[colon + 1..].trim_start())
}

fn dict_bool(dict: &str, key: &str) -> Result<bool, TensorIoError> {
    let rest = dict_value(dict, key)?;
    if rest.starts_with("True") {
        Ok(true)
    } else if rest.starts_with("False") {
        Ok(false)
    } else {
        Err(TensorIoError::HeaderSyntax { detail: format!("value of {key:?} is not a boolean") })
    }
}

fn dict_shape(dict: &str, key: &str) -> Result<Vec<usize>, TensorIoError> {
    let rest = dict_value(dict, key)?;
    if !rest.starts_with('(') {
        return Err(TensorIoError::HeaderSyntax {
            detail: format!("value of {key:?} is not a tuple"),
        });
    }
    let close = rest.find(')').ok_or_else(|| TensorIoError::HeaderSyntax {
        detail: "unterminated shape tuple".to_string(),
    })?;
    let inner = &rest[1..close];
    let mut dims = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue; // trailing comma, e.g. "(3,)"
        }
        let d: usize = part.parse().map_err(|_| TensorIoError::HeaderSyntax {
            detail: format!("bad shape component {part:?}"),
        })?;
        dims.push(d);
    }
    Ok(dims)
}

/// Parses an NPY v1.0 stream into a row-major matrix.
pub fn read_npy<R: Read>(mut input: R) -> Result<DenseMatrix, TensorIoError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic).map_err(|_| TensorIoError::BadMagic)?;
    if &magic != NPY_MAGIC {
        return Err(TensorIoError::BadMagic);
    }
    let mut version = [0u8; 2];
    input.read_exact(&mut version)?;
    if version != [1, 0] {
        return Err(TensorIoError::UnsupportedVersion { major: version[0], minor: version[1] });
    }
    let mut len_bytes = [0u8; 2];
    input.read_exact(&mut len_bytes)?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let dict = String::from_utf8(header)
        .map_err(|_| TensorIoError::HeaderSyntax { detail: "header is not UTF-8".into() })?;

    let descr = dict_str(&dict, "descr")?;
    if descr != "<f8" {
        return Err(TensorIoError::UnsupportedDtype { descr });
    }
    let fortran = dict_bool(&dict, "fortran_order")?;
    let dims = dict_shape(&dict, "shape")?;
    if dims.len() != 2 {
        return Err(TensorIoError::UnsupportedDimensionality { ndim: dims.len() });
    }
    let (rows, cols) = (dims[0], dims[1]);
    if rows == 0 || cols == 0 {
        return Err(TensorIoError::ZeroDimension { rows, cols });
    }

    let expected_bytes = rows * cols * 8;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != expected_bytes {
        return Err(TensorIoError::ElementCountMismatch {
            expected_bytes,
            found_bytes: payload.len(),
        });
    }

    let mut data = vec![0.0f64; rows * cols];
    for (k, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if fortran {
            // Disk order is column-major: element k sits at (k % rows, k / rows).
            let (i, j) = (k % rows, k / rows);
            data[i * cols + j] = v;
        } else {
            data[k] = v;
        }
    }
    for (k, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(TensorIoError::NonFiniteElement { row: k / cols, col: k % cols });
        }
    }
    Ok(DenseMatrix::from_vec(rows, cols, data)?)
}

pub fn load_npy<P: AsRef<Path>>(path: P) -> Result<DenseMatrix, TensorIoError> {
    let f = io::BufReader::new(fs::File::open(path)?);
    read_npy(f)
}

// ───────────────────────────── trace rows ──────────────────────────

/// One logged step of a training run. Only `step` is mandatory; everything
/// else is present exactly when the run logged it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub step: u64,
    pub epoch: Option<u64>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub lar: Option<f64>,
    pub p1: Option<f64>,
    pub q1: Option<f64>,
    pub sigma_p: Option<f64>,
    pub sigma_q: Option<f64>,
    pub corr_pq: Option<f64>,
    pub spearman_pq: Option<f64>,
    pub srank: Option<f64>,
    pub erank: Option<f64>,
    pub k95: Option<f64>,
    pub k_pred: Option<f64>,
}

impl TraceRow {
    pub fn new(step: u64) -> Self {
        TraceRow { step, ..Default::default() }
    }
}

/// Canonical column order. `step` and `epoch` are integers; the rest floats.
pub const TRACE_COLUMNS: [&str; 17] = [
    "step",
    "epoch",
    "train_loss",
    "val_loss",
    "train_acc",
    "val_acc",
    "lar",
    "p1",
    "q1",
    "sigma_p",
    "sigma_q",
    "corr_pq",
    "spearman_pq",
    "srank",
    "erank",
    "k95",
    "k_pred",
];

fn float_field(row: &TraceRow, name: &str) -> Option<f64> {
    match name {
        "train_loss" => row.train_loss,
        "val_loss" => row.val_loss,
        "train_acc" => row.train_acc,
        "val_acc" => row.val_acc,
        "lar" => row.lar,
        "p1" => row.p1,
        "q1" => row.q1,
        "sigma_p" => row.sigma_p,
        "sigma_q" => row.sigma_q,
        "corr_pq" => row.corr_pq,
        "spearman_pq" => row.spearman_pq,
        "srank" => row.srank,
        "erank" => row.erank,
        "k95" => row.k95,
        "k_pred" => row.k_pred,
        _ => None,
    }
}

fn float_field_mut<'a>(row: &'a mut TraceRow, name: &str) -> Option<&'a mut Option<f64>> {
    Some(match name {
        "train_loss" => &mut row.train_loss,
        "val_loss" => &mut row.val_loss,
        "train_acc" => &mut row.train_acc,
        "val_acc" => &mut row.val_acc,
        "lar" => &mut row.lar,
        "p1" => &mut row.p1,
        "q1" => &mut row.q1,
        "sigma_p" => &mut row.sigma_p,
        "sigma_q" => &mut row.sigma_q,
        "corr_pq" => &mut row.corr_pq,
        "spearman_pq" => &mut row.spearman_pq,
        "srank" => &mut row.srank,
        "erank" => &mut row.erank,
        "k95" => &mut row.k95,
        "k_pred" => &mut row.k_pred,
        _ => return None,
    })
}

/// Range rules enforced on read: NaN is rejected everywhere; infinities are
/// legal only in `lar` (where `-inf` is the null-space sentinel); losses are
/// nonnegative; accuracies live in [0, 1].
fn check_field_range(
    name: &str,
    value: f64,
    line: usize,
) -> Result<(), TensorIoError> {
    let bad = || TensorIoError::FieldOutOfRange { line, column: name.to_string(), value };
    if value.is_nan() {
        return Err(bad());
    }
    match name {
        "lar" => {
            if value == f64::INFINITY {
                return Err(bad());
            }
        }
        "train_loss" | "val_loss" => {
            if !value.is_finite() || value < 0.0 {
                return Err(bad());
            }
        }
        "train_acc" | "val_acc" => {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(bad());
            }
        }
        _ => {
            if !value.is_finite() {
                return Err(bad());
            }
        }
    }
    Ok(())
}

/// Serializes rows to CSV. Columns: `step`, then every other canonical
/// column that is present in at least one row; absent cells stay empty.
pub fn write_trace<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<(), TensorIoError> {
    let mut columns: Vec<&str> = vec!["step"];
    for name in TRACE_COLUMNS.iter().skip(1) {
        let present = match *name {
            "epoch" => rows.iter().any(|r| r.epoch.is_some()),
            other => rows.iter().any(|r| float_field(r, other).is_some()),
        };
        if present {
            columns.push(name);
        }
    }
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        let mut cells: Vec<String> = Vec::with_capacity(columns.len());
        for name in &columns {
            let cell = match *name {
                "step" => row.step.to_string(),
                "epoch" => row.epoch.map(|e| e.to_string()).unwrap_or_default(),
                other => float_field(row, other).map(|v| format!("{v}")).unwrap_or_default(),
            };
            cells.push(cell);
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_trace<P: AsRef<Path>>(path: P, rows: &[TraceRow]) -> Result<(), TensorIoError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write_trace(&mut f, rows)?;
    f.flush()?;
    Ok(())
}

/// Parses a trace CSV. Header must name known columns only and include
/// `step`; steps must be strictly increasing.
pub fn read_trace<R: Read>(mut input: R) -> Result<Vec<TraceRow>, TensorIoError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(TensorIoError::MissingStepColumn)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();

    for (i, name) in columns.iter().enumerate() {
        if !TRACE_COLUMNS.contains(name) {
            return Err(TensorIoError::UnknownColumn { name: name.to_string() });
        }
        if columns[..i].contains(name) {
            return Err(TensorIoError::DuplicateColumn { name: name.to_string() });
        }
    }
    if !columns.contains(&"step") {
        return Err(TensorIoError::MissingStepColumn);
    }

    let mut rows = Vec::new();
    let mut last_step: Option<u64> = None;
    for (lineno, line) in lines.enumerate() {
        let line_id = lineno + 1; // 1-based data line number
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(TensorIoError::RowLength {
                line: line_id,
                expected: columns.len(),
                found: cells.len(),
            });
        }
        let mut row = TraceRow::new(0);
        for (name, cell) in columns.iter().zip(&cells) {
            let cell = cell.trim();
            if cell.is_empty() {
                if *name == "step" {
                    return Err(TensorIoError::UnparseableCell {
                        line: line_id,
                        column: "step".into(),
                        content: String::new(),
                    });
                }
                continue;
            }
            match *name {
                "step" | "epoch" => {
                    let v: u64 = cell.parse().map_err(|_| TensorIoError::UnparseableCell {
                        line: line_id,
                        column: name.to_string(),
                        content: cell.to_string(),
                    })?;
                    if *name == "step" {
                        row.step = v;
                    } else {
                        row.epoch = Some(v);
                    }
                }
                other => {
                    let v: f64 = cell.parse().map_err(|_| TensorIoError::UnparseableCell {
                        line: line_id,
                        column: other.to_string(),
                        content: cell.to_string(),
                    })?;
                    check_field_range(other, v, line_id)?;
                    *float_field_mut(&mut row, other).unwrap() = Some(v);
                }
            }
        }
        if let Some(prev) = last_step {
            if row.step <= prev {
                return Err(TensorIoError::NonMonotoneStep { line: line_id, step: row.step });
            }
        }
        last_step = Some(row.step);
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_trace<P: AsRef<Path>>(path: P) -> Result<Vec<TraceRow>, TensorIoError> {
    let f = io::BufReader::new(fs::File::open(path)?);
    read_trace(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip_npy(m: &DenseMatrix) -> DenseMatrix {
        let mut buf = Vec::new();
        write_npy(&mut buf, m).unwrap();
        read_npy(&buf[..]).unwrap()
    }

    #[test]
    fn npy_round_trip_is_bit_exact() {
        let m = DenseMatrix::from_fn(3, 5, |i, j| {
            (i as f64 + 1.0) / (j as f64 + 3.0) * if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let back = roundtrip_npy(&m);
        assert_eq!(back.shape(), (3, 5));
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn npy_header_is_64_byte_aligned_and_versioned() {
        let mut buf = Vec::new();
        write_npy(&mut buf, &DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(&buf[..6], b"\x93NUMPY");
        assert_eq!(&buf[6..8], &[1, 0]);
        let hlen = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(buf[10 + hlen - 1], b'\n');
    }

    /// Independent writer: builds the Fortran-order file byte by byte, so
    /// the reader's transpose is checked against something it didn't write.
    fn handmade_npy(descr: &str, fortran: bool, shape: &str, payload: &[f64]) -> Vec<u8> {
        let dict = format!(
            "{{'descr': '{descr}', 'fortran_order': {}, 'shape': {shape}, }}",
            if fortran { "True" } else { "False" }
        );
        let unpadded = 10 + dict.len() + 1;
        let pad = (16 - unpadded % 16) % 16;
        let mut buf = Vec::new();
        buf.extend_from_slice(b"\x93NUMPY");
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&((dict.len() + pad + 1) as u16).to_le_bytes());
        buf.extend_from_slice(dict.as_bytes());
        buf.extend(std::iter::repeat(b' ').take(pad));
        buf.push(b'\n');
        for v in payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    #[test]
    fn fortran_order_lands_transposed() {
        // Column-major payload for [[1,2,3],[4,5,6]]: columns (1,4),(2,5),(3,6).
        let buf = handmade_npy("<f8", true, "(2, 3)", &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let m = read_npy(&buf[..]).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn npy_rejects_bad_magic_dtype_shape_and_payload() {
        let good = handmade_npy("<f8", false, "(2, 2)", &[1.0, 2.0, 3.0, 4.0]);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_npy(&bad_magic[..]), Err(TensorIoError::BadMagic)));

        let f4 = handmade_npy("<f4", false, "(2, 2)", &[1.0; 4]);
        assert!(matches!(
            read_npy(&f4[..]),
            Err(TensorIoError::UnsupportedDtype { descr }) if descr == "<f4"
        ));

        let one_d = handmade_npy("<f8", false, "(4,)", &[1.0; 4]);
        assert!(matches!(
            read_npy(&one_d[..]),
            Err(TensorIoError::UnsupportedDimensionality { ndim: 1 })
        ));

        let three_d = handmade_npy("<f8", false, "(2, 2, 2)", &[1.0; 8]);
        assert!(matches!(
            read_npy(&three_d[..]),
            Err(TensorIoError::UnsupportedDimensionality { ndim: 3 })
        ));

        let short = handmade_npy("<f8", false, "(2, 2)", &[1.0; 3]);
        assert!(matches!(
            read_npy(&short[..]),
            Err(TensorIoError::ElementCountMismatch { expected_bytes: 32, found_bytes: 24 })
        ));

        let long = handmade_npy("<f8", false, "(2, 2)", &[1.0; 5]);
        assert!(matches!(read_npy(&long[..]), Err(TensorIoError::ElementCountMismatch { .. })));

        let nan = handmade_npy("<f8", false, "(2, 2)", &[1.0, f64::NAN, 3.0, 4.0]);
        assert!(matches!(
            read_npy(&nan[..]),
            Err(TensorIoError::NonFiniteElement { row: 0, col: 1 })
        ));

        let ver = {
            let mut b = good;
            b[6] = 2;
            b
        };
        assert!(matches!(
            read_npy(&ver[..]),
            Err(TensorIoError::UnsupportedVersion { major: 2, minor: 0 })
        ));
    }

    #[test]
    fn npy_rejects_zero_extent() {
        let buf = handmade_npy("<f8", false, "(0, 3)", &[]);
        assert!(matches!(
            read_npy(&buf[..]),
            Err(TensorIoError::ZeroDimension { rows: 0, cols: 3 })
        ));
    }

    fn roundtrip_trace(rows: &[TraceRow]) -> Vec<TraceRow> {
        let mut buf = Vec::new();
        write_trace(&mut buf, rows).unwrap();
        read_trace(&buf[..]).unwrap()
    }

    #[test]
    fn trace_full_row_round_trips_field_by_field() {
        let row = TraceRow {
            step: 40,
            epoch: Some(2),
            train_loss: Some(0.125),
            val_loss: Some(4.5971231234567891),
            train_acc: Some(0.9921875),
            val_acc: Some(0.015625),
            lar: Some(0.5130000000000001),
            p1: Some(0.031415926535897934),
            q1: Some(0.02),
            sigma_p: Some(0.001953125),
            sigma_q: Some(0.0022),
            corr_pq: Some(-0.123456789012345678),
            spearman_pq: Some(0.5),
            srank: Some(17.000000000000004),
            erank: Some(12.3),
            k95: Some(31.0),
            k_pred: Some(26.99999999999997),
        };
        let back = roundtrip_trace(&[row.clone()]);
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], row);
    }

    #[test]
    fn trace_sparse_rows_keep_absent_fields_absent() {
        let rows = vec![
            TraceRow { step: 1, lar: Some(0.5), ..Default::default() },
            TraceRow { step: 2, ..Default::default() },
            TraceRow { step: 5, lar: Some(0.75), ..Default::default() },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,lar");
        let back = read_trace(&buf[..]).unwrap();
        assert_eq!(back, rows);
        assert!(back[1].lar.is_none());
    }

    #[test]
    fn trace_neg_inf_lar_round_trips() {
        let rows = vec![TraceRow { step: 3, lar: Some(f64::NEG_INFINITY), ..Default::default() }];
        let back = roundtrip_trace(&rows);
        assert_eq!(back[0].lar, Some(f64::NEG_INFINITY));
    }

    #[test]
    fn trace_rejects_missing_step_and_unknown_columns() {
        assert!(matches!(
            read_trace("epoch,lar\n1,0.5\n".as_bytes()),
            Err(TensorIoError::MissingStepColumn)
        ));
        assert!(matches!(
            read_trace("step,wibble\n1,0.5\n".as_bytes()),
            Err(TensorIoError::UnknownColumn { name }) if name == "wibble"
        ));
        assert!(matches!(
            read_trace("step,lar,lar\n1,0.5,0.5\n".as_bytes()),
            Err(TensorIoError::DuplicateColumn { name }) if name == "lar"
        ));
    }

    #[test]
    fn trace_rejects_non_monotone_steps_and_bad_cells() {
        assert!(matches!(
            read_trace("step,lar\n5,0.5\n5,0.6\n".as_bytes()),
            Err(TensorIoError::NonMonotoneStep { line: 2, step: 5 })
        ));
        assert!(matches!(
            read_trace("step,lar\n10,0.5\n4,0.6\n".as_bytes()),
            Err(TensorIoError::NonMonotoneStep { line: 2, step: 4 })
        ));
        assert!(matches!(
            read_trace("step,lar\n1,zebra\n".as_bytes()),
            Err(TensorIoError::UnparseableCell { line: 1, .. })
        ));
        assert!(matches!(
            read_trace("step,val_acc\n1,1.5\n".as_bytes()),
            Err(TensorIoError::FieldOutOfRange { .. })
        ));
        assert!(matches!(
            read_trace("step,train_loss\n1,-0.25\n".as_bytes()),
            Err(TensorIoError::FieldOutOfRange { .. })
        ));
        assert!(matches!(
            read_trace("step,lar\n1,NaN\n".as_bytes()),
            Err(TensorIoError::FieldOutOfRange { .. })
        ));
        assert!(matches!(
            read_trace("step,lar\n1\n".as_bytes()),
            Err(TensorIoError::RowLength { line: 1, expected: 2, found: 1 })
        ));
    }

    // ───────────────────── round-trip properties ───────────────────

    use proptest::prelude::*;

    /// Any finite f64, spanning sign, subnormals, zeros, and full-range
    /// exponents — not just "nice" values.
    fn finite_f64() -> impl Strategy<Value = f64> {
        any::<u64>().prop_map(f64::from_bits).prop_filter("finite", |v| v.is_finite())
    }

    fn in_range(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        (lo..=hi).prop_map(|v| v)
    }

    /// A row obeying the documented cell rules: losses nonnegative,
    /// accuracies in [0, 1], `lar` finite or the −∞ sentinel, everything
    /// else finite, any subset of columns present.
    fn trace_row(step: u64) -> impl Strategy<Value = TraceRow> {
        let lar = prop_oneof![
            4 => in_range(-4.0, 4.0),
            1 => Just(f64::NEG_INFINITY),
        ];
        (
            proptest::option::of(in_range(0.0, 1e9)),
            proptest::option::of(in_range(0.0, 1e9)),
            proptest::option::of(in_range(0.0, 1.0)),
            proptest::option::of(in_range(0.0, 1.0)),
            proptest::option::of(lar),
            proptest::option::of(in_range(-1e12, 1e12)),
            proptest::option::of(any::<u32>()),
        )
            .prop_map(
                move |(train_loss, val_loss, train_acc, val_acc, lar, srank, epoch)| TraceRow {
                    step,
                    epoch: epoch.map(u64::from),
                    train_loss,
                    val_loss,
                    train_acc,
                    val_acc,
                    lar,
                    srank,
                    ..TraceRow::default()
                },
            )
    }

    fn trace_rows() -> impl Strategy<Value = Vec<TraceRow>> {
        proptest::collection::btree_set(any::<u32>(), 1..24).prop_flat_map(|steps| {
            steps
                .into_iter()
                .map(|s| trace_row(u64::from(s)))
                .collect::<Vec<_>>()
        })
    }

    proptest! {
        /// CSV cells are written with shortest-round-trip formatting, so a
        /// save/load cycle must reproduce every row exactly — present
        /// columns, absent columns, and the −∞ sentinel included.
        #[test]
        fn trace_save_load_round_trips(rows in trace_rows()) {
            let mut buf = Vec::new();
            write_trace(&mut buf, &rows).unwrap();
            let back = read_trace(&buf[..]).unwrap();
            prop_assert_eq!(back, rows);
        }

        /// NPY payloads are raw little-endian bits: the cycle must be
        /// bit-exact for every finite value, -0.0 and subnormals included.
        #[test]
        fn npy_save_load_is_bit_exact(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in proptest::collection::vec(finite_f64(), 144),
        ) {
            let m = DenseMatrix::from_fn(rows, cols, |i, j| seed[(i * cols + j) % seed.len()]);
            let back = roundtrip_npy(&m);
            prop_assert_eq!(back.shape(), (rows, cols));
            for (a, b) in m.data().iter().zip(back.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
