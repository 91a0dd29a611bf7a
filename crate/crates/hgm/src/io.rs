//! Matrix, grouping, precision and variance files.
//!
//! Delimited files are comma separated with an optional header row. Indices
//! and group labels in files are one-based.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hgm_core::{DataMatrix, GroupAssignment, HgmError, NoiseVariances, PrecisionMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Leading bytes of the binary matrix format.
pub const BIN_MAGIC: &[u8; 8] = b"HGMMAT01";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, field {field}: cannot parse {text:?} as a number")]
    Parse { line: usize, field: usize, text: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    NonRectangular { row: usize, expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("binary matrix: {0}")]
    Binary(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] HgmError),
}

pub type IoResult<T> = Result<T, IoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Csv,
    Bin,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Bin => "bin",
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "bin" => Ok(MatrixFormat::Bin),
            other => Err(format!("unknown format {other:?} (expected csv or bin)")),
        }
    }
}

fn open(path: &Path) -> IoResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> IoResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(None)
        .from_reader(r)
}

/// Numeric records of a delimited file; a first row with any non-numeric
/// field is taken as a header and skipped. Returns `(line, values)` pairs.
fn numeric_records<R: Read>(r: R) -> IoResult<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (idx, rec) in csv_reader(r).records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Vec<Result<f64, usize>> = rec
            .iter()
            .enumerate()
            .map(|(f, s)| s.parse::<f64>().map_err(|_| f))
            .collect();
        if rows.is_empty() && idx == 0 && parsed.iter().any(Result::is_err) {
            continue;
        }
        let mut vals = Vec::with_capacity(parsed.len());
        for p in parsed {
            match p {
                Ok(v) => vals.push(v),
                Err(f) => {
                    return Err(IoError::Parse {
                        line,
                        field: f + 1,
                        text: rec[f].to_string(),
                    })
                }
            }
        }
        rows.push((line, vals));
    }
    Ok(rows)
}

/// Reads a delimited matrix: rows are observations, columns variables.
pub fn read_csv_matrix<R: Read>(r: R) -> IoResult<DMatrix<f64>> {
    let rows = numeric_records(r)?;
    let Some((_, first)) = rows.first() else {
        return Err(IoError::Format("no numeric rows".into()));
    };
    let p = first.len();
    for (i, (_, row)) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(IoError::NonRectangular {
                row: i + 1,
                expected: p,
                found: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(IoError::NonFinite { row: i + 1, col: c + 1 });
        }
    }
    let n = rows.len();
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i].1[j]))
}

pub fn write_csv_matrix<W: Write>(w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

/// Reads the binary layout: magic, `n` and `p` as little-endian `u64`,
/// then `n * p` little-endian `f64` values in row-major order.
pub fn read_bin_matrix<R: Read>(mut r: R) -> IoResult<DMatrix<f64>> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)
        .map_err(|_| IoError::Binary("file shorter than the 24-byte header".into()))?;
    if &head[..8] != BIN_MAGIC {
        return Err(IoError::Binary("bad magic (expected HGMMAT01)".into()));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
    let p = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
    let count = n
        .checked_mul(p)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| IoError::Binary(format!("dimensions {n}x{p} overflow")))?;
    let (n, p) = (n as usize, p as usize);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| IoError::Binary(e.to_string()))?;
    if bytes.len() != count * 8 {
        return Err(IoError::Binary(format!(
            "payload has {} bytes, expected {} for {n}x{p}",
            bytes.len(),
            count * 8
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(pos) = vals.iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFinite {
            row: pos / p.max(1) + 1,
            col: pos % p.max(1) + 1,
        });
    }
    Ok(DMatrix::from_row_slice(n, p, &vals))
}

pub fn write_bin_matrix<W: Write>(w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(BIN_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_matrix(path: &Path, format: MatrixFormat) -> IoResult<DMatrix<f64>> {
    let r = open(path)?;
    match format {
        MatrixFormat::Csv => read_csv_matrix(r),
        MatrixFormat::Bin => read_bin_matrix(r),
    }
}

/// Loads an `n x p` data matrix.
pub fn load_matrix(path: &Path, format: MatrixFormat) -> IoResult<DataMatrix> {
    Ok(DataMatrix::new(read_matrix(path, format)?)?)
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> IoResult<()> {
    let f = create(path)?;
    match format {
        MatrixFormat::Csv => write_csv_matrix(f, m),
        MatrixFormat::Bin => write_bin_matrix(f, m),
    }
    .map_err(io_err(path))
}

/// `variable,group` rows, both one-based.
pub fn write_groups(path: &Path, g: &GroupAssignment) -> IoResult<()> {
    let mut w = create(path)?;
    let mut body = String::from("variable,group\n");
    for (j, &l) in g.labels().iter().enumerate() {
        body.push_str(&format!("{},{}\n", j + 1, l + 1));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Reads a grouping file. Variables must be listed exactly once each as
/// `1..=p`; `K` is the largest label.
pub fn read_groups(path: &Path) -> IoResult<GroupAssignment> {
    let rows = numeric_records(open(path)?)?;
    let p = rows.len();
    let mut labels = vec![usize::MAX; p];
    for (line, row) in &rows {
        let [j, l] = row[..] else {
            return Err(IoError::Format(format!("line {line}: expected `variable,group`")));
        };
        let (j, l) = (as_index(j, *line)?, as_index(l, *line)?);
        if j > p || labels[j - 1] != usize::MAX {
            return Err(IoError::Format(format!(
                "line {line}: variable {j} is out of range or repeated"
            )));
        }
        labels[j - 1] = l - 1;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok(GroupAssignment::new(labels, k)?)
}

fn as_index(v: f64, line: usize) -> IoResult<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(IoError::Format(format!("line {line}: {v} is not a one-based index")))
    }
}

/// Upper triangle (diagonal included) of the nonzero entries as `i,j,value`.
pub fn write_edge_list(path: &Path, omega: &PrecisionMatrix) -> IoResult<()> {
    let m = omega.matrix();
    let mut body = String::from("i,j,value\n");
    for i in 0..omega.k() {
        for j in i..omega.k() {
            if m[(i, j)] != 0.0 {
                body.push_str(&format!("{},{},{}\n", i + 1, j + 1, fmt_f64(m[(i, j)])));
            }
        }
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Rebuilds a symmetric precision matrix from an edge list; `K` is the
/// largest index present.
pub fn read_edge_list(path: &Path) -> IoResult<PrecisionMatrix> {
    let rows = numeric_records(open(path)?)?;
    let mut entries = Vec::with_capacity(rows.len());
    let mut k = 0;
    for (line, row) in &rows {
        let [i, j, v] = row[..] else {
            return Err(IoError::Format(format!("line {line}: expected `i,j,value`")));
        };
        let (i, j) = (as_index(i, *line)?, as_index(j, *line)?);
        k = k.max(i).max(j);
        entries.push((i - 1, j - 1, v));
    }
    let mut m = DMatrix::zeros(k, k);
    for (i, j, v) in entries {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    Ok(PrecisionMatrix::new(m)?)
}

/// `group,phi` rows.
pub fn write_phi(path: &Path, phi: &NoiseVariances) -> IoResult<()> {
    let mut body = String::from("group,phi\n");
    for (k, v) in phi.values().iter().enumerate() {
        body.push_str(&format!("{},{}\n", k + 1, fmt_f64(*v)));
    }
    let mut w = create(path)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_phi(path: &Path) -> IoResult<NoiseVariances> {
    let rows = numeric_records(open(path)?)?;
    let mut out = vec![f64::NAN; rows.len()];
    for (line, row) in &rows {
        let [k, v] = row[..] else {
            return Err(IoError::Format(format!("line {line}: expected `group,phi`")));
        };
        let k = as_index(k, *line)?;
        if k > out.len() {
            return Err(IoError::Format(format!("line {line}: group {k} out of range")));
        }
        out[k - 1] = v;
    }
    Ok(NoiseVariances::new(out)?)
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> IoResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    std::fs::write(path, text).map_err(io_err(path))
}
