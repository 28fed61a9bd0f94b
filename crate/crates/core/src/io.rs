//! Text formats for matrices, Gaussian measures, discrete measures and
//! joint models.
//!
//! * Symmetric matrix: `dim=<n>` then `n` comma-separated rows.
//! * General matrix: `rows=<r>,cols=<c>` then `r` rows.
//! * Gaussian measure: `mean=<m1>,...,<md>` then a symmetric matrix.
//! * Discrete measure: header `w,x1,...,xd`, one atom per row.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader accepts its writer's output bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::linalg::SymMatrix;
use crate::oracle::DiscreteMeasure;
use crate::tolerance::Tolerances;
use crate::tradeoff::JointGaussianModel;

fn read_text(path: &Path) -> Result<String> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::parse(path.display().to_string(), "file not found"))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_first_line(text: &str) -> (&str, &str) {
    match text.find('\n') {
        Some(i) => (text[..i].trim(), &text[i + 1..]),
        None => (text.trim(), ""),
    }
}

fn parse_float(field: &str, file: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::parse(file, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(file, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_count(value: &str, key: &str, file: &str) -> Result<usize> {
    value.trim().parse().map_err(|_| Error::parse(file, format!("bad {key} value {value:?}")))
}

/// Parses `key=value` pairs separated by commas, e.g. `rows=2,cols=3`.
fn header_fields<'a>(line: &'a str, file: &str) -> Result<Vec<(&'a str, &'a str)>> {
    line.split(',')
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(file, format!("expected key=value in header {line:?}")))
        })
        .collect()
}

fn csv_rows(body: &str, file: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(file, e.to_string()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(record.iter().map(|f| parse_float(f, file)).collect::<Result<Vec<_>>>()?);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, r: usize, c: usize, file: &str) -> Result<DMatrix<f64>> {
    if rows.len() != r {
        return Err(Error::parse(file, format!("expected {r} rows, found {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::parse(file, format!("row {} has {} entries, expected {c}", i + 1, row.len())));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn format_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v}").expect("writing to a String");
    }
    out.push('\n');
}

fn format_matrix_rows(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        format_row(out, m.row(i).iter().copied());
    }
}

pub fn parse_symmetric(text: &str, file: &str, tol: &Tolerances) -> Result<SymMatrix> {
    let (header, body) = split_first_line(text);
    let fields = header_fields(header, file)?;
    let n = match fields.as_slice() {
        [("dim", v)] => parse_count(v, "dim", file)?,
        _ => return Err(Error::parse(file, format!("expected `dim=<n>` header, found {header:?}"))),
    };
    let m = rows_to_matrix(csv_rows(body, file)?, n, n, file)?;
    SymMatrix::new(m, tol)
}

pub fn format_symmetric(m: &SymMatrix) -> String {
    let mut out = format!("dim={}\n", m.dim());
    format_matrix_rows(&mut out, m.as_matrix());
    out
}

pub fn read_symmetric(path: &Path, tol: &Tolerances) -> Result<SymMatrix> {
    parse_symmetric(&read_text(path)?, &path.display().to_string(), tol)
}

pub fn write_symmetric(path: &Path, m: &SymMatrix) -> Result<()> {
    write_text(path, &format_symmetric(m))
}

/// Reads either header form; `dim=<n>` means `n x n`.
pub fn parse_matrix(text: &str, file: &str) -> Result<DMatrix<f64>> {
    let (header, body) = split_first_line(text);
    let fields = header_fields(header, file)?;
    let (r, c) = match fields.as_slice() {
        [("rows", r), ("cols", c)] => (parse_count(r, "rows", file)?, parse_count(c, "cols", file)?),
        [("dim", n)] => {
            let n = parse_count(n, "dim", file)?;
            (n, n)
        }
        _ => return Err(Error::parse(file, format!("expected `rows=<r>,cols=<c>` header, found {header:?}"))),
    };
    if r == 0 || c == 0 {
        return Err(Error::parse(file, "matrix must have at least one row and column"));
    }
    rows_to_matrix(csv_rows(body, file)?, r, c, file)
}

pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("rows={},cols={}\n", m.nrows(), m.ncols());
    format_matrix_rows(&mut out, m);
    out
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&read_text(path)?, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn parse_gaussian(text: &str, file: &str, tol: &Tolerances) -> Result<GaussianMeasure> {
    let (first, rest) = split_first_line(text);
    let Some(values) = first.strip_prefix("mean=") else {
        return Err(Error::parse(file, "expected a `mean=` line first"));
    };
    let mean = values.split(',').map(|f| parse_float(f, file)).collect::<Result<Vec<_>>>()?;
    let cov = parse_symmetric(rest, file, tol)?;
    if cov.dim() != mean.len() {
        return Err(Error::parse(file, format!("mean has {} entries but dim={}", mean.len(), cov.dim())));
    }
    GaussianMeasure::new(DVector::from_vec(mean), cov, tol)
}

pub fn format_gaussian(g: &GaussianMeasure) -> String {
    let mut out = String::from("mean=");
    format_row(&mut out, g.mean().iter().copied());
    out.push_str(&format_symmetric(g.cov()));
    out
}

pub fn read_gaussian(path: &Path, tol: &Tolerances) -> Result<GaussianMeasure> {
    parse_gaussian(&read_text(path)?, &path.display().to_string(), tol)
}

pub fn write_gaussian(path: &Path, g: &GaussianMeasure) -> Result<()> {
    write_text(path, &format_gaussian(g))
}

pub fn parse_discrete(text: &str, file: &str) -> Result<DiscreteMeasure> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(file, e.to_string()))?.clone();
    let d = headers.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("w".to_string()).chain((1..=d).map(|k| format!("x{k}"))).collect();
    if d == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::parse(file, format!("expected header `w,x1,...,xd`, found {:?}", headers.as_slice())));
    }
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(file, e.to_string()))?;
        let values = record.iter().map(|f| parse_float(f, file)).collect::<Result<Vec<_>>>()?;
        weights.push(values[0]);
        atoms.push(DVector::from_column_slice(&values[1..]));
    }
    DiscreteMeasure::new(atoms, weights)
}

pub fn format_discrete(m: &DiscreteMeasure) -> String {
    let mut out = String::from("w");
    for k in 1..=m.dim() {
        write!(out, ",x{k}").expect("writing to a String");
    }
    out.push('\n');
    for (x, &w) in m.atoms().iter().zip(m.weights()) {
        format_row(&mut out, std::iter::once(w).chain(x.iter().copied()));
    }
    out
}

pub fn read_discrete(path: &Path) -> Result<DiscreteMeasure> {
    parse_discrete(&read_text(path)?, &path.display().to_string())
}

pub fn write_discrete(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    write_text(path, &format_discrete(m))
}

/// Reads `sigma_x.csv`, `sigma_y.csv` (symmetric) and `sigma_xy.csv`
/// (general) from a directory and validates the joint model.
pub fn load_model(dir: &Path, tol: &Tolerances) -> Result<JointGaussianModel> {
    let sigma_x = read_symmetric(&dir.join("sigma_x.csv"), tol)?;
    let sigma_y = read_symmetric(&dir.join("sigma_y.csv"), tol)?;
    let sigma_xy = read_matrix(&dir.join("sigma_xy.csv"))?;
    JointGaussianModel::new(sigma_x, sigma_y, sigma_xy, tol)
}

pub fn save_model(dir: &Path, model: &JointGaussianModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_symmetric(&dir.join("sigma_x.csv"), model.sigma_x())?;
    write_symmetric(&dir.join("sigma_y.csv"), model.sigma_y())?;
    write_matrix(&dir.join("sigma_xy.csv"), model.sigma_xy())
}
