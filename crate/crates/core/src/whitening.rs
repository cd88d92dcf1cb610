//! Whitening-k: an affine map `x ↦ (x − μ) W` that centers a vector set and
//! gives it identity covariance, keeping only the `k` highest-variance
//! whitened directions.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KgcError, Result};
use crate::fsutil;

/// Floor applied to covariance eigenvalues before inversion.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    /// Sample mean, length D.
    pub mu: DVector<f64>,
    /// D×k projection.
    pub w: DMatrix<f64>,
    /// Eigenvalues of the covariance, non-increasing. Empty for transforms
    /// read back from a file.
    pub sigma_eigvals: Vec<f64>,
}

impl WhiteningTransform {
    pub fn source_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("whiten v1 {} {}\n", self.source_dim(), self.target_dim());
        write_row(&mut out, self.mu.iter());
        for r in 0..self.w.nrows() {
            write_row(&mut out, self.w.row(r).iter());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| KgcError::Format { line, msg };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let (d, k) = match header.as_slice() {
            ["whiten", "v1", d, k] => (
                d.parse::<usize>().map_err(|_| bad(1, format!("bad D {d:?}")))?,
                k.parse::<usize>().map_err(|_| bad(1, format!("bad k {k:?}")))?,
            ),
            _ => return Err(bad(1, "expected `whiten v1 <D> <k>`".into())),
        };
        let mut parse_row = |line: usize, want: usize| -> Result<Vec<f64>> {
            let row = lines.next().ok_or_else(|| bad(line, "unexpected end of file".into()))?;
            let vals: Vec<f64> = row
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(line, format!("bad float: {e}")))?;
            if vals.len() != want {
                return Err(bad(line, format!("expected {want} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let mu = DVector::from_vec(parse_row(2, d)?);
        let mut w = DMatrix::zeros(d, k);
        for r in 0..d {
            let row = parse_row(r + 3, k)?;
            for (c, v) in row.into_iter().enumerate() {
                w[(r, c)] = v;
            }
        }
        Ok(Self {
            mu,
            w,
            sigma_eigvals: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?)
    }
}

fn write_row<'a>(out: &mut String, vals: impl Iterator<Item = &'a f64>) {
    for (i, v) in vals.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Builds an N×D matrix from row slices.
pub fn matrix_from_rows<'a, I>(rows: I, dim: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.iter().copied()).collect();
    DMatrix::from_row_slice(flat.len() / dim.max(1), dim, &flat)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Column mean and population (divisor N) covariance.
pub fn mean_and_covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mu = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let sigma = centered.tr_mul(&centered) / n;
    (mu, sigma)
}

pub fn fit_whitening(x: &DMatrix<f64>, k: usize, eps: f64) -> Result<WhiteningTransform> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(KgcError::domain(format!("whitening needs at least 2 rows, got {n}")));
    }
    if k > d {
        return Err(KgcError::domain(format!("target dimension {k} exceeds source dimension {d}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KgcError::domain("whitening input has non-finite entries"));
    }
    let (mu, sigma) = mean_and_covariance(x);
    let eig = SymmetricEigen::new(sigma);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut w = DMatrix::zeros(d, k);
    for (col, &src) in order.iter().take(k).enumerate() {
        let mut u = eig.eigenvectors.column(src).clone_owned();
        // Largest-magnitude entry is made non-negative.
        let pivot = u.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            u.neg_mut();
        }
        let scale = 1.0 / eig.eigenvalues[src].max(eps).sqrt();
        w.set_column(col, &(u * scale));
    }
    let sigma_eigvals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    Ok(WhiteningTransform { mu, w, sigma_eigvals })
}

pub fn apply_whitening(x: &DMatrix<f64>, t: &WhiteningTransform) -> Result<DMatrix<f64>> {
    if x.ncols() != t.source_dim() {
        return Err(KgcError::domain(format!(
            "input has {} columns, transform expects {}",
            x.ncols(),
            t.source_dim()
        )));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= t.mu.transpose();
    }
    Ok(centered * &t.w)
}
