//! Dense symmetric-matrix calculus: eigendecomposition, PSD square root,
//! pseudo-inverse and range projector.
//!
//! Every routine goes through one symmetric eigendecomposition and rebuilds
//! the result as `V f(diag(lambda)) V^T`. Inputs are symmetrized as
//! `(M + M^T) / 2` first, so asymmetry from products such as `A S A^T`
//! never reaches the solver.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tolerance::Tolerances;

const EIG_MAX_ITER: usize = 10_000;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry within `tol.sym * max(1, max|a_ij|)` and stores the
    /// symmetrized matrix.
    pub fn new(m: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::ShapeMismatch("matrix dimension must be >= 1".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParameter("matrix has non-finite entries".into()));
        }
        let deviation = max_asymmetry(&m);
        let limit = tol.sym * max_abs(&m).max(1.0);
        if deviation > limit {
            return Err(Error::NotSymmetric {
                deviation,
                tol: limit,
            });
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds a symmetric matrix from a computed product without a
    /// symmetry check, returning `(M + M^T) / 2`.
    ///
    /// Panics if `m` is not square.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrized() needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_row_slice(dim: usize, entries: &[f64], tol: &Tolerances) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries), tol)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    /// Congruence `B S B^T`, symmetrized.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrized(b * &self.0 * b.transpose())
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues in descending order with matching orthonormal eigenvector
/// columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// Largest eigenvalue magnitude; the reference scale for relative
    /// thresholds.
    pub fn spectral_radius(&self) -> f64 {
        self.max_eigenvalue().abs().max(self.min_eigenvalue().abs())
    }

    /// `V diag(f(lambda_i)) V^T`.
    pub fn rebuild(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::symmetrized(scaled * v.transpose())
    }

    /// Fails with `NotPsd` if an eigenvalue lies below `-tol * scale`.
    pub fn check_psd(&self, tol: f64, scale: f64) -> Result<()> {
        let limit = tol * scale;
        let min_eig = self.min_eigenvalue();
        if min_eig < -limit {
            return Err(Error::NotPsd {
                min_eig,
                tol: limit,
            });
        }
        Ok(())
    }
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenDecomposition> {
    let dim = m.dim();
    let eig = SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::NonConvergence { dim })?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence { dim });
    }
    let mut order: Vec<usize> = (0..dim).collect();
    // Stable sort keeps the solver's order among ties, so output is a pure
    // function of the input bits.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigendecomposition plus the PSD check relative to the spectral radius.
pub fn psd_eig(m: &SymMatrix, tol: &Tolerances) -> Result<EigenDecomposition> {
    let eig = sym_eig(m)?;
    eig.check_psd(tol.psd, eig.spectral_radius())?;
    Ok(eig)
}

/// Eigenvalues at or below `8 n eps lambda_max` are indistinguishable from
/// round-off of the eigensolver.
fn noise_floor(eig: &EigenDecomposition) -> f64 {
    8.0 * eig.dim() as f64 * f64::EPSILON * eig.spectral_radius()
}

/// PSD square root; eigenvalues within the PSD tolerance below zero are
/// clipped to 0, as are eigenvalues inside the solver's round-off floor,
/// whose square roots would otherwise inject `sqrt(eps)`-sized noise into
/// the null space.
pub fn psd_sqrt(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let eig = psd_eig(m, tol)?;
    let floor = noise_floor(&eig);
    Ok(eig.rebuild(|l| if l > floor { l.sqrt() } else { 0.0 }))
}

/// Moore-Penrose pseudo-inverse of a PSD matrix. Eigenvalues at or below
/// `tol.pinv * lambda_max` are treated as zero.
pub fn psd_pinv(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let eig = psd_eig(m, tol)?;
    let cut = tol.pinv * eig.max_eigenvalue().max(0.0);
    Ok(eig.rebuild(|l| if l > cut { 1.0 / l } else { 0.0 }))
}

/// Orthogonal projector onto the range of a PSD matrix.
pub fn range_projector(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let eig = psd_eig(m, tol)?;
    let cut = tol.pinv * eig.max_eigenvalue().max(0.0);
    Ok(eig.rebuild(|l| if l > cut { 1.0 } else { 0.0 }))
}

/// Inverse square root of a strictly positive definite matrix.
///
/// Fails with `SourceSingular` when `lambda_min <= tol.psd * lambda_max`.
pub fn pd_inv_sqrt(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let eig = psd_eig(m, tol)?;
    require_pd(&eig, tol)?;
    Ok(eig.rebuild(|l| 1.0 / l.sqrt()))
}

/// Inverse of a strictly positive definite matrix via its eigendecomposition.
pub fn pd_inv(m: &SymMatrix, tol: &Tolerances) -> Result<SymMatrix> {
    let eig = psd_eig(m, tol)?;
    require_pd(&eig, tol)?;
    Ok(eig.rebuild(|l| 1.0 / l))
}

pub(crate) fn require_pd(eig: &EigenDecomposition, tol: &Tolerances) -> Result<()> {
    let min_eig = eig.min_eigenvalue();
    if !(min_eig > tol.psd * eig.max_eigenvalue()) || min_eig <= 0.0 {
        return Err(Error::SourceSingular { min_eig });
    }
    Ok(())
}

/// Clips the negative part of a matrix that should be PSD, measuring the
/// allowed negativity against an external `scale` rather than the matrix's
/// own spectrum. Used for differences such as `S_X - M S_Y^-1 M^T` that are
/// zero in exact arithmetic.
pub fn project_psd(m: &SymMatrix, tol: f64, scale: f64) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    eig.check_psd(tol, scale.max(eig.spectral_radius()))?;
    let floor = tol * scale;
    Ok(eig.rebuild(|l| if l > floor { l } else { 0.0 }))
}

/// Sum of `sqrt(lambda_i)` over a PSD matrix, negatives clipped.
pub fn trace_sqrt(m: &SymMatrix, tol: &Tolerances) -> Result<f64> {
    let eig = psd_eig(m, tol)?;
    let floor = noise_floor(&eig);
    Ok(eig.eigenvalues.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum())
}

/// Orthogonal polar factor `U` of a square matrix `K = U H`, computed with
/// one-sided Jacobi rotations. When `K` is singular the factor is completed
/// to an orthogonal matrix on the left null space.
///
/// nalgebra's bidiagonal SVD loses accuracy on clustered singular values,
/// which is exactly the near-coincident case the Procrustes form is for.
pub fn polar_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::ShapeMismatch(format!("polar factor of {}x{} matrix", n, k.ncols())));
    }
    let mut a = k.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tiny = (f64::EPSILON * k.norm()).powi(2);
    let negligible = 4.0 * n as f64 * f64::EPSILON;
    let mut converged = n < 2;
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha <= tiny || beta <= tiny || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                // Roundoff keeps a large column from being exactly orthogonal
                // to a much smaller one; such rotations are pure noise.
                if t.abs() <= negligible {
                    continue;
                }
                rotated = true;
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for i in 0..n {
                        let x = m[(i, p)];
                        let y = m[(i, q)];
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { dim: n });
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let largest = norms.iter().cloned().fold(0.0, f64::max);
    let floor = 8.0 * n as f64 * f64::EPSILON * largest;
    let mut u = DMatrix::<f64>::zeros(n, n);
    let mut missing = Vec::new();
    for j in 0..n {
        if norms[j] > floor {
            u.set_column(j, &(a.column(j) / norms[j]));
        } else {
            missing.push(j);
        }
    }
    // Fill each null direction with the unit vector that has the largest
    // residual after two Gram-Schmidt passes.
    for j in missing {
        let mut best = DVector::<f64>::zeros(n);
        let mut best_norm = 0.0;
        for e in 0..n {
            let mut w = DVector::<f64>::zeros(n);
            w[e] = 1.0;
            for _ in 0..2 {
                for c in 0..n {
                    let col = u.column(c);
                    let d = col.dot(&w);
                    w -= col * d;
                }
            }
            let norm = w.norm();
            if norm > best_norm {
                best_norm = norm;
                best = w;
            }
        }
        u.set_column(j, &(best / best_norm));
    }
    Ok(u * v.transpose())
}
