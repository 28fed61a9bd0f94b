//! Seeded generators for random covariances, Gaussian measures and joint
//! models. Shared by the self-test, the property tests and the acceptance
//! suite.
//!
//! All randomness flows from a caller-supplied [`Rng`]; the crate uses
//! `ChaCha8Rng::seed_from_u64` with `rand_distr::StandardNormal` (ziggurat)
//! everywhere, so a seed reproduces across builds and platforms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::gaussian::GaussianMeasure;
use crate::linalg::SymMatrix;
use crate::tolerance::Tolerances;
use crate::tradeoff::JointGaussianModel;

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    standard_normal_matrix(rng, dim, dim).qr().q()
}

fn with_spectrum(basis: &DMatrix<f64>, eigenvalues: &[f64]) -> SymMatrix {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
    SymMatrix::symmetrized(basis * d * basis.transpose())
}

/// Positive definite matrix with eigenvalues drawn from `[0.2, 3]`.
pub fn random_pd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SymMatrix {
    let basis = random_orthogonal(rng, dim);
    let eigs: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..3.0)).collect();
    with_spectrum(&basis, &eigs)
}

/// `B B^T` with `B` a `dim x rank` standard Gaussian matrix.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, dim: usize, rank: usize) -> SymMatrix {
    if rank == 0 {
        return SymMatrix::zeros(dim);
    }
    let b = standard_normal_matrix(rng, dim, rank) * (1.0 / (rank as f64).sqrt());
    SymMatrix::symmetrized(&b * b.transpose())
}

/// Gaussian with standard normal mean and a PSD covariance of random rank
/// (possibly singular).
pub fn random_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> GaussianMeasure {
    let rank = rng.random_range(1..=dim);
    let cov = random_psd(rng, dim, rank);
    let mean = standard_normal_vector(rng, dim);
    GaussianMeasure::new(mean, cov, &Tolerances::default()).expect("B B^T is PSD")
}

/// Gaussian with standard normal mean and positive definite covariance.
pub fn random_gaussian_pd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> GaussianMeasure {
    let cov = random_pd(rng, dim);
    let mean = standard_normal_vector(rng, dim);
    GaussianMeasure::new(mean, cov, &Tolerances::default()).expect("PD covariance")
}

/// Two PSD matrices sharing an eigenbasis; about a quarter of the
/// eigenvalues are exactly zero.
pub fn random_commuting_pair<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> (SymMatrix, SymMatrix) {
    let basis = random_orthogonal(rng, dim);
    let draw = |rng: &mut R| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random_range(0.1..4.0)
                }
            })
            .collect()
    };
    let a = draw(rng);
    let b = draw(rng);
    (with_spectrum(&basis, &a), with_spectrum(&basis, &b))
}

/// Zero-mean joint Gaussian model for `(X, Y)` with `n_x`, `n_y`
/// components.
///
/// The joint covariance is `L L^T / (n_x + n_y) + 0.05 I` with `L` standard
/// normal, so both marginals are positive definite and the cross covariance
/// has full rank `min(n_x, n_y)` almost surely.
pub fn random_joint_model<R: Rng + ?Sized>(rng: &mut R, n_x: usize, n_y: usize) -> JointGaussianModel {
    let n = n_x + n_y;
    let l = standard_normal_matrix(rng, n, n);
    let joint = &l * l.transpose() * (1.0 / n as f64) + DMatrix::identity(n, n) * 0.05;
    let sigma_x = SymMatrix::symmetrized(joint.view((0, 0), (n_x, n_x)).into_owned());
    let sigma_y = SymMatrix::symmetrized(joint.view((n_x, n_x), (n_y, n_y)).into_owned());
    let sigma_xy = joint.view((0, n_x), (n_x, n_y)).into_owned();
    JointGaussianModel::new(sigma_x, sigma_y, sigma_xy, &Tolerances::default()).expect("joint covariance is PD")
}
