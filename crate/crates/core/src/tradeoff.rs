//! The distortion-perception curve for MSE distortion and Wasserstein-2
//! perception, and closed-form estimators that attain it when `X` and `Y`
//! are zero-mean jointly Gaussian.
//!
//! Notation used in the docs below: `S_X`, `S_Y`, `S_XY` are the model
//! covariances, `K = S_XY S_Y^-1` is the MMSE gain, `S_* = K S_YX` is the
//! covariance of the MMSE estimate, `D*` its MSE and `G*` its Gelbrich
//! distance to `N(0, S_X)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{gelbrich_distance, gelbrich_squared, GaussianMeasure};
use crate::linalg::{pd_inv, project_psd, psd_eig, psd_pinv, psd_sqrt, require_pd, sym_eig, SymMatrix};
use crate::random::standard_normal_vector;
use crate::tolerance::Tolerances;

/// Second-order description of a zero-mean jointly Gaussian pair `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussianModel {
    sigma_x: SymMatrix,
    sigma_y: SymMatrix,
    sigma_xy: DMatrix<f64>,
}

impl JointGaussianModel {
    /// Checks that both marginals are positive definite and that the joint
    /// covariance is PSD through its Schur complement
    /// `S_X - S_XY S_Y^-1 S_YX`.
    pub fn new(sigma_x: SymMatrix, sigma_y: SymMatrix, sigma_xy: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        let invalid = |block: &str, msg: String| Error::InvalidModel {
            block: block.to_string(),
            msg,
        };
        if sigma_xy.shape() != (sigma_x.dim(), sigma_y.dim()) {
            return Err(invalid(
                "sigma_xy",
                format!(
                    "shape {}x{} does not match n_x = {}, n_y = {}",
                    sigma_xy.nrows(),
                    sigma_xy.ncols(),
                    sigma_x.dim(),
                    sigma_y.dim()
                ),
            ));
        }
        for (name, m) in [("sigma_x", &sigma_x), ("sigma_y", &sigma_y)] {
            let eig = sym_eig(m)?;
            require_pd(&eig, tol).map_err(|_| {
                invalid(
                    name,
                    format!("not positive definite (smallest eigenvalue {:e})", eig.min_eigenvalue()),
                )
            })?;
        }
        let sigma_y_inv = pd_inv(&sigma_y, tol)?;
        let schur = SymMatrix::symmetrized(&*sigma_x - &sigma_xy * &*sigma_y_inv * sigma_xy.transpose());
        let eig = sym_eig(&schur)?;
        let scale = sym_eig(&sigma_x)?.max_eigenvalue();
        if eig.min_eigenvalue() < -tol.psd * scale {
            return Err(invalid(
                "schur complement",
                format!(
                    "joint covariance is not PSD: S_X - S_XY S_Y^-1 S_YX has eigenvalue {:e}",
                    eig.min_eigenvalue()
                ),
            ));
        }
        Ok(JointGaussianModel {
            sigma_x,
            sigma_y,
            sigma_xy,
        })
    }

    pub fn n_x(&self) -> usize {
        self.sigma_x.dim()
    }

    pub fn n_y(&self) -> usize {
        self.sigma_y.dim()
    }

    pub fn sigma_x(&self) -> &SymMatrix {
        &self.sigma_x
    }

    pub fn sigma_y(&self) -> &SymMatrix {
        &self.sigma_y
    }

    pub fn sigma_xy(&self) -> &DMatrix<f64> {
        &self.sigma_xy
    }

    /// The `(n_x + n_y)`-dimensional covariance of `(X, Y)`.
    pub fn joint_covariance(&self) -> SymMatrix {
        let (nx, ny) = (self.n_x(), self.n_y());
        let mut j = DMatrix::zeros(nx + ny, nx + ny);
        j.view_mut((0, 0), (nx, nx)).copy_from(&*self.sigma_x);
        j.view_mut((nx, nx), (ny, ny)).copy_from(&*self.sigma_y);
        j.view_mut((0, nx), (nx, ny)).copy_from(&self.sigma_xy);
        j.view_mut((nx, 0), (ny, nx)).copy_from(&self.sigma_xy.transpose());
        SymMatrix::symmetrized(j)
    }
}

/// `X_hat = A Y + W` with `W ~ N(0, sigma_w)` independent of `(X, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    pub a: DMatrix<f64>,
    pub sigma_w: SymMatrix,
}

impl LinearEstimator {
    /// `Cov(X_hat) = A S_Y A^T + S_W`.
    pub fn output_covariance(&self, model: &JointGaussianModel) -> Result<SymMatrix> {
        self.check_shape(model)?;
        let signal = model.sigma_y.congruence(&self.a);
        Ok(SymMatrix::symmetrized(signal.into_inner() + &*self.sigma_w))
    }

    fn check_shape(&self, model: &JointGaussianModel) -> Result<()> {
        if self.a.shape() != (model.n_x(), model.n_y()) || self.sigma_w.dim() != model.n_x() {
            return Err(Error::ShapeMismatch(format!(
                "estimator A is {}x{} with {}-dim noise, model has n_x = {}, n_y = {}",
                self.a.nrows(),
                self.a.ncols(),
                self.sigma_w.dim(),
                model.n_x(),
                model.n_y()
            )));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma_w.iter().all(|&v| v == 0.0)
    }
}

/// Quantities shared by every estimator construction.
#[derive(Debug, Clone)]
pub struct ModelAnalysis {
    pub sigma_y_inv: SymMatrix,
    /// MMSE gain `K = S_XY S_Y^-1`.
    pub gain: DMatrix<f64>,
    /// `S_* = S_XY S_Y^-1 S_YX`.
    pub sigma_star: SymMatrix,
    pub sigma_star_pinv: SymMatrix,
    /// `S_X^1/2 (S_X^1/2 S_* S_X^1/2)^1/2 S_X^-1/2`, i.e. `S_X T*`.
    pub perfect_perception_map: DMatrix<f64>,
    /// `(S_X^1/2 S_* S_X^1/2)^1/2`.
    pub middle_root: SymMatrix,
    pub d_star: f64,
    pub g_star: f64,
    /// Whether `S_*` has full rank under the pseudo-inverse cut.
    pub sigma_star_full_rank: bool,
}

impl ModelAnalysis {
    pub fn new(model: &JointGaussianModel, tol: &Tolerances) -> Result<Self> {
        let sigma_y_inv = pd_inv(&model.sigma_y, tol)?;
        let gain = &model.sigma_xy * &*sigma_y_inv;
        let sigma_star = SymMatrix::symmetrized(&gain * model.sigma_xy.transpose());
        let star_eig = psd_eig(&sigma_star, tol)?;
        let cut = tol.pinv * star_eig.max_eigenvalue().max(0.0);
        let sigma_star_full_rank = star_eig.min_eigenvalue() > cut && star_eig.max_eigenvalue() > 0.0;
        let sigma_star_pinv = psd_pinv(&sigma_star, tol)?;

        let x_eig = psd_eig(&model.sigma_x, tol)?;
        require_pd(&x_eig, tol)?;
        let x_root = x_eig.rebuild(f64::sqrt);
        let x_inv_root = x_eig.rebuild(|l| 1.0 / l.sqrt());
        let middle_root = psd_sqrt(&sigma_star.congruence(&x_root), tol)?;
        let perfect_perception_map = &*x_root * &*middle_root * &*x_inv_root;

        let d_star = (model.sigma_x.trace() - sigma_star.trace()).max(0.0);
        let g_star = gelbrich_distance(
            &GaussianMeasure::centered(model.sigma_x.clone(), tol)?,
            &GaussianMeasure::centered(sigma_star.clone(), tol)?,
            tol,
        )?;
        Ok(ModelAnalysis {
            sigma_y_inv,
            gain,
            sigma_star,
            sigma_star_pinv,
            perfect_perception_map,
            middle_root,
            d_star,
            g_star,
            sigma_star_full_rank,
        })
    }

    /// `G* = 0` up to round-off: the MMSE estimate already has the
    /// distribution of `X`.
    pub fn degenerate(&self, model: &JointGaussianModel) -> bool {
        self.g_star <= 1e-12 * model.sigma_x.trace().sqrt()
    }

    /// The cross covariance `S_X T* S_*^+ S_XY` of the perfect-perception
    /// estimator `X_hat_0` with `Y`.
    pub fn perfect_perception_cross(&self, model: &JointGaussianModel) -> DMatrix<f64> {
        &self.perfect_perception_map * &*self.sigma_star_pinv * &model.sigma_xy
    }

    /// Noise covariance of `X_hat_0`:
    /// `S_X - (S_X T*) S_*^+ (S_X T*)^T`. Exactly zero when `S_*` has full
    /// rank.
    pub fn perfect_perception_noise(&self, model: &JointGaussianModel, tol: &Tolerances) -> Result<SymMatrix> {
        if self.sigma_star_full_rank {
            return Ok(SymMatrix::zeros(model.n_x()));
        }
        let f = &self.perfect_perception_map;
        let shaped = SymMatrix::symmetrized(&*model.sigma_x - f * &*self.sigma_star_pinv * f.transpose());
        let scale = sym_eig(&model.sigma_x)?.max_eigenvalue();
        project_psd(&shaped, tol.fam, scale)
    }

    fn ratio(&self, model: &JointGaussianModel, p: f64) -> Result<f64> {
        if !(p >= 0.0) {
            return Err(Error::NegativeInput { name: "P", value: p });
        }
        if self.degenerate(model) {
            return if p == 0.0 {
                Ok(1.0)
            } else {
                Err(Error::PerceptionOutOfRange { p, g_star: self.g_star })
            };
        }
        if p > self.g_star * (1.0 + 1e-12) {
            return Err(Error::PerceptionOutOfRange { p, g_star: self.g_star });
        }
        Ok((p / self.g_star).min(1.0))
    }
}

/// MMSE estimator `X* = S_XY S_Y^-1 Y` and its covariance `S_*`.
pub fn mmse_estimator(model: &JointGaussianModel, tol: &Tolerances) -> Result<(LinearEstimator, SymMatrix)> {
    let sigma_y_inv = pd_inv(&model.sigma_y, tol)?;
    let a = &model.sigma_xy * &*sigma_y_inv;
    let sigma_star = SymMatrix::symmetrized(&a * model.sigma_xy.transpose());
    psd_eig(&sigma_star, tol)?;
    Ok((
        LinearEstimator {
            a,
            sigma_w: SymMatrix::zeros(model.n_x()),
        },
        sigma_star,
    ))
}

fn check_nonneg(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0) {
        return Err(Error::NegativeInput { name, value });
    }
    Ok(())
}

/// `D(P) = D* + ((P* - P)_+)^2`.
pub fn dp_value(d_star: f64, p_star: f64, p: f64) -> Result<f64> {
    check_nonneg("d_star", d_star)?;
    check_nonneg("p_star", p_star)?;
    check_nonneg("P", p)?;
    let gap = (p_star - p).max(0.0);
    Ok(d_star + gap * gap)
}

/// `D* + ((G* - P)_+)^2`, a lower bound on the DP function of any source
/// with the same second-order statistics; equal to it for Gaussians.
pub fn dp_lower_bound(d_star: f64, g_star: f64, p: f64) -> Result<f64> {
    check_nonneg("d_star", d_star)?;
    check_nonneg("g_star", g_star)?;
    check_nonneg("P", p)?;
    let gap = (g_star - p).max(0.0);
    Ok(d_star + gap * gap)
}

/// Estimator with perception index `P` and MSE `D(P)` for `P` in `[0, G*]`:
///
/// ```text
/// A   = ((1 - r) S_X T* S_*^+ + r I) K,        r = P / G*
/// S_W = (1 - r)^2 (S_X - S_X T* S_*^+ T* S_X)
/// ```
///
/// When `G* = 0` the MMSE estimator is returned.
pub fn optimal_estimator(model: &JointGaussianModel, p: f64, tol: &Tolerances) -> Result<LinearEstimator> {
    let analysis = ModelAnalysis::new(model, tol)?;
    optimal_estimator_from(model, &analysis, p, tol)
}

pub fn optimal_estimator_from(
    model: &JointGaussianModel,
    analysis: &ModelAnalysis,
    p: f64,
    tol: &Tolerances,
) -> Result<LinearEstimator> {
    let r = analysis.ratio(model, p)?;
    let n_x = model.n_x();
    if r == 1.0 {
        return Ok(LinearEstimator {
            a: analysis.gain.clone(),
            sigma_w: SymMatrix::zeros(n_x),
        });
    }
    let shaping = &analysis.perfect_perception_map * &*analysis.sigma_star_pinv * (1.0 - r)
        + DMatrix::<f64>::identity(n_x, n_x) * r;
    let a = shaping * &analysis.gain;
    let noise = analysis.perfect_perception_noise(model, tol)?;
    let w = (1.0 - r) * (1.0 - r);
    Ok(LinearEstimator {
        a,
        sigma_w: SymMatrix::symmetrized(noise.into_inner() * w),
    })
}

/// Outcome of checking a candidate cross covariance `S_{X0 Y}`.
#[derive(Debug, Clone)]
pub struct FamilyCheck {
    pub ok: bool,
    /// `S_X - S_{X0 Y} S_Y^-1 S_{X0 Y}^T` (PSD-projected when `ok`).
    pub sigma_w0: SymMatrix,
    /// `||S_{X0 Y} S_Y^-1 S_YX - S_X T*||_F / ||S_X||_F`.
    pub condition_residual: f64,
    /// Smallest eigenvalue of the raw `sigma_w0`.
    pub noise_min_eigenvalue: f64,
}

/// Checks whether `S_{X0 Y}` defines a perfect-perception estimator
/// `X0 = S_{X0 Y} S_Y^-1 Y + W0`: it must satisfy
/// `S_{X0 Y} S_Y^-1 S_YX = S_X^1/2 (S_X^1/2 S_* S_X^1/2)^1/2 S_X^-1/2`
/// and leave a PSD noise covariance `S_W0`.
pub fn validate_family_matrix(
    model: &JointGaussianModel,
    cross: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<FamilyCheck> {
    let analysis = ModelAnalysis::new(model, tol)?;
    validate_family_matrix_from(model, &analysis, cross, tol)
}

pub fn validate_family_matrix_from(
    model: &JointGaussianModel,
    analysis: &ModelAnalysis,
    cross: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<FamilyCheck> {
    if cross.shape() != (model.n_x(), model.n_y()) {
        return Err(Error::ShapeMismatch(format!(
            "family matrix is {}x{}, expected {}x{}",
            cross.nrows(),
            cross.ncols(),
            model.n_x(),
            model.n_y()
        )));
    }
    let scale = model.sigma_x.norm();
    let lhs = cross * &*analysis.sigma_y_inv * model.sigma_xy.transpose();
    let condition_residual = (lhs - &analysis.perfect_perception_map).norm() / scale;
    let raw = SymMatrix::symmetrized(&*model.sigma_x - cross * &*analysis.sigma_y_inv * cross.transpose());
    let noise_eig = sym_eig(&raw)?;
    let lambda_max = sym_eig(&model.sigma_x)?.max_eigenvalue();
    let noise_ok = noise_eig.min_eigenvalue() >= -tol.fam * lambda_max;
    let ok = condition_residual <= tol.fam && noise_ok;
    let sigma_w0 = if noise_ok {
        project_psd(&raw, tol.fam, lambda_max)?
    } else {
        raw
    };
    Ok(FamilyCheck {
        ok,
        sigma_w0,
        condition_residual,
        noise_min_eigenvalue: noise_eig.min_eigenvalue(),
    })
}

/// Member of the optimal family built from a valid `S_{X0 Y}`:
/// `A = ((1 - r) S_{X0 Y} + r S_XY) S_Y^-1`, `S_W = (1 - r)^2 S_W0`.
pub fn family_estimator(
    model: &JointGaussianModel,
    cross: &DMatrix<f64>,
    p: f64,
    tol: &Tolerances,
) -> Result<LinearEstimator> {
    let analysis = ModelAnalysis::new(model, tol)?;
    let check = validate_family_matrix_from(model, &analysis, cross, tol)?;
    if !check.ok {
        return Err(Error::InvalidFamilyMatrix(format!(
            "condition residual {:e}, noise min eigenvalue {:e}",
            check.condition_residual, check.noise_min_eigenvalue
        )));
    }
    let r = analysis.ratio(model, p)?;
    let a = (cross * (1.0 - r) + &model.sigma_xy * r) * &*analysis.sigma_y_inv;
    let w = (1.0 - r) * (1.0 - r);
    Ok(LinearEstimator {
        a,
        sigma_w: SymMatrix::symmetrized(check.sigma_w0.into_inner() * w),
    })
}

/// `(1 - P/P*) x0 + (P/P*) x_star`, elementwise.
pub fn interpolate_estimators(x0: &[f64], x_star: &[f64], p: f64, p_star: f64) -> Result<Vec<f64>> {
    if x0.len() != x_star.len() {
        return Err(Error::BadParameter(format!(
            "output lengths differ: {} vs {}",
            x0.len(),
            x_star.len()
        )));
    }
    if !(p_star > 0.0) {
        return Err(Error::BadParameter(format!("P* must be positive, got {p_star}")));
    }
    if !(p >= 0.0 && p <= p_star * (1.0 + 1e-12)) {
        return Err(Error::BadParameter(format!("P = {p} outside [0, {p_star}]")));
    }
    let w = (p / p_star).min(1.0);
    Ok(x0
        .iter()
        .zip(x_star)
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect())
}

/// How far posterior sampling (MSE `2 D*`) is from the optimal
/// perfect-perception MSE `D* + G*^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamplingReport {
    pub d_star: f64,
    pub g_star_sq: f64,
    /// `D* - G*^2`, nonnegative up to round-off.
    pub sandwich_slack: f64,
    /// `D(0) = 2 D*`, i.e. posterior sampling is optimal at `P = 0`.
    pub optimal: bool,
}

pub fn posterior_sampling_gap(model: &JointGaussianModel, tol: &Tolerances) -> Result<PosteriorSamplingReport> {
    let analysis = ModelAnalysis::new(model, tol)?;
    let g_star_sq = gelbrich_squared(
        &GaussianMeasure::centered(model.sigma_x.clone(), tol)?,
        &GaussianMeasure::centered(analysis.sigma_star.clone(), tol)?,
        tol,
    )?;
    let cross = analysis.middle_root.trace();
    let optimal = (analysis.sigma_star.trace() - cross).abs() <= 1e-9 * model.sigma_x.trace();
    Ok(PosteriorSamplingReport {
        d_star: analysis.d_star,
        g_star_sq,
        sandwich_slack: analysis.d_star - g_star_sq,
        optimal,
    })
}

/// Closed-form MSE and perception index of a linear estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Performance {
    pub mse: f64,
    pub perception: f64,
}

/// `mse = Tr S_X - 2 Tr(A S_YX) + Tr(A S_Y A^T) + Tr S_W` and the Gelbrich
/// (= W2, everything being Gaussian) distance between `N(0, S_X)` and the
/// output distribution.
pub fn estimator_performance(
    model: &JointGaussianModel,
    est: &LinearEstimator,
    tol: &Tolerances,
) -> Result<Performance> {
    let cov_hat = est.output_covariance(model)?;
    let cross = (&est.a * model.sigma_xy.transpose()).trace();
    let signal = model.sigma_y.congruence(&est.a).trace();
    let mse = (model.sigma_x.trace() - 2.0 * cross + signal + est.sigma_w.trace()).max(0.0);
    let perception = gelbrich_distance(
        &GaussianMeasure::centered(model.sigma_x.clone(), tol)?,
        &GaussianMeasure::centered(project_psd(&cov_hat, tol.psd, model.sigma_x.max_abs())?, tol)?,
        tol,
    )?;
    Ok(Performance { mse, perception })
}

/// Sampled DP curve of a Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub struct DpReport {
    pub d_star: f64,
    pub p_star: f64,
    /// `(P, D(P))` in grid order.
    pub samples: Vec<(f64, f64)>,
}

impl DpReport {
    /// Monotone and quadratic-law checks; returns the worst deviation from
    /// `D* + ((P* - P)_+)^2`.
    pub fn check(&self) -> Result<f64> {
        let mut sorted = self.samples.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::BadParameter("DP curve is not non-increasing".into()));
        }
        let mut worst = 0.0_f64;
        for &(p, d) in &sorted {
            let gap = (self.p_star - p).max(0.0);
            worst = worst.max((d - self.d_star - gap * gap).abs());
            if p >= self.p_star && d != self.d_star {
                return Err(Error::BadParameter(format!("D({p}) = {d} != D* beyond P*")));
            }
        }
        Ok(worst)
    }
}

pub fn dp_report(model: &JointGaussianModel, grid: &[f64], tol: &Tolerances) -> Result<DpReport> {
    let analysis = ModelAnalysis::new(model, tol)?;
    let samples = grid
        .iter()
        .map(|&p| dp_value(analysis.d_star, analysis.g_star, p).map(|d| (p, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DpReport {
        d_star: analysis.d_star,
        p_star: analysis.g_star,
        samples,
    })
}

/// Empirical behaviour of an estimator over sampled `(X, Y, W)`.
#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub samples: usize,
    pub mse: f64,
    /// Standard error of the MSE estimate.
    pub mse_std_err: f64,
    /// `(1/N) sum X_hat X_hat^T` (the mean is known to be zero).
    pub output_cov: SymMatrix,
}

/// Draws `n` samples of `(X, Y)` from the joint model and independent
/// `W = S_W^1/2 z`, and applies the estimator.
pub fn monte_carlo(
    model: &JointGaussianModel,
    est: &LinearEstimator,
    n: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MonteCarloSummary> {
    est.output_covariance(model)?;
    if n < 2 {
        return Err(Error::BadParameter("need at least 2 Monte-Carlo samples".into()));
    }
    let (nx, ny) = (model.n_x(), model.n_y());
    let joint_root = psd_sqrt(&model.joint_covariance(), tol)?;
    let noise_root = project_psd(&est.sigma_w, tol.psd, model.sigma_x.max_abs())
        .and_then(|w| psd_sqrt(&w, tol))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut second = DMatrix::<f64>::zeros(nx, nx);
    for _ in 0..n {
        let xy = &*joint_root * standard_normal_vector(&mut rng, nx + ny);
        let x = xy.rows(0, nx);
        let y = xy.rows(nx, ny);
        let w = &*noise_root * standard_normal_vector(&mut rng, nx);
        let x_hat = &est.a * y + w;
        let err = (x - &x_hat).norm_squared();
        sum += err;
        sum_sq += err * err;
        second.ger(1.0, &x_hat, &x_hat, 1.0);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(MonteCarloSummary {
        samples: n,
        mse: mean,
        mse_std_err: (var / nf).sqrt(),
        output_cov: SymMatrix::symmetrized(second / nf),
    })
}
