//! Gelbrich distance, optimal transport maps between Gaussian measures and
//! Wasserstein-2 geodesics in the Gaussian family.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{polar_factor, psd_eig, psd_pinv, psd_sqrt, require_pd, trace_sqrt, SymMatrix};
use crate::tolerance::Tolerances;

/// A mean vector and PSD covariance. Also used as a plain moment pair for
/// non-Gaussian data, where the Gelbrich distance is only a lower bound on
/// Wasserstein-2.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: SymMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: SymMatrix, tol: &Tolerances) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimMismatch {
                left: mean.len(),
                right: cov.dim(),
            });
        }
        psd_eig(&cov, tol)?;
        Ok(GaussianMeasure { mean, cov })
    }

    pub fn centered(cov: SymMatrix, tol: &Tolerances) -> Result<Self> {
        let d = cov.dim();
        Self::new(DVector::zeros(d), cov, tol)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }
}

/// Self-adjoint linear transport map between two covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    pub matrix: SymMatrix,
}

impl GaussianMap {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Covariance of `T U` when `Cov(U) = source`.
    pub fn push_forward(&self, source: &SymMatrix) -> SymMatrix {
        source.congruence(&self.matrix)
    }

    /// `||T S1 T - S2||_F / max(||S2||_F, 1e-300)`.
    pub fn pushforward_residual(&self, source: &SymMatrix, target: &SymMatrix) -> f64 {
        let pushed = self.push_forward(source);
        (&*pushed - &**target).norm() / target.norm().max(1e-300)
    }
}

fn order_moments(a: &GaussianMeasure, b: &GaussianMeasure) -> Ordering {
    a.mean
        .iter()
        .chain(a.cov.iter())
        .zip(b.mean.iter().chain(b.cov.iter()))
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// `Tr{(S1^1/2 S2 S1^1/2)^1/2}`.
fn cross_term(s1: &SymMatrix, s2: &SymMatrix, tol: &Tolerances) -> Result<f64> {
    let root = psd_sqrt(s1, tol)?;
    trace_sqrt(&s2.congruence(&root), tol)
}

/// Covariance part of the squared Gelbrich distance in its orthogonal
/// Procrustes form `min_U ||S1^1/2 - S2^1/2 U||_F^2`, attained at the
/// polar factor `U` of `S2^1/2 S1^1/2`. The value is a sum of squares, so
/// it keeps full relative accuracy when `S1` and `S2` are close.
fn procrustes_term(s1: &SymMatrix, s2: &SymMatrix, tol: &Tolerances) -> Result<f64> {
    let r1 = psd_sqrt(s1, tol)?;
    let r2 = psd_sqrt(s2, tol)?;
    let polar = polar_factor(&(&*r2 * &*r1))?;
    Ok((&*r1 - &*r2 * polar).norm_squared())
}

fn check_dims(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

fn canonical<'a>(a: &'a GaussianMeasure, b: &'a GaussianMeasure) -> (&'a GaussianMeasure, &'a GaussianMeasure) {
    match order_moments(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    }
}

/// Squared Gelbrich distance
/// `||m1 - m2||^2 + Tr{S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2}`.
///
/// Evaluated through the equivalent Procrustes form (see
/// [`gelbrich_squared_trace`] for the literal trace expression). The two
/// arguments are put in a canonical order first, so the result is bitwise
/// symmetric.
pub fn gelbrich_squared(a: &GaussianMeasure, b: &GaussianMeasure, tol: &Tolerances) -> Result<f64> {
    check_dims(a, b)?;
    let (first, second) = canonical(a, b);
    let mean_term = (&first.mean - &second.mean).norm_squared();
    Ok(mean_term + procrustes_term(&first.cov, &second.cov, tol)?)
}

/// The literal trace expression of the squared Gelbrich distance, with the
/// trace part clipped at 0. Loses roughly half the digits when the two
/// covariances nearly coincide.
pub fn gelbrich_squared_trace(a: &GaussianMeasure, b: &GaussianMeasure, tol: &Tolerances) -> Result<f64> {
    check_dims(a, b)?;
    let (first, second) = canonical(a, b);
    let mean_term = (&first.mean - &second.mean).norm_squared();
    let cross = cross_term(&first.cov, &second.cov, tol)?;
    let cov_term = (first.cov.trace() + second.cov.trace() - 2.0 * cross).max(0.0);
    Ok(mean_term + cov_term)
}

pub fn gelbrich_distance(a: &GaussianMeasure, b: &GaussianMeasure, tol: &Tolerances) -> Result<f64> {
    gelbrich_squared(a, b, tol).map(f64::sqrt)
}

/// Wasserstein-2 distance between two Gaussian measures. For Gaussians
/// (singular or not) this is exactly the Gelbrich distance.
pub fn gaussian_w2(a: &GaussianMeasure, b: &GaussianMeasure, tol: &Tolerances) -> Result<f64> {
    gelbrich_distance(a, b, tol)
}

/// Optimal map `S1^-1/2 (S1^1/2 S2 S1^1/2)^1/2 S1^-1/2` pushing
/// `N(0, S1)` to `N(0, S2)`. Refuses a singular source.
pub fn ot_map_nonsingular(s1: &SymMatrix, s2: &SymMatrix, tol: &Tolerances) -> Result<GaussianMap> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimMismatch {
            left: s1.dim(),
            right: s2.dim(),
        });
    }
    let eig = psd_eig(s1, tol)?;
    require_pd(&eig, tol)?;
    let root = eig.rebuild(f64::sqrt);
    let inv_root = eig.rebuild(|l| 1.0 / l.sqrt());
    let middle = psd_sqrt(&s2.congruence(&root), tol)?;
    Ok(GaussianMap {
        matrix: middle.congruence(&inv_root),
    })
}

/// Self-adjoint map `(Sm^1/2)^+ (Sm^1/2 Sn Sm^1/2)^1/2 (Sm^1/2)^+`.
///
/// This is always the optimal map from `N(0, Sm)` to the projection of
/// `N(0, Sn)` onto `range(Sm)`; it recovers `N(0, Sn)` itself only when
/// `range(Sn)` is contained in `range(Sm)`.
pub fn ot_map_singular(sm: &SymMatrix, sn: &SymMatrix, tol: &Tolerances) -> Result<GaussianMap> {
    if sm.dim() != sn.dim() {
        return Err(Error::DimMismatch {
            left: sm.dim(),
            right: sn.dim(),
        });
    }
    psd_eig(sn, tol)?;
    let root = psd_sqrt(sm, tol)?;
    let root_pinv = psd_pinv(&root, tol)?;
    let middle = psd_sqrt(&sn.congruence(&root), tol)?;
    Ok(GaussianMap {
        matrix: middle.congruence(&root_pinv),
    })
}

/// Point at time `t` on the constant-speed geodesic from `from` to `to`:
/// mean `(1-t) m0 + t m1`, covariance `T_t S0 T_t` with
/// `T_t = I + t (T - I)`. The source covariance must be non-singular;
/// singular sources go through the discrete coupling geodesic instead.
pub fn gaussian_geodesic(
    from: &GaussianMeasure,
    to: &GaussianMeasure,
    t: f64,
    tol: &Tolerances,
) -> Result<GaussianMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::BadParameter(format!("geodesic time {t} outside [0, 1]")));
    }
    if from.dim() != to.dim() {
        return Err(Error::DimMismatch {
            left: from.dim(),
            right: to.dim(),
        });
    }
    let map = ot_map_nonsingular(&from.cov, &to.cov, tol)?;
    if t == 0.0 {
        return Ok(from.clone());
    }
    let d = from.dim();
    let identity = DMatrix::<f64>::identity(d, d);
    let step = &identity + (&*map.matrix - &identity) * t;
    let cov = from.cov.congruence(&step);
    let mean = &from.mean * (1.0 - t) + &to.mean * t;
    Ok(GaussianMeasure { mean, cov })
}

/// `||S1^1/2 - S2^1/2||_F` for commuting covariances, where it coincides
/// with the zero-mean Gelbrich distance.
pub fn commuting_gelbrich(s1: &SymMatrix, s2: &SymMatrix, tol: &Tolerances) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimMismatch {
            left: s1.dim(),
            right: s2.dim(),
        });
    }
    let residual = (&**s1 * &**s2 - &**s2 * &**s1).norm();
    if residual > tol.commute * s1.norm() * s2.norm() {
        return Err(Error::NotCommuting { residual });
    }
    let r1 = psd_sqrt(s1, tol)?;
    let r2 = psd_sqrt(s2, tol)?;
    Ok((&*r1 - &*r2).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn centered(diag: &[f64]) -> GaussianMeasure {
        GaussianMeasure::centered(SymMatrix::from_diagonal(diag), &tol()).unwrap()
    }

    fn measure(mean: &[f64], diag: &[f64]) -> GaussianMeasure {
        GaussianMeasure::new(DVector::from_column_slice(mean), SymMatrix::from_diagonal(diag), &tol()).unwrap()
    }

    #[test]
    fn gelbrich_examples() {
        let a = centered(&[4.0, 1.0]);
        assert_eq!(gelbrich_distance(&a, &a, &tol()).unwrap(), 0.0);
        let g = gelbrich_distance(&centered(&[1.0]), &centered(&[0.5]), &tol()).unwrap();
        assert_relative_eq!(g, 1.0 - 0.5_f64.sqrt(), epsilon = 1e-12);
        let g = gelbrich_distance(&centered(&[4.0, 1.0]), &centered(&[1.0, 4.0]), &tol()).unwrap();
        assert_relative_eq!(g, 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn w2_examples() {
        let g = gaussian_w2(&measure(&[0.0], &[1.0]), &measure(&[3.0], &[1.0]), &tol()).unwrap();
        assert_relative_eq!(g, 3.0, epsilon = 1e-12);
        let g = gaussian_w2(&centered(&[1.0, 1.0]), &centered(&[4.0, 0.0]), &tol()).unwrap();
        assert_relative_eq!(g, 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gelbrich_dim_mismatch() {
        let err = gelbrich_distance(&centered(&[1.0]), &centered(&[1.0, 1.0]), &tol()).unwrap_err();
        assert_eq!(err.kind(), "DimMismatch");
    }

    #[test]
    fn measure_rejects_indefinite_cov() {
        let err = GaussianMeasure::centered(SymMatrix::from_diagonal(&[1.0, -1.0]), &tol()).unwrap_err();
        assert_eq!(err.kind(), "NotPSD");
    }

    #[test]
    fn nonsingular_map_examples() {
        let t = ot_map_nonsingular(&SymMatrix::identity(2), &SymMatrix::identity(2), &tol()).unwrap();
        assert_relative_eq!(*t.matrix, DMatrix::identity(2, 2), epsilon = 1e-14);
        let t = ot_map_nonsingular(&SymMatrix::identity(2), &SymMatrix::from_diagonal(&[4.0, 9.0]), &tol()).unwrap();
        assert_relative_eq!(*t.matrix, *SymMatrix::from_diagonal(&[2.0, 3.0]), epsilon = 1e-14);
        let t = ot_map_nonsingular(&SymMatrix::identity(2), &SymMatrix::from_diagonal(&[4.0, 0.0]), &tol()).unwrap();
        assert_relative_eq!(*t.matrix, *SymMatrix::from_diagonal(&[2.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn nonsingular_map_refuses_singular_source() {
        let err = ot_map_nonsingular(&SymMatrix::from_diagonal(&[1.0, 0.0]), &SymMatrix::identity(2), &tol())
            .unwrap_err();
        assert_eq!(err.kind(), "SourceSingular");
    }

    #[test]
    fn singular_map_examples() {
        let s = SymMatrix::from_diagonal(&[1.0, 0.0]);
        let t = ot_map_singular(&s, &s, &tol()).unwrap();
        assert_relative_eq!(*t.matrix, *s, epsilon = 1e-14);
        let t = ot_map_singular(&SymMatrix::from_diagonal(&[0.5, 0.0]), &SymMatrix::from_diagonal(&[1.0, 0.0]), &tol())
            .unwrap();
        assert_relative_eq!(*t.matrix, *SymMatrix::from_diagonal(&[2.0_f64.sqrt(), 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn singular_map_matches_nonsingular_on_pd_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 1..=6 {
            let s1 = random::random_pd(&mut rng, dim);
            let s2 = random::random_psd(&mut rng, dim, dim);
            let a = ot_map_nonsingular(&s1, &s2, &tol()).unwrap();
            let b = ot_map_singular(&s1, &s2, &tol()).unwrap();
            assert!((&*a.matrix - &*b.matrix).norm() <= 1e-12 * a.matrix.norm().max(1.0));
        }
    }

    #[test]
    fn singular_map_recovers_target_inside_range() {
        // range(Sn) inside range(Sm): rank-2 source, rank-1 target in its span
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = random::random_orthogonal(&mut rng, 3);
        let sm = SymMatrix::symmetrized(
            basis.columns(0, 2) * DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.7])) * basis.columns(0, 2).transpose(),
        );
        let u = basis.column(0) * 0.6 + basis.column(1) * 0.8;
        let sn = SymMatrix::symmetrized(&u * u.transpose() * 1.5);
        let t = ot_map_singular(&sm, &sn, &tol()).unwrap();
        assert!(t.pushforward_residual(&sm, &sn) <= 1e-10);
    }

    #[test]
    fn geodesic_examples() {
        let g = centered(&[1.0]);
        let m = centered(&[4.0]);
        assert_eq!(gaussian_geodesic(&g, &m, 0.0, &tol()).unwrap(), g);
        let end = gaussian_geodesic(&g, &m, 1.0, &tol()).unwrap();
        assert_relative_eq!(end.cov()[(0, 0)], 4.0, epsilon = 1e-10);
        let mid = gaussian_geodesic(&g, &m, 0.5, &tol()).unwrap();
        assert_relative_eq!(mid.cov()[(0, 0)], 2.25, epsilon = 1e-12);
        let err = gaussian_geodesic(&g, &m, 1.5, &tol()).unwrap_err();
        assert_eq!(err.kind(), "BadParameter");
    }

    #[test]
    fn commuting_examples() {
        let s = SymMatrix::from_diagonal(&[4.0, 1.0]);
        assert_eq!(commuting_gelbrich(&s, &s, &tol()).unwrap(), 0.0);
        let g = commuting_gelbrich(&s, &SymMatrix::from_diagonal(&[1.0, 4.0]), &tol()).unwrap();
        assert_relative_eq!(g, 2.0_f64.sqrt(), epsilon = 1e-14);
        let g = commuting_gelbrich(&SymMatrix::identity(3), &SymMatrix::from_diagonal(&[4.0; 3]), &tol()).unwrap();
        assert_relative_eq!(g, 3.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn commuting_rejects_noncommuting() {
        let a = SymMatrix::from_diagonal(&[2.0, 1.0]);
        let b = SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0], &tol()).unwrap();
        assert_eq!(commuting_gelbrich(&a, &b, &tol()).unwrap_err().kind(), "NotCommuting");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn metric_axioms(seed in any::<u64>(), dim in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random::random_gaussian(&mut rng, dim);
            let b = random::random_gaussian(&mut rng, dim);
            let c = random::random_gaussian(&mut rng, dim);
            let t = tol();
            let ab = gelbrich_distance(&a, &b, &t).unwrap();
            let ba = gelbrich_distance(&b, &a, &t).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            let bc = gelbrich_distance(&b, &c, &t).unwrap();
            let ac = gelbrich_distance(&a, &c, &t).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(gelbrich_distance(&a, &a, &t).unwrap() <= 1e-9);
        }

        #[test]
        fn procrustes_and_trace_routes_agree(seed in any::<u64>(), dim in 1usize..=8, rank in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random::random_gaussian(&mut rng, dim);
            let cov = random::random_psd(&mut rng, dim, rank.min(dim));
            let b = GaussianMeasure::centered(cov, &tol()).unwrap();
            let p = gelbrich_squared(&a, &b, &tol()).unwrap();
            let t = gelbrich_squared_trace(&a, &b, &tol()).unwrap();
            prop_assert!((p - t).abs() <= 1e-9 * (1.0 + a.cov().trace() + b.cov().trace()), "{p} vs {t}");
        }

        #[test]
        fn pushforward_identity(seed in any::<u64>(), dim in 1usize..=8, rank in 0usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s1 = random::random_pd(&mut rng, dim);
            let s2 = random::random_psd(&mut rng, dim, rank.min(dim));
            let map = ot_map_nonsingular(&s1, &s2, &tol()).unwrap();
            let scale = s2.norm().max(s1.norm() * 1e-3);
            let pushed = map.push_forward(&s1);
            prop_assert!((&*pushed - &*s2).norm() <= 1e-8 * scale);
        }

        #[test]
        fn commuting_matches_gelbrich(seed in any::<u64>(), dim in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s1, s2) = random::random_commuting_pair(&mut rng, dim);
            let fast = commuting_gelbrich(&s1, &s2, &tol()).unwrap();
            let a = GaussianMeasure::centered(s1, &tol()).unwrap();
            let b = GaussianMeasure::centered(s2, &tol()).unwrap();
            let full = gelbrich_distance(&a, &b, &tol()).unwrap();
            prop_assert!((fast - full).abs() <= 1e-9, "{fast} vs {full}");
        }

        #[test]
        fn geodesic_constant_speed(seed in any::<u64>(), dim in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random::random_gaussian_pd(&mut rng, dim);
            let m = random::random_gaussian_pd(&mut rng, dim);
            let t = tol();
            let total = gaussian_w2(&g, &m, &t).unwrap();
            let points: Vec<_> = (0..=10)
                .map(|k| gaussian_geodesic(&g, &m, k as f64 / 10.0, &t).unwrap())
                .collect();
            for i in 0..points.len() {
                for j in 0..points.len() {
                    let d = gaussian_w2(&points[i], &points[j], &t).unwrap();
                    let expected = (i as f64 - j as f64).abs() / 10.0 * total;
                    prop_assert!((d - expected).abs() <= 1e-8, "{d} vs {expected}");
                }
            }
        }
    }
}
