//! Quick seeded invariant suite behind `dp selftest`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::empirical::{accumulate_stats, method_mse, perception_index, ImageTensor, PatchStatistics};
use crate::error::Result;
use crate::gaussian::{gaussian_geodesic, gaussian_w2, gelbrich_distance, ot_map_nonsingular, ot_map_singular, GaussianMeasure};
use crate::io;
use crate::linalg::{psd_pinv, psd_sqrt, range_projector, SymMatrix};
use crate::oracle::{discrete_w2, verify_dp_construction, DiscreteMeasure};
use crate::random;
use crate::tolerance::Tolerances;
use crate::tradeoff::{estimator_performance, optimal_estimator, posterior_sampling_gap, JointGaussianModel, ModelAnalysis};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation, or a message on error.
    pub detail: String,
}

type Check = fn(&mut ChaCha8Rng, &Tolerances) -> Result<(bool, f64)>;

fn within(worst: f64, limit: f64) -> Result<(bool, f64)> {
    Ok((worst <= limit, worst))
}

fn moore_penrose(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for dim in 1..=6 {
        let rank = rng.random_range(0..=dim);
        let a = random::random_psd(rng, dim, rank);
        let p = psd_pinv(&a, tol)?;
        let (a, p) = (a.as_matrix(), p.as_matrix());
        let scale = a.norm().max(1.0) * p.norm().max(1.0);
        worst = worst.max((a * p * a - a).norm() / scale.powi(2));
        worst = worst.max((p * a * p - p).norm() / scale.powi(2));
    }
    within(worst, 1e-9)
}

fn sqrt_and_projector(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for dim in 1..=6 {
        let rank = rng.random_range(1..=dim);
        let a = random::random_psd(rng, dim, rank);
        let r = psd_sqrt(&a, tol)?;
        worst = worst.max((&*r * &*r - &*a).norm() / a.norm().max(1.0));
        let q = range_projector(&a, tol)?;
        worst = worst.max((&*q * &*q - &*q).norm());
        worst = worst.max((&*q * &*a - &*a).norm() / a.norm().max(1.0));
    }
    within(worst, 1e-9)
}

fn gelbrich_metric(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let dim = rng.random_range(1..=5);
        let a = random::random_gaussian(rng, dim);
        let b = random::random_gaussian(rng, dim);
        let c = random::random_gaussian(rng, dim);
        let ab = gelbrich_distance(&a, &b, tol)?;
        worst = worst.max((ab - gelbrich_distance(&b, &a, tol)?).abs());
        worst = worst.max(gelbrich_distance(&a, &a, tol)?);
        worst = worst.max(gelbrich_distance(&a, &c, tol)? - ab - gelbrich_distance(&b, &c, tol)?);
    }
    within(worst, 1e-9)
}

fn transport_maps(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for dim in 1..=5 {
        let s1 = random::random_pd(rng, dim);
        let rank = rng.random_range(1..=dim);
        let s2 = random::random_psd(rng, dim, rank);
        let t = ot_map_nonsingular(&s1, &s2, tol)?;
        worst = worst.max(t.pushforward_residual(&s1, &s2));
        // From a singular source only the part of the target seen through
        // the source's range is reachable: T S2 T = Q S1 Q.
        let t = ot_map_singular(&s2, &s1, tol)?;
        let q = range_projector(&s2, tol)?;
        let reachable = s1.congruence(q.as_matrix());
        worst = worst.max(t.pushforward_residual(&s2, &reachable));
    }
    within(worst, tol.map)
}

fn geodesic_speed(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for _ in 0..4 {
        let dim = rng.random_range(1..=4);
        let g = random::random_gaussian_pd(rng, dim);
        let m = random::random_gaussian_pd(rng, dim);
        let total = gaussian_w2(&g, &m, tol)?;
        let path: Vec<GaussianMeasure> =
            (0..=10).map(|k| gaussian_geodesic(&g, &m, k as f64 / 10.0, tol)).collect::<Result<_>>()?;
        for i in 0..path.len() {
            for j in 0..i {
                let d = gaussian_w2(&path[i], &path[j], tol)?;
                worst = worst.max((d - (i - j) as f64 / 10.0 * total).abs());
            }
        }
    }
    within(worst, 1e-8)
}

fn scalar_channel(_: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let model = JointGaussianModel::new(
        SymMatrix::from_diagonal(&[1.0]),
        SymMatrix::from_diagonal(&[2.0]),
        DMatrix::from_element(1, 1, 1.0),
        tol,
    )?;
    let a = ModelAnalysis::new(&model, tol)?;
    let g = 1.0 - 0.5f64.sqrt();
    let worst = (a.d_star - 0.5).abs().max((a.g_star - g).abs()).max((a.d_star + g * g - 0.585_786_437_626_904_9).abs());
    within(worst, 1e-12)
}

fn quadratic_law(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let mut worst = 0.0_f64;
    for _ in 0..8 {
        let (nx, ny) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let model = random::random_joint_model(rng, nx, ny);
        let a = ModelAnalysis::new(&model, tol)?;
        for k in 0..=4 {
            let p = a.g_star * k as f64 / 4.0;
            let perf = estimator_performance(&model, &optimal_estimator(&model, p, tol)?, tol)?;
            let expect = a.d_star + (a.g_star - p).powi(2);
            worst = worst.max((perf.mse - expect).abs()).max((perf.perception - p).abs());
        }
        let ps = posterior_sampling_gap(&model, tol)?;
        worst = worst.max(ps.g_star_sq - ps.d_star);
    }
    within(worst, 1e-7)
}

fn simplex_examples(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let line = |pts: &[f64]| DiscreteMeasure::uniform(pts.iter().map(|&x| DVector::from_element(1, x)).collect());
    let mut worst = (discrete_w2(&line(&[0.0, 2.0])?, &line(&[1.0, 3.0])?)?.w2 - 1.0).abs();
    for _ in 0..5 {
        let dim = rng.random_range(1..=3);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let a = DiscreteMeasure::uniform((0..n).map(|_| random::standard_normal_vector(rng, dim)).collect())?;
        let b = DiscreteMeasure::uniform((0..m).map(|_| random::standard_normal_vector(rng, dim)).collect())?;
        let w2 = discrete_w2(&a, &b)?.w2;
        let g = gelbrich_distance(&a.moments(tol)?, &b.moments(tol)?, tol)?;
        worst = worst.max(g - w2);
        let report = verify_dp_construction(&a, &b, &[0.0, 0.3, 0.7, 1.0])?;
        if !report.passed() {
            worst = worst.max(1.0);
        }
    }
    within(worst, 1e-9)
}

fn patch_statistics(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let two = [DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)];
    let s = accumulate_stats(&two)?;
    let mut worst = (s.mean[0] - 1.0).abs().max((s.cov[(0, 0)] - 2.0).abs());
    let stats = |v: f64| PatchStatistics { mean: DVector::zeros(1), cov: SymMatrix::from_diagonal(&[v]), count: 2 };
    worst = worst.max((perception_index(&stats(0.25), &stats(1.0), tol)? - 0.5).abs());
    let pix: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..0.5)).collect();
    let shifted: Vec<f64> = pix.iter().map(|v| v + 0.25).collect();
    let a = ImageTensor::new(10, 10, 3, pix)?;
    let b = ImageTensor::new(10, 10, 3, shifted)?;
    worst = worst.max((method_mse(&[b], &[a], 3, 1)? - 0.0625).abs());
    within(worst, 1e-12)
}

fn file_round_trip(rng: &mut ChaCha8Rng, tol: &Tolerances) -> Result<(bool, f64)> {
    let g = random::random_gaussian(rng, 4);
    let back = io::parse_gaussian(&io::format_gaussian(&g), "selftest", tol)?;
    Ok((back == g, if back == g { 0.0 } else { 1.0 }))
}

const CHECKS: &[(&str, Check)] = &[
    ("linalg.moore_penrose", moore_penrose),
    ("linalg.sqrt_and_projector", sqrt_and_projector),
    ("gaussian.gelbrich_metric", gelbrich_metric),
    ("gaussian.transport_maps", transport_maps),
    ("gaussian.geodesic_speed", geodesic_speed),
    ("tradeoff.scalar_channel", scalar_channel),
    ("tradeoff.quadratic_law", quadratic_law),
    ("oracle.simplex", simplex_examples),
    ("empirical.patch_statistics", patch_statistics),
    ("io.round_trip", file_round_trip),
];

/// Runs every check with its own generator derived from `seed`.
pub fn run_selftest(seed: u64, tol: &Tolerances) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(k, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            match check(&mut rng, tol) {
                Ok((passed, worst)) => CheckOutcome { name, passed, detail: format!("worst deviation {worst:e}") },
                Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
            }
        })
        .collect()
}
