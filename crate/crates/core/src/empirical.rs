//! Patch statistics of images and their placement on the
//! distortion-perception plane.
//!
//! A method's perception index is the Gelbrich distance between the patch
//! mean/covariance of its outputs and that of the ground truth, divided by
//! `sqrt(d)` where `d = k * k * channels`. Its MSE is the mean squared
//! per-component difference over the same patches.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{gelbrich_distance, GaussianMeasure};
use crate::linalg::SymMatrix;
use crate::tolerance::Tolerances;

/// Pixels in `[0, 1]`, channel-interleaved, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch("image has zero size".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(&v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::BadParameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor { width, height, channels, pixels })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, other: &ImageTensor) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    fn shape(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }
}

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{} vs {}", a.shape(), b.shape())))
    }
}

fn patch_offsets(img: &ImageTensor, k: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::BadParameter("stride must be positive".into()));
    }
    if k == 0 || k > img.width.min(img.height) {
        return Err(Error::PatchTooLarge { k, width: img.width, height: img.height });
    }
    let mut out = Vec::new();
    for r in (0..=img.height - k).step_by(stride) {
        for c in (0..=img.width - k).step_by(stride) {
            out.push((r, c));
        }
    }
    Ok(out)
}

fn patch_at(img: &ImageTensor, k: usize, (r, c): (usize, usize)) -> DVector<f64> {
    let mut v = DVector::zeros(k * k * img.channels);
    let mut idx = 0;
    for ch in 0..img.channels {
        for y in r..r + k {
            for x in c..c + k {
                v[idx] = img.get(x, y, ch);
                idx += 1;
            }
        }
    }
    v
}

/// All fully interior `k x k` patches at offsets `(r * stride, c * stride)`,
/// flattened channel-major then row-major, in row-major offset order.
pub fn extract_patches(img: &ImageTensor, k: usize, stride: usize) -> Result<Vec<DVector<f64>>> {
    Ok(patch_offsets(img, k, stride)?.into_iter().map(|o| patch_at(img, k, o)).collect())
}

/// Patch mean and unbiased (`1 / (N - 1)`) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStatistics {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub count: usize,
}

impl PatchStatistics {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Welford accumulator; `m2` holds `sum (p - mean)(p - mean)^T`.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator { count: 0, mean: DVector::zeros(dim), m2: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimMismatch { left: self.dim(), right: p.len() });
        }
        self.count += 1;
        let delta = p - &self.mean;
        self.mean.axpy(1.0 / self.count as f64, &delta, 1.0);
        let delta2 = p - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
        Ok(())
    }

    /// Chan et al. pairwise combination.
    pub fn merge(mut self, other: StatsAccumulator) -> Result<StatsAccumulator> {
        if other.dim() != self.dim() {
            return Err(Error::DimMismatch { left: self.dim(), right: other.dim() });
        }
        if other.count == 0 {
            return Ok(self);
        }
        if self.count == 0 {
            return Ok(other);
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean.axpy(nb / n, &delta, 1.0);
        self.m2 += other.m2;
        self.m2.ger(na * nb / n, &delta, &delta, 1.0);
        self.count += other.count;
        Ok(self)
    }

    pub fn finish(self) -> Result<PatchStatistics> {
        if self.count < 2 {
            return Err(Error::TooFewPatches(self.count));
        }
        let cov = SymMatrix::symmetrized(self.m2 / (self.count as f64 - 1.0));
        Ok(PatchStatistics { mean: self.mean, cov, count: self.count })
    }
}

/// Sequential single-pass statistics; bit-reproducible for a fixed order.
pub fn accumulate_stats<'a>(patches: impl IntoIterator<Item = &'a DVector<f64>>) -> Result<PatchStatistics> {
    let mut iter = patches.into_iter().peekable();
    let dim = match iter.peek() {
        Some(p) => p.len(),
        None => return Err(Error::TooFewPatches(0)),
    };
    let mut acc = StatsAccumulator::new(dim);
    for p in iter {
        acc.push(p)?;
    }
    acc.finish()
}

/// Fixed-size chunks accumulated in parallel and merged in a fixed
/// pairwise tree. Deterministic, but differs from [`accumulate_stats`] by
/// rounding (within 1e-9 relative in practice).
pub fn accumulate_stats_parallel(patches: &[DVector<f64>], chunk: usize) -> Result<PatchStatistics> {
    let Some(first) = patches.first() else {
        return Err(Error::TooFewPatches(0));
    };
    let dim = first.len();
    let mut level: Vec<StatsAccumulator> = patches
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut acc = StatsAccumulator::new(dim);
            for p in c {
                acc.push(p)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b)?,
                None => a,
            });
        }
        level = next;
    }
    level.pop().expect("at least one chunk").finish()
}

/// `sqrt(1/d) * G((m_ref, S_ref), (m_alg, S_alg))`.
pub fn perception_index(alg: &PatchStatistics, reference: &PatchStatistics, tol: &Tolerances) -> Result<f64> {
    if alg.dim() != reference.dim() {
        return Err(Error::DimMismatch { left: reference.dim(), right: alg.dim() });
    }
    let a = GaussianMeasure::new(reference.mean.clone(), reference.cov.clone(), tol)?;
    let b = GaussianMeasure::new(alg.mean.clone(), alg.cov.clone(), tol)?;
    Ok(gelbrich_distance(&a, &b, tol)? / (alg.dim() as f64).sqrt())
}

/// `sum ||p_recon - p_truth||^2 / (d * N)` over all extracted patch pairs.
pub fn method_mse(recon: &[ImageTensor], truth: &[ImageTensor], k: usize, stride: usize) -> Result<f64> {
    if recon.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} reconstructions for {} images", recon.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no images".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut dim = 0;
    for (a, b) in recon.iter().zip(truth) {
        check_shapes(a, b)?;
        for off in patch_offsets(b, k, stride)? {
            let pa = patch_at(a, k, off);
            let pb = patch_at(b, k, off);
            sum += (pa - &pb).norm_squared();
            dim = pb.len();
            count += 1;
        }
    }
    Ok(sum / (dim as f64 * count as f64))
}

/// `t a + (1 - t) b`, clamped to `[0, 1]`; `t` in `[-0.5, 1.5]`.
pub fn pixel_interpolate(a: &ImageTensor, b: &ImageTensor, t: f64) -> Result<ImageTensor> {
    check_shapes(a, b)?;
    if !(-0.5..=1.5).contains(&t) {
        return Err(Error::BadParameter(format!("interpolation weight {t} outside [-0.5, 1.5]")));
    }
    let pixels = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (t * x + (1.0 - t) * y).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(a.width, a.height, a.channels, pixels)
}

fn collect_stats(images: &[ImageTensor], k: usize, stride: usize, parallel: bool) -> Result<PatchStatistics> {
    let mut patches = Vec::new();
    for img in images {
        patches.extend(extract_patches(img, k, stride)?);
    }
    if parallel {
        accumulate_stats_parallel(&patches, 4096)
    } else {
        accumulate_stats(&patches)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodEvaluation {
    pub name: String,
    pub mse: f64,
    pub perception: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpPlaneReport {
    pub patch: usize,
    pub stride: usize,
    pub methods: Vec<MethodEvaluation>,
    /// Index of the minimum-MSE method, the proxy for the MMSE estimator.
    pub best: usize,
    /// `(P, D_hat(P))` samples.
    pub curve: Vec<(f64, f64)>,
    /// Names of methods strictly below the estimated bound.
    pub violations: Vec<String>,
}

impl DpPlaneReport {
    /// `D_best + ((P_best - P)+)^2`.
    pub fn bound(&self, p: f64) -> f64 {
        let best = &self.methods[self.best];
        best.mse + (best.perception - p).max(0.0).powi(2)
    }
}

/// Tolerance below the estimated bound before a method is flagged.
pub const VIOLATION_SLACK: f64 = 1e-9;

/// Evaluates every method against the truth images and samples the
/// estimated lower bound on `curve_points` perception values from 0 to the
/// largest method perception.
pub fn dp_plane_report(
    methods: &[(String, Vec<ImageTensor>)],
    truth: &[ImageTensor],
    k: usize,
    stride: usize,
    curve_points: usize,
    parallel: bool,
    tol: &Tolerances,
) -> Result<DpPlaneReport> {
    if methods.is_empty() {
        return Err(Error::EmptyInput("no methods to evaluate".into()));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("no ground-truth images".into()));
    }
    let reference = collect_stats(truth, k, stride, parallel)?;
    let evaluate = |(name, images): &(String, Vec<ImageTensor>)| -> Result<MethodEvaluation> {
        let mse = method_mse(images, truth, k, stride)?;
        let stats = collect_stats(images, k, stride, parallel)?;
        let perception = perception_index(&stats, &reference, tol)?;
        Ok(MethodEvaluation { name: name.clone(), mse, perception })
    };
    let evaluations: Vec<MethodEvaluation> = if parallel {
        methods.par_iter().map(evaluate).collect::<Result<_>>()?
    } else {
        methods.iter().map(evaluate).collect::<Result<_>>()?
    };
    let best = evaluations
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mse.total_cmp(&b.1.mse).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mut report = DpPlaneReport { patch: k, stride, methods: evaluations, best, curve: Vec::new(), violations: Vec::new() };
    let p_max = report.methods.iter().map(|m| m.perception).fold(0.0, f64::max);
    let points = curve_points.max(2);
    report.curve = (0..points)
        .map(|i| {
            let p = p_max * i as f64 / (points - 1) as f64;
            (p, report.bound(p))
        })
        .collect();
    report.violations = report
        .methods
        .iter()
        .filter(|m| m.mse < report.bound(m.perception) - VIOLATION_SLACK)
        .map(|m| m.name.clone())
        .collect();
    Ok(report)
}
