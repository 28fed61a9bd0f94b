//! Numerical tolerances shared by every module.

/// Relative tolerances used by the matrix routines and estimator checks.
///
/// All values are relative to a natural scale of the input (largest
/// eigenvalue, largest entry or Frobenius norm) unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Symmetry check on construction, relative to `max(1, max|a_ij|)`.
    pub sym: f64,
    /// Eigenvalues down to `-psd * lambda_max` are accepted and clipped to 0.
    pub psd: f64,
    /// Eigenvalues at or below `pinv * lambda_max` are treated as zero.
    pub pinv: f64,
    /// Reconstruction / orthogonality slack of the eigendecomposition.
    pub eig: f64,
    /// Push-forward check `T S1 T = S2` of transport maps.
    pub map: f64,
    /// Constant-speed check of geodesics.
    pub geo: f64,
    /// Family matrix condition and noise checks.
    pub fam: f64,
    /// Commutation residual accepted by the commuting Gelbrich shortcut.
    pub commute: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sym: 1e-8,
            psd: 1e-10,
            pinv: 1e-10,
            eig: 1e-9,
            map: 1e-8,
            geo: 1e-8,
            fam: 1e-8,
            commute: 1e-10,
        }
    }
}
