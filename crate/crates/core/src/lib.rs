//! Distortion-perception tradeoff toolkit for MSE distortion and
//! Wasserstein-2 perception.
//!
//! * [`linalg`]: symmetric-matrix calculus (PSD roots, pseudo-inverses).
//! * [`gaussian`]: Gelbrich distance, Gaussian transport maps and geodesics.
//! * [`tradeoff`]: the DP curve and closed-form optimal estimators for
//!   jointly Gaussian models.
//! * [`oracle`]: exact discrete optimal transport used to cross-check the
//!   closed forms.
//! * [`empirical`]: patch statistics and DP-plane evaluation of image
//!   restoration outputs.
//! * [`cli`]: the `dp` command-line front end.

pub mod cli;
pub mod empirical;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod pnm;
pub mod random;
pub mod selftest;
pub mod tolerance;
pub mod tradeoff;

pub use error::{Error, Result};
pub use linalg::SymMatrix;
pub use tolerance::Tolerances;
