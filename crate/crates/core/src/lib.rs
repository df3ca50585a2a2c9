//! Frequency-resolved dependence between groups of multivariate time
//! series, split exactly into instantaneous and lagged parts.
//!
//! The pipeline: segment a recording ([`ingest`]), Fourier-transform it
//! ([`spectral`]), average outer products into Hermitian cross-spectra per
//! frequency or band ([`crossspectra`]), and evaluate determinant-ratio
//! dependence measures ([`measures`]) with asymptotic chi-square tests
//! ([`inference`]). Linear measures (coherence-type) run on raw spectra;
//! nonlinear measures (phase-synchronization-type) run on
//! amplitude-normalized spectra. In both families
//!
//! ```text
//! total = lagged + instantaneous
//! ```
//!
//! where the instantaneous part is exactly the dependence carried by the
//! real part of the cross-spectrum, equivalently the zero-lag time-domain
//! covariance of the bin-filtered signals. Zero-lag mixing of a common
//! source into several sensors (volume conduction) inflates only that
//! instantaneous part, so the lagged remainder is the quantity of interest
//! for connectivity; [`simulate`] reproduces the confound for calibration
//! and verification.

pub mod cli;
pub mod crossspectra;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod mat;
pub mod measures;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
