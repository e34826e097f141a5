//! opreslab: a desk-scale laboratory for training Fourier neural operators
//! across data resolutions and measuring how they alias.
//!
//! The crate is organized around the lifecycle of a multi-resolution
//! experiment:
//!
//! * [`spectral`] — FFT-based field machinery: band-limit filters, spectral
//!   resampling, radial energy spectra, and the alias-frequency predictor.
//! * [`tensor`] — a reverse-mode automatic differentiation engine over dense
//!   f64 tensors, including differentiable real FFTs and complex mode
//!   arithmetic, plus Adam with decoupled weight decay.
//! * [`generators`] — Darcy-flow and Burgers dataset synthesis, the on-disk
//!   `GridPack` container, and resolution derivation.
//! * [`model`] — the resolution-agnostic FNO, its parameters and checkpoints,
//!   and the fixed-anchor band-limited inference wrapper.
//! * [`training`] — data / physics / dual losses, multi-resolution dataset
//!   composition, and the training loop.
//! * [`diagnostics`] — experiment protocols (interpolation, extrapolation,
//!   cross-resolution, mix sweeps, modes sweeps) and their report files.

pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod generators;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use spectral::GridField;

/// Map-like parallel helper: applies `f` to each index in `0..n`, collecting
/// results in index order. Output is identical with or without the `parallel`
/// feature; only wall time changes.
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
