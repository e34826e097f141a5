//! Unitary FFT primitives over raw buffers.
//!
//! All transforms here scale by `1/sqrt(N)` per axis in both directions, so
//! forward and inverse are exact adjoints of each other and composing them
//! is the identity. Plans are cached globally; transforms are safe to call
//! from multiple threads.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place unitary 1D FFT.
pub fn fft_inplace(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    plan(n, inverse).process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// In-place unitary 2D FFT of a row-major `rows x cols` buffer.
pub fn fft2_inplace(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    assert_eq!(buf.len(), rows * cols, "fft2 buffer size");
    for r in 0..rows {
        fft_inplace(&mut buf[r * cols..(r + 1) * cols], inverse);
    }
    let mut col = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = buf[r * cols + c];
        }
        fft_inplace(&mut col, inverse);
        for r in 0..rows {
            buf[r * cols + c] = col[r];
        }
    }
}

/// Full unitary spectrum of a real 1D signal.
pub fn spectrum_1d(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_inplace(&mut buf, false);
    buf
}

/// Full unitary spectrum of a real 2D field (`n x n`, row-major).
pub fn spectrum_2d(values: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_inplace(&mut buf, n, n, false);
    buf
}

/// Inverse of [`spectrum_1d`] / [`spectrum_2d`], discarding the imaginary
/// residue (callers guarantee Hermitian symmetry).
pub fn real_field(mut spectrum: Vec<Complex64>, dims: usize, n: usize) -> Vec<f64> {
    match dims {
        1 => fft_inplace(&mut spectrum, true),
        2 => fft2_inplace(&mut spectrum, n, n, true),
        d => panic!("unsupported dims {d}"),
    }
    spectrum.into_iter().map(|c| c.re).collect()
}

/// Half-spectrum length of a real 1D transform.
pub fn half_len(n: usize) -> usize {
    n / 2 + 1
}

/// Unitary real FFT, keeping bins `0..=n/2`.
pub fn rfft_1d(values: &[f64]) -> Vec<Complex64> {
    let full = spectrum_1d(values);
    full[..half_len(values.len())].to_vec()
}

/// Hermitian-extends `half` to a full spectrum of length `n`.
pub fn hermitian_extend_1d(half: &[Complex64], n: usize) -> Vec<Complex64> {
    assert_eq!(half.len(), half_len(n), "half spectrum length");
    let mut full = vec![Complex64::default(); n];
    full[..half.len()].copy_from_slice(half);
    for k in 1..n.div_ceil(2) {
        full[n - k] = half[k].conj();
    }
    full
}

/// Inverse unitary real FFT from bins `0..=n/2`.
pub fn irfft_1d(half: &[Complex64], n: usize) -> Vec<f64> {
    real_field(hermitian_extend_1d(half, n), 1, n)
}

/// Unitary 2D real FFT of an `n x n` field: full rows axis, halved column
/// axis, row-major `[n][n/2+1]`.
pub fn rfft_2d(values: &[f64], n: usize) -> Vec<Complex64> {
    let full = spectrum_2d(values, n);
    let hc = half_len(n);
    let mut out = Vec::with_capacity(n * hc);
    for kx in 0..n {
        out.extend_from_slice(&full[kx * n..kx * n + hc]);
    }
    out
}

/// Hermitian-extends an `[n][n/2+1]` half spectrum to the full `n x n` grid:
/// `full[kx][ky] = conj(half[(n-kx)%n][n-ky])` for `ky > n/2`.
pub fn hermitian_extend_2d(half: &[Complex64], n: usize) -> Vec<Complex64> {
    let hc = half_len(n);
    assert_eq!(half.len(), n * hc, "half spectrum size");
    let mut full = vec![Complex64::default(); n * n];
    for kx in 0..n {
        full[kx * n..kx * n + hc].copy_from_slice(&half[kx * hc..(kx + 1) * hc]);
        for ky in hc..n {
            let sx = (n - kx) % n;
            let sy = n - ky;
            full[kx * n + ky] = half[sx * hc + sy].conj();
        }
    }
    full
}

/// Inverse of [`rfft_2d`].
pub fn irfft_2d(half: &[Complex64], n: usize) -> Vec<f64> {
    real_field(hermitian_extend_2d(half, n), 2, n)
}
