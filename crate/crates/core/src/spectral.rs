//! Fourier-domain field machinery: alias prediction, brick-wall low-pass
//! filtering, spectral resampling, and radially binned energy spectra.
//!
//! Frequencies are integer wavenumbers (cycles per domain) on the unit
//! interval / square. A grid of resolution `r` resolves wavenumbers up to
//! `r/2`; content above that folds back onto lower bins ([`alias_of`]).

use crate::error::{Error, Result};
use crate::fft;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One sample of a physical field on a regular 1D or 2D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    /// 1 or 2.
    pub dims: usize,
    /// Samples per axis (uniform grid on the unit interval / square).
    pub resolution: usize,
    /// Row-major values, `resolution^dims` of them.
    pub values: Vec<f64>,
    pub meta: FieldMeta,
}

/// Provenance carried along with a field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub pde: Option<String>,
    pub lowpass_limit: Option<usize>,
}

impl GridField {
    pub fn new(dims: usize, resolution: usize, values: Vec<f64>) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::Usage(format!("GridField dims must be 1 or 2, got {dims}")));
        }
        let expect = resolution.pow(dims as u32);
        if values.len() != expect {
            return Err(Error::Usage(format!(
                "GridField needs {expect} values for resolution {resolution}^{dims}, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("GridField contains non-finite value {bad}")));
        }
        Ok(GridField {
            dims,
            resolution,
            values,
            meta: FieldMeta::default(),
        })
    }

    pub fn with_meta(mut self, meta: FieldMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Full unitary spectrum, row-major for 2D.
    pub fn spectrum(&self) -> Vec<Complex64> {
        match self.dims {
            1 => fft::spectrum_1d(&self.values),
            _ => fft::spectrum_2d(&self.values, self.resolution),
        }
    }

    fn from_spectrum(&self, spectrum: Vec<Complex64>, resolution: usize) -> GridField {
        GridField {
            dims: self.dims,
            resolution,
            values: fft::real_field(spectrum, self.dims, resolution),
            meta: self.meta.clone(),
        }
    }
}

/// Radially binned energy spectra averaged over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Wavenumber bins `0..=K` with `K = resolution/2`.
    pub modes: Vec<usize>,
    pub label_energy: Vec<f64>,
    pub pred_energy: Vec<f64>,
    pub residual_energy: Vec<f64>,
    /// `residual_energy[k] / label_energy[k]`, absent where the label bin is
    /// exactly zero.
    pub normalized_residual: Vec<Option<f64>>,
    pub n_samples: usize,
}

impl SpectrumReport {
    /// Sum of the normalized residual over `bins` (inclusive indices that
    /// exist in the report); absent bins contribute nothing.
    pub fn integrated_normalized(&self, lo: usize, hi: usize) -> f64 {
        self.normalized_residual
            .iter()
            .enumerate()
            .filter(|(k, _)| *k >= lo && *k <= hi)
            .filter_map(|(_, v)| *v)
            .sum()
    }
}

/// Signed frequency of FFT index `i` on a grid of `n` points, in
/// `[-n/2, n/2)`.
fn signed_freq(i: usize, n: usize) -> i64 {
    if 2 * i < n {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// The frequency a pure tone of wavenumber `n` is observed at when sampled
/// at rate `r`: `n mod r` below the fold, reflected above it. The boundary
/// `n mod r = r/2` maps to `r/2`, the Nyquist fixed point.
pub fn alias_of(n: usize, r: usize) -> Result<usize> {
    if r < 2 {
        return Err(Error::Usage(format!("sampling rate must be >= 2, got {r}")));
    }
    let m = n % r;
    if 2 * m <= r {
        Ok(m)
    } else {
        Ok(r - m)
    }
}

/// Zeroes every Fourier coefficient with any axis wavenumber magnitude above
/// `limit`; everything at or below is untouched. Square (per-axis) band in
/// 2D, so a later stride subsample stays exact.
pub fn lowpass(field: &GridField, limit: usize) -> Result<GridField> {
    let n = field.resolution;
    if 2 * limit > n {
        return Err(Error::Usage(format!(
            "low-pass limit {limit} exceeds Nyquist {} of resolution {n}: nothing to remove",
            n / 2
        )));
    }
    // A field already marked at or below the limit has nothing left to
    // remove; passing it through unchanged keeps the filter exactly
    // idempotent (an FFT round trip would perturb the last bits).
    if matches!(field.meta.lowpass_limit, Some(l) if l <= limit) {
        return Ok(field.clone());
    }
    let mut spec = field.spectrum();
    let keep = |i: usize| signed_freq(i, n).unsigned_abs() as usize <= limit;
    match field.dims {
        1 => {
            for (i, c) in spec.iter_mut().enumerate() {
                if !keep(i) {
                    *c = Complex64::default();
                }
            }
        }
        _ => {
            for ix in 0..n {
                for iy in 0..n {
                    if !(keep(ix) && keep(iy)) {
                        spec[ix * n + iy] = Complex64::default();
                    }
                }
            }
        }
    }
    let mut out = field.from_spectrum(spec, n);
    out.meta.lowpass_limit = Some(limit);
    Ok(out)
}

/// Signed frequencies an FFT index stands for once the Nyquist bin is
/// unfolded: for even `n`, index `n/2` is half `+n/2` and half `-n/2`.
fn unfold(i: usize, n: usize) -> Vec<(i64, f64)> {
    if n % 2 == 0 && i == n / 2 {
        vec![(n as i64 / 2, 0.5), (-(n as i64) / 2, 0.5)]
    } else {
        vec![(signed_freq(i, n), 1.0)]
    }
}

/// Target FFT index of signed frequency `s` on an `n`-point grid; `None` if
/// the mode falls outside the band. `±n/2` both fold onto index `n/2`.
fn fold(s: i64, n: usize) -> Option<usize> {
    let n_i = n as i64;
    if 2 * s.abs() < n_i {
        Some(s.rem_euclid(n_i) as usize)
    } else if 2 * s.abs() == n_i {
        Some(n / 2)
    } else {
        None
    }
}

/// Spectral resampling to `new_resolution`: truncate or zero-pad the mode
/// set, preserving mode amplitudes. For fields band-limited below the new
/// Nyquist this is exact interpolation; downsampling a filtered field equals
/// point subsampling.
pub fn resample(field: &GridField, new_resolution: usize) -> Result<GridField> {
    if new_resolution < 2 {
        return Err(Error::Usage(format!(
            "target resolution must be >= 2, got {new_resolution}"
        )));
    }
    let m = field.resolution;
    let n = new_resolution;
    if n == m {
        return Ok(field.clone());
    }
    let spec = field.spectrum();
    // Unitary spectra scale with sqrt(resolution) per axis at fixed amplitude.
    let scale = (n as f64 / m as f64).sqrt().powi(field.dims as i32);
    let mut out = vec![Complex64::default(); n.pow(field.dims as u32)];
    match field.dims {
        1 => {
            for (i, &c) in spec.iter().enumerate() {
                for (s, w) in unfold(i, m) {
                    if let Some(j) = fold(s, n) {
                        out[j] += c * w * scale;
                    }
                }
            }
        }
        _ => {
            for ix in 0..m {
                for iy in 0..m {
                    let c = spec[ix * m + iy];
                    for (sx, wx) in unfold(ix, m) {
                        for (sy, wy) in unfold(iy, m) {
                            if let (Some(jx), Some(jy)) = (fold(sx, n), fold(sy, n)) {
                                out[jx * n + jy] += c * wx * wy * scale;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut resampled = field.from_spectrum(out, n);
    // Truncation can only tighten a recorded band limit.
    if let Some(l) = resampled.meta.lowpass_limit {
        resampled.meta.lowpass_limit = Some(l.min(n / 2));
    }
    Ok(resampled)
}

/// Per-bin spectral energy, bins `0..=resolution/2`.
///
/// 1D: `energy[k] = |u_k|^2` with the conjugate pair folded in. 2D: radial
/// shells `round(sqrt(kx^2+ky^2)) = k`. Coefficients carry the amplitude
/// normalization (forward DFT over point count), so the bins of a unit-
/// amplitude tone sum to 1/2 and Parseval reads
/// `sum_k energy[k] = mean(u^2)`.
pub fn energy_spectrum(field: &GridField) -> Vec<f64> {
    let n = field.resolution;
    let n_total = field.len() as f64;
    let spec = field.spectrum();
    let mut bins = vec![0.0; n / 2 + 1];
    match field.dims {
        1 => {
            for (i, c) in spec.iter().enumerate() {
                let k = signed_freq(i, n).unsigned_abs() as usize;
                if k < bins.len() {
                    bins[k] += c.norm_sqr() / n_total;
                }
            }
        }
        _ => {
            for ix in 0..n {
                let kx = signed_freq(ix, n) as f64;
                for iy in 0..n {
                    let ky = signed_freq(iy, n) as f64;
                    let k = (kx.hypot(ky)).round() as usize;
                    if k < bins.len() {
                        bins[k] += spec[ix * n + iy].norm_sqr() / n_total;
                    }
                }
            }
        }
    }
    bins
}

/// Energy outside the square band kept by [`lowpass`]: modes with any axis
/// wavenumber magnitude above `limit`. Note the distinction from radial
/// bins: a 2D mode like `(limit, limit)` is inside the square band but
/// lands in a radial bin above `limit`.
pub fn outband_energy(field: &GridField, limit: usize) -> f64 {
    let n = field.resolution;
    let n_total = field.len() as f64;
    let spec = field.spectrum();
    let out = |i: usize| signed_freq(i, n).unsigned_abs() as usize > limit;
    match field.dims {
        1 => spec
            .iter()
            .enumerate()
            .filter(|(i, _)| out(*i))
            .map(|(_, c)| c.norm_sqr() / n_total)
            .sum(),
        _ => {
            let mut acc = 0.0;
            for ix in 0..n {
                for iy in 0..n {
                    if out(ix) || out(iy) {
                        acc += spec[ix * n + iy].norm_sqr() / n_total;
                    }
                }
            }
            acc
        }
    }
}

/// Total spectral energy, `mean(u^2)` under the chosen normalization.
pub fn total_energy(field: &GridField) -> f64 {
    field.values.iter().map(|v| v * v).sum::<f64>() / field.len() as f64
}

/// Averages label, prediction, and residual spectra over a test set.
pub fn spectrum_report(preds: &[GridField], labels: &[GridField]) -> Result<SpectrumReport> {
    if preds.len() != labels.len() {
        return Err(Error::Data(format!(
            "spectrum report needs matching counts, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("spectrum report needs at least one sample".into()));
    }
    let res = labels[0].resolution;
    let dims = labels[0].dims;
    for (i, (p, l)) in preds.iter().zip(labels).enumerate() {
        if p.resolution != l.resolution || p.resolution != res || p.dims != dims || l.dims != dims {
            return Err(Error::Data(format!(
                "sample {i}: prediction {}^{} vs label {}^{} (report resolution {res}^{dims})",
                p.resolution, p.dims, l.resolution, l.dims
            )));
        }
    }
    let nbins = res / 2 + 1;
    let mut label_energy = vec![0.0; nbins];
    let mut pred_energy = vec![0.0; nbins];
    let mut residual_energy = vec![0.0; nbins];
    for (p, l) in preds.iter().zip(labels) {
        let resid = GridField {
            dims,
            resolution: res,
            values: p.values.iter().zip(&l.values).map(|(a, b)| a - b).collect(),
            meta: FieldMeta::default(),
        };
        for (acc, e) in label_energy.iter_mut().zip(energy_spectrum(l)) {
            *acc += e;
        }
        for (acc, e) in pred_energy.iter_mut().zip(energy_spectrum(p)) {
            *acc += e;
        }
        for (acc, e) in residual_energy.iter_mut().zip(energy_spectrum(&resid)) {
            *acc += e;
        }
    }
    let count = preds.len() as f64;
    for v in label_energy
        .iter_mut()
        .chain(pred_energy.iter_mut())
        .chain(residual_energy.iter_mut())
    {
        *v /= count;
    }
    let normalized_residual = residual_energy
        .iter()
        .zip(&label_energy)
        .map(|(&r, &l)| if l > 0.0 { Some(r / l) } else { None })
        .collect();
    Ok(SpectrumReport {
        modes: (0..nbins).collect(),
        label_energy,
        pred_energy,
        residual_energy,
        normalized_residual,
        n_samples: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    pub fn sine_field(res: usize, k: f64) -> GridField {
        let values = (0..res).map(|j| (TAU * k * j as f64 / res as f64).sin()).collect();
        GridField::new(1, res, values).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn alias_matches_closed_form() {
        assert_eq!(alias_of(20, 16).unwrap(), 4);
        assert_eq!(alias_of(9, 16).unwrap(), 7);
        assert_eq!(alias_of(5, 16).unwrap(), 5);
        // fold boundary maps to the Nyquist fixed point
        assert_eq!(alias_of(24, 16).unwrap(), 8);
        assert!(alias_of(3, 1).is_err());
    }

    #[test]
    fn alias_fixed_points_below_nyquist() {
        for r in [8usize, 16, 32] {
            for n in 0..r / 2 {
                assert_eq!(alias_of(n, r).unwrap(), n, "n={n} r={r}");
            }
        }
    }

    /// First index holding the maximum, so an all-zero spectrum peaks at 0.
    fn peak_bin(bins: &[f64]) -> usize {
        let mut best = 0;
        for (k, &e) in bins.iter().enumerate() {
            if e > bins[best] {
                best = k;
            }
        }
        best
    }

    /// Brute-force oracle: the peak spectrum bin of a sampled tone is its
    /// alias. Sines that sample to (roundoff-level) zeros are excluded:
    /// multiples of the rate, and tones folding exactly onto the Nyquist.
    #[test]
    fn alias_against_fft_peak_oracle() {
        for r in [8usize, 16, 32] {
            for n in 0..=3 * r {
                if n % r == 0 || 2 * (n % r) == r {
                    continue;
                }
                let field = sine_field(r, n as f64);
                let bins = energy_spectrum(&field);
                let peak = peak_bin(&bins);
                assert_eq!(peak, alias_of(n, r).unwrap(), "n={n} r={r} bins={bins:?}");
            }
        }
    }

    #[test]
    fn lowpass_keeps_inband_tone() {
        let field = sine_field(128, 3.0);
        let filtered = lowpass(&field, 8).unwrap();
        assert!(max_abs_diff(&field.values, &filtered.values) < 1e-10);
        assert_eq!(filtered.meta.lowpass_limit, Some(8));
    }

    #[test]
    fn lowpass_removes_outband_tone() {
        let field = sine_field(128, 12.0);
        let filtered = lowpass(&field, 8).unwrap();
        assert!(filtered.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn lowpass_splits_mixture() {
        let lo = sine_field(128, 3.0);
        let mix = GridField::new(
            1,
            128,
            lo.values
                .iter()
                .zip(&sine_field(128, 12.0).values)
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let filtered = lowpass(&mix, 8).unwrap();
        assert!(max_abs_diff(&filtered.values, &lo.values) < 1e-10);
    }

    #[test]
    fn lowpass_rejects_limit_above_nyquist() {
        let field = sine_field(16, 2.0);
        assert!(lowpass(&field, 9).is_err());
        assert!(lowpass(&field, 8).is_ok());
    }

    #[test]
    fn lowpass_idempotent_2d() {
        let n = 32;
        let values: Vec<f64> = (0..n * n)
            .map(|j| {
                let (r, c) = ((j / n) as f64, (j % n) as f64);
                (TAU * 3.0 * r / n as f64).sin() + (TAU * 13.0 * c / n as f64).cos()
            })
            .collect();
        let field = GridField::new(2, n, values).unwrap();
        let once = lowpass(&field, 5).unwrap();
        let twice = lowpass(&once, 5).unwrap();
        assert_eq!(once.values, twice.values);
    }

    #[test]
    fn resample_preserves_constant() {
        let field = GridField::new(1, 64, vec![1.0; 64]).unwrap();
        for target in [16, 32, 128] {
            let out = resample(&field, target).unwrap();
            assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-12), "target {target}");
        }
    }

    #[test]
    fn resample_roundtrip_band_limited() {
        let field = sine_field(128, 4.0);
        let down = resample(&field, 32).unwrap();
        let back = resample(&down, 128).unwrap();
        assert!(max_abs_diff(&field.values, &back.values) < 1e-10);
    }

    #[test]
    fn downsample_of_filtered_field_is_subsampling_2d() {
        let n = 128;
        let target = 16;
        // deterministic rough field, then brick-wall at the new Nyquist
        let values: Vec<f64> = (0..n * n).map(|j| ((j * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect();
        let field = lowpass(&GridField::new(2, n, values).unwrap(), 8).unwrap();
        let down = resample(&field, target).unwrap();
        let stride = n / target;
        let mut worst = 0.0f64;
        for r in 0..target {
            for c in 0..target {
                let direct = field.values[(r * stride) * n + c * stride];
                worst = worst.max((down.values[r * target + c] - direct).abs());
            }
        }
        assert!(worst < 1e-10, "max deviation {worst}");
    }

    #[test]
    fn spectrum_concentrates_on_tone() {
        let bins = energy_spectrum(&sine_field(64, 5.0));
        let peak = bins[5];
        assert!(peak > 0.0);
        for (k, &e) in bins.iter().enumerate() {
            if k != 5 {
                assert!(e < 1e-12 * peak, "bin {k} leaked {e}");
            }
        }
    }

    #[test]
    fn spectrum_of_zero_field_is_zero() {
        let field = GridField::new(2, 16, vec![0.0; 256]).unwrap();
        assert!(energy_spectrum(&field).iter().all(|&e| e == 0.0));
    }

    #[test]
    fn parseval_for_noise_1d() {
        let n = 256;
        let values: Vec<f64> = (0..n).map(|j| (((j * 48271 + 11) % 2048) as f64) / 1024.0 - 1.0).collect();
        let field = GridField::new(1, n, values).unwrap();
        let total: f64 = energy_spectrum(&field).iter().sum();
        let direct: f64 = field.values.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((total - direct).abs() < 1e-10 * direct, "bins={total} direct={direct}");
    }

    #[test]
    fn report_zero_residual_when_equal() {
        let fields = vec![sine_field(64, 3.0), sine_field(64, 5.0)];
        let report = spectrum_report(&fields, &fields).unwrap();
        assert!(report.residual_energy.iter().all(|&e| e < 1e-24));
        assert_eq!(report.n_samples, 2);
    }

    #[test]
    fn report_residual_peaks_at_injected_tone() {
        let labels = vec![sine_field(64, 3.0)];
        let preds = vec![GridField::new(
            1,
            64,
            labels[0]
                .values
                .iter()
                .zip(&sine_field(64, 9.0).values)
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap()];
        let report = spectrum_report(&preds, &labels).unwrap();
        let peak = report.residual_energy[9];
        assert!(peak > 0.1);
        for (k, &e) in report.residual_energy.iter().enumerate() {
            if k != 9 {
                assert!(e < 1e-12 * peak, "bin {k} residual {e}");
            }
        }
    }

    #[test]
    fn report_normalized_absent_for_exactly_zero_label() {
        let labels = vec![GridField::new(1, 64, vec![0.0; 64]).unwrap()];
        let preds = vec![sine_field(64, 9.0)];
        let report = spectrum_report(&preds, &labels).unwrap();
        assert!(report.residual_energy[9] > 0.1);
        assert!(report.normalized_residual.iter().all(|v| v.is_none()));
    }

    #[test]
    fn report_average_is_mean_of_singletons() {
        let labels = vec![sine_field(64, 3.0), sine_field(64, 7.0)];
        let preds = vec![sine_field(64, 4.0), sine_field(64, 6.0)];
        let joint = spectrum_report(&preds, &labels).unwrap();
        let a = spectrum_report(&preds[..1], &labels[..1]).unwrap();
        let b = spectrum_report(&preds[1..], &labels[1..]).unwrap();
        for k in 0..joint.modes.len() {
            let mean = 0.5 * (a.residual_energy[k] + b.residual_energy[k]);
            assert!((joint.residual_energy[k] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn report_rejects_count_mismatch() {
        let fields = vec![sine_field(64, 3.0)];
        assert!(spectrum_report(&fields, &[]).is_err());
    }
}
