//! Steady-state 2D Darcy flow: -div(a(x) grad u(x)) = f on the unit square,
//! u = 0 on the boundary, f = 1.
//!
//! Coefficients are two-level fields (a in {3, 12}) set by the sign of a
//! smoothed Gaussian sample. The solve is a second-order five-point stencil
//! with arithmetic-mean face coefficients and Jacobi-preconditioned
//! conjugate gradients. The same stencil backs the physics residual, so the
//! solver's own output has (near-)zero residual by construction.

use crate::error::{Error, Result};
use crate::fft;
use crate::rng::substream;
use crate::spectral::{FieldMeta, GridField};
use crate::tensor::LinearOp;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use std::f64::consts::TAU;

/// Constant forcing term.
pub const FORCING: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct DarcyOptions {
    /// Two-level coefficient values `[low, high]`.
    pub levels: [f64; 2],
    /// Swap which sign gets which level (test hook).
    pub flip_threshold: bool,
    /// Correlation scale of the Gaussian sample before thresholding.
    pub tau: f64,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for DarcyOptions {
    fn default() -> Self {
        DarcyOptions {
            levels: [3.0, 12.0],
            flip_threshold: false,
            tau: 3.0,
            cg_tolerance: 1e-8,
            cg_max_iterations: 20_000,
        }
    }
}

/// One coefficient/solution pair.
#[derive(Debug, Clone)]
pub struct DarcySample {
    pub a: GridField,
    pub u: GridField,
}

/// Thresholded Gaussian random field: smooth Gaussian sample, then two
/// levels by sign.
pub fn coefficient_field(rng: &mut impl Rng, n: usize, opts: &DarcyOptions) -> Vec<f64> {
    let noise: Vec<f64> = (0..n * n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let mut spec = fft::spectrum_2d(&noise, n);
    for ix in 0..n {
        let kx = if 2 * ix < n { ix as f64 } else { ix as f64 - n as f64 };
        for iy in 0..n {
            let ky = if 2 * iy < n { iy as f64 } else { iy as f64 - n as f64 };
            let w = 1.0 / (TAU * TAU * (kx * kx + ky * ky) + opts.tau * opts.tau);
            spec[ix * n + iy] *= Complex64::new(w, 0.0);
        }
    }
    let smooth = fft::real_field(spec, 2, n);
    let (lo, hi) = (opts.levels[0], opts.levels[1]);
    smooth
        .iter()
        .map(|&g| {
            let positive = g >= 0.0;
            if positive != opts.flip_threshold {
                hi
            } else {
                lo
            }
        })
        .collect()
}

/// Applies the five-point operator `-div(a grad u)` on interior nodes.
/// `u` is the full `n x n` grid (boundary included); output is the
/// `(n-2) x (n-2)` interior, row-major.
pub fn apply_operator(a: &[f64], u: &[f64], n: usize) -> Vec<f64> {
    let h = 1.0 / (n as f64 - 1.0);
    let inv_h2 = 1.0 / (h * h);
    let mut out = vec![0.0; (n - 2) * (n - 2)];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let ae = 0.5 * (a[c] + a[c + 1]);
            let aw = 0.5 * (a[c] + a[c - 1]);
            let as_ = 0.5 * (a[c] + a[c + n]);
            let an = 0.5 * (a[c] + a[c - n]);
            let v = ae * (u[c] - u[c + 1])
                + aw * (u[c] - u[c - 1])
                + as_ * (u[c] - u[c + n])
                + an * (u[c] - u[c - n]);
            out[(i - 1) * (n - 2) + (j - 1)] = v * inv_h2;
        }
    }
    out
}

/// Transpose of [`apply_operator`] as a map from interior cotangents back to
/// the full grid.
pub fn apply_operator_transpose(a: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let h = 1.0 / (n as f64 - 1.0);
    let inv_h2 = 1.0 / (h * h);
    let mut out = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let gv = g[(i - 1) * (n - 2) + (j - 1)] * inv_h2;
            let ae = 0.5 * (a[c] + a[c + 1]);
            let aw = 0.5 * (a[c] + a[c - 1]);
            let as_ = 0.5 * (a[c] + a[c + n]);
            let an = 0.5 * (a[c] + a[c - n]);
            out[c] += (ae + aw + as_ + an) * gv;
            out[c + 1] -= ae * gv;
            out[c - 1] -= aw * gv;
            out[c + n] -= as_ * gv;
            out[c - n] -= an * gv;
        }
    }
    out
}

/// The Darcy stencil as a recordable linear tape op (`[1, n, n]` in,
/// `[1, n-2, n-2]` out).
pub struct DarcyStencil {
    pub a: Vec<f64>,
    pub n: usize,
}

impl LinearOp for DarcyStencil {
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape != [1, self.n, self.n] {
            return Err(Error::shape(
                "darcy_stencil",
                format!("expected [1, {0}, {0}], got {in_shape:?}", self.n),
            ));
        }
        Ok(vec![1, self.n - 2, self.n - 2])
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        apply_operator(&self.a, x, self.n)
    }
    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        apply_operator_transpose(&self.a, g, self.n)
    }
    fn name(&self) -> &'static str {
        "darcy_stencil"
    }
}

/// Solves the Dirichlet problem for a given coefficient field, returning the
/// full grid with exact zeros on the boundary ring.
pub fn solve(a: &[f64], n: usize, opts: &DarcyOptions) -> Result<Vec<f64>> {
    let interior = (n - 2) * (n - 2);
    let h = 1.0 / (n as f64 - 1.0);
    let inv_h2 = 1.0 / (h * h);

    // diagonal of the interior operator, for Jacobi preconditioning
    let mut diag = vec![0.0; interior];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let c = i * n + j;
            let sum = 0.5 * (4.0 * a[c] + a[c + 1] + a[c - 1] + a[c + n] + a[c - n]);
            diag[(i - 1) * (n - 2) + (j - 1)] = sum * inv_h2;
        }
    }

    let embed = |v: &[f64]| {
        let mut full = vec![0.0; n * n];
        for i in 1..n - 1 {
            full[i * n + 1..i * n + n - 1].copy_from_slice(&v[(i - 1) * (n - 2)..i * (n - 2)]);
        }
        full
    };
    let apply = |v: &[f64]| apply_operator(a, &embed(v), n);

    let b = vec![FORCING; interior];
    let b_norm = (interior as f64).sqrt() * FORCING;
    let mut x = vec![0.0; interior];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(rv, d)| rv / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();

    for _ in 0..opts.cg_max_iterations {
        let q = apply(&p);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        let alpha = rz / pq;
        for k in 0..interior {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm / b_norm < opts.cg_tolerance {
            return Ok(embed(&x));
        }
        for k in 0..interior {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..interior {
            p[k] = z[k] + beta * p[k];
        }
    }
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::Numerical(format!(
        "darcy CG did not reach {} within {} iterations (relative residual {:.3e})",
        opts.cg_tolerance,
        opts.cg_max_iterations,
        r_norm / b_norm
    )))
}

/// Generates `count` coefficient/solution pairs at `master_res`. Each sample
/// draws from its own seed substream, so output is identical however the
/// work is distributed.
pub fn gen_darcy_with(
    count: usize,
    master_res: usize,
    seed: u64,
    opts: &DarcyOptions,
) -> Result<Vec<DarcySample>> {
    if master_res < 16 {
        return Err(Error::Usage(format!(
            "darcy master resolution must be >= 16, got {master_res}"
        )));
    }
    let samples = crate::par_map_indexed(count, |i| -> Result<DarcySample> {
        let mut rng = substream(seed, &format!("darcy/sample/{i}"));
        let a = coefficient_field(&mut rng, master_res, opts);
        let u = solve(&a, master_res, opts)?;
        let meta = FieldMeta {
            pde: Some("darcy".to_string()),
            lowpass_limit: None,
        };
        Ok(DarcySample {
            a: GridField::new(2, master_res, a)?.with_meta(meta.clone()),
            u: GridField::new(2, master_res, u)?.with_meta(meta),
        })
    });
    samples.into_iter().collect()
}

pub fn gen_darcy(count: usize, master_res: usize, seed: u64) -> Result<Vec<DarcySample>> {
    gen_darcy_with(count, master_res, seed, &DarcyOptions::default())
}
