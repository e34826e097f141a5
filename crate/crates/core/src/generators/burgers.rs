//! 1D viscous Burgers on the periodic unit interval:
//! `du/dt + d(u^2/2)/dx = (nu/pi) d2u/dx2`.
//!
//! Pseudo-spectral in space with 2/3-rule dealiasing of the quadratic term,
//! exact integrating factor for diffusion, and explicit RK4 for advection.
//! The conservative flux form keeps the mean of `u` fixed exactly when
//! `nu = 0` (the k = 0 advection coefficient vanishes identically).

use crate::error::{Error, Result};
use crate::fft;
use crate::rng::substream;
use crate::spectral::{FieldMeta, GridField};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use std::f64::consts::TAU;

#[derive(Debug, Clone)]
pub struct BurgersOptions {
    /// Diffusion constant; the equation carries it as `nu/pi`.
    pub nu: f64,
    pub terminal_time: f64,
    /// Advective CFL fraction used to pick the step count.
    pub cfl: f64,
    /// Fixed step count (overrides the CFL choice; refinement-test hook).
    pub n_steps: Option<usize>,
    /// Advection on/off (diffusion-only test hook).
    pub advection: bool,
    /// Initial conditions populate wavenumbers `1..=max_wavenumber`.
    pub max_wavenumber: usize,
    /// Scale of the initial-condition amplitudes.
    pub amplitude: f64,
}

impl Default for BurgersOptions {
    fn default() -> Self {
        BurgersOptions {
            nu: 1e-3,
            terminal_time: 1.0,
            cfl: 0.4,
            n_steps: None,
            advection: true,
            max_wavenumber: 8,
            amplitude: 1.0,
        }
    }
}

/// One initial/terminal state pair.
#[derive(Debug, Clone)]
pub struct BurgersSample {
    pub u0: GridField,
    pub u_t: GridField,
}

/// Random superposition of low-wavenumber sinusoids with amplitudes
/// decaying as `1/k^2`.
pub fn initial_condition(rng: &mut impl Rng, n: usize, opts: &BurgersOptions) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for k in 1..=opts.max_wavenumber {
        let scale = opts.amplitude / (k * k) as f64;
        let a = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * scale;
        let b = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * scale;
        for (j, v) in u.iter_mut().enumerate() {
            let phase = TAU * (k * j) as f64 / n as f64;
            *v += a * phase.sin() + b * phase.cos();
        }
    }
    u
}

fn signed_k(i: usize, n: usize) -> f64 {
    if 2 * i < n {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Integrates one initial state to `terminal_time`.
pub fn solve_burgers(u0: &[f64], opts: &BurgersOptions) -> Result<Vec<f64>> {
    let n = u0.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::Usage(format!("burgers grid must be even and >= 4, got {n}")));
    }
    let t_final = opts.terminal_time;
    if t_final <= 0.0 {
        return Err(Error::Usage(format!("terminal time must be positive, got {t_final}")));
    }
    let max_u = u0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let n_steps = opts.n_steps.unwrap_or_else(|| {
        let dt_cfl = opts.cfl / (n as f64 * max_u);
        (t_final / dt_cfl).ceil() as usize
    });
    let n_steps = n_steps.max(1);
    let dt = t_final / n_steps as f64;

    // diffusion symbol and its half/full-step integrating factors
    let lambda: Vec<f64> = (0..n)
        .map(|i| {
            let k = signed_k(i, n);
            -(opts.nu / std::f64::consts::PI) * (TAU * k) * (TAU * k)
        })
        .collect();
    let e_half: Vec<f64> = lambda.iter().map(|l| (l * dt / 2.0).exp()).collect();
    let e_full: Vec<f64> = lambda.iter().map(|l| (l * dt).exp()).collect();

    // 2/3-rule mask: zero |k| >= n/3 before and after squaring
    let dealias: Vec<bool> = (0..n).map(|i| 3.0 * signed_k(i, n).abs() < n as f64).collect();
    // conservative advection: -ik pi2 * (u^2/2)^, Nyquist zeroed
    let flux_symbol: Vec<Complex64> = (0..n)
        .map(|i| {
            if 2 * i == n {
                Complex64::default()
            } else {
                Complex64::new(0.0, -TAU * signed_k(i, n) * 0.5)
            }
        })
        .collect();

    let nonlinear = |v_hat: &[Complex64]| -> Vec<Complex64> {
        if !opts.advection {
            return vec![Complex64::default(); n];
        }
        let mut w = v_hat.to_vec();
        for (c, &keep) in w.iter_mut().zip(&dealias) {
            if !keep {
                *c = Complex64::default();
            }
        }
        fft::fft_inplace(&mut w, true);
        // w now holds the band-limited field as complex; square pointwise
        let sq: Vec<f64> = w.iter().map(|c| c.re * c.re).collect();
        let mut sq_hat = fft::spectrum_1d(&sq);
        for ((c, &keep), sym) in sq_hat.iter_mut().zip(&dealias).zip(&flux_symbol) {
            *c = if keep { *c * *sym } else { Complex64::default() };
        }
        sq_hat
    };

    let mut v = fft::spectrum_1d(u0);
    let mut a = vec![Complex64::default(); n];
    let mut stage = vec![Complex64::default(); n];
    for step in 0..n_steps {
        let na = nonlinear(&v);
        for i in 0..n {
            a[i] = na[i] * dt;
            stage[i] = e_half[i] * (v[i] + a[i] * 0.5);
        }
        let nb = nonlinear(&stage);
        for i in 0..n {
            stage[i] = e_half[i] * v[i] + nb[i] * dt * 0.5;
        }
        let nc = nonlinear(&stage);
        for i in 0..n {
            stage[i] = e_full[i] * v[i] + e_half[i] * nc[i] * dt;
        }
        let nd = nonlinear(&stage);
        for i in 0..n {
            let b = nb[i] * dt;
            let c = nc[i] * dt;
            let d = nd[i] * dt;
            v[i] = e_full[i] * v[i]
                + (e_full[i] * a[i] + (b + c) * 2.0 * e_half[i] + d) / 6.0;
        }
        if !v[0].re.is_finite() || !v[n / 2].re.is_finite() {
            return Err(Error::Numerical(format!(
                "burgers integration produced non-finite values at step {} of {n_steps}",
                step + 1
            )));
        }
    }
    let out = fft::real_field(v, 1, n);
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "burgers terminal state is non-finite ({bad}) after {n_steps} steps"
        )));
    }
    Ok(out)
}

/// Generates `count` initial/terminal pairs at `master_res`, one seed
/// substream per sample index.
pub fn gen_burgers_with(
    count: usize,
    master_res: usize,
    seed: u64,
    opts: &BurgersOptions,
) -> Result<Vec<BurgersSample>> {
    if master_res < 128 {
        return Err(Error::Usage(format!(
            "burgers master resolution must be >= 128, got {master_res}"
        )));
    }
    let samples = crate::par_map_indexed(count, |i| -> Result<BurgersSample> {
        let mut rng = substream(seed, &format!("burgers/sample/{i}"));
        let u0 = initial_condition(&mut rng, master_res, opts);
        let u_t = solve_burgers(&u0, opts)?;
        let meta = FieldMeta {
            pde: Some("burgers".to_string()),
            lowpass_limit: None,
        };
        Ok(BurgersSample {
            u0: GridField::new(1, master_res, u0)?.with_meta(meta.clone()),
            u_t: GridField::new(1, master_res, u_t)?.with_meta(meta),
        })
    });
    samples.into_iter().collect()
}

pub fn gen_burgers(count: usize, master_res: usize, t: f64, seed: u64) -> Result<Vec<BurgersSample>> {
    let opts = BurgersOptions {
        terminal_time: t,
        ..Default::default()
    };
    gen_burgers_with(count, master_res, seed, &opts)
}
