//! Interactive browser demo over the core spectral toolkit.
//!
//! Three operations, each returning a JSON payload the page renders on
//! canvases:
//!
//! * [`alias_demo`] — pick a tone frequency and sampling rate, see the
//!   sampled points land exactly on the folded alias tone.
//! * [`filter_resample_demo`] — brick-wall low-pass plus spectral
//!   resampling of a seeded random signal, with per-stage energy spectra.
//! * [`burgers_demo`] — integrate a random initial state through the
//!   viscous Burgers equation and compare initial/terminal spectra.
//!
//! Build with `wasm-pack build crates/demo --target web` (or
//! `cargo build --target wasm32-unknown-unknown` plus `wasm-bindgen`);
//! `www/index.html` is the page.

use opreslab::generators::burgers::{initial_condition, solve_burgers, BurgersOptions};
use opreslab::rng::substream;
use opreslab::spectral::{alias_of, energy_spectrum, lowpass, resample, GridField};
use serde::Serialize;
use std::f64::consts::TAU;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct AliasDemo {
    /// Folded frequency for every integer tone `0..=n_max`.
    alias_curve: Vec<usize>,
    /// Dense rendering of the true tone.
    fine_x: Vec<f64>,
    fine_y: Vec<f64>,
    /// The `r` sample points.
    sample_x: Vec<f64>,
    sample_y: Vec<f64>,
    /// Dense rendering of the folded tone the samples actually trace.
    alias_y: Vec<f64>,
    alias_freq: usize,
    folded: bool,
}

/// Tone of wavenumber `n` sampled at rate `r`, plus the alias it folds onto.
#[wasm_bindgen]
pub fn alias_demo(n: u32, r: u32, n_max: u32) -> Result<String, JsError> {
    let a = alias_of(n as usize, r as usize).map_err(to_js)?;
    let alias_curve = (0..=n_max)
        .map(|k| alias_of(k as usize, r as usize))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_js)?;
    let fine = 512usize;
    let fine_x: Vec<f64> = (0..=fine).map(|j| j as f64 / fine as f64).collect();
    let fine_y: Vec<f64> = fine_x.iter().map(|&x| (TAU * n as f64 * x).sin()).collect();
    let sample_x: Vec<f64> = (0..r).map(|j| j as f64 / r as f64).collect();
    let sample_y: Vec<f64> = sample_x.iter().map(|&x| (TAU * n as f64 * x).sin()).collect();
    // the folded tone through the same sample points: sign flips when the
    // fold reflects the frequency
    let m = n as usize % r as usize;
    let reflected = 2 * m > r as usize;
    let alias_y: Vec<f64> = fine_x
        .iter()
        .map(|&x| {
            let y = (TAU * a as f64 * x).sin();
            if reflected {
                -y
            } else {
                y
            }
        })
        .collect();
    let payload = AliasDemo {
        alias_curve,
        fine_x,
        fine_y,
        sample_x,
        sample_y,
        alias_y,
        alias_freq: a,
        folded: a != n as usize,
    };
    Ok(serde_json::to_string(&payload).expect("serialize"))
}

#[derive(Serialize)]
struct Stage {
    x: Vec<f64>,
    y: Vec<f64>,
    spectrum: Vec<f64>,
}

#[derive(Serialize)]
struct FilterResampleDemo {
    original: Stage,
    filtered: Stage,
    resampled: Stage,
}

fn stage(field: &GridField) -> Stage {
    let n = field.resolution;
    Stage {
        x: (0..n).map(|j| j as f64 / n as f64).collect(),
        y: field.values.clone(),
        spectrum: energy_spectrum(field),
    }
}

/// Seeded rough 1D signal, brick-wall filtered at `limit`, then spectrally
/// resampled to `new_res`.
#[wasm_bindgen]
pub fn filter_resample_demo(seed: u32, res: u32, limit: u32, new_res: u32) -> Result<String, JsError> {
    let res = res as usize;
    use rand::Rng;
    let mut rng = substream(seed as u64, "demo/signal");
    let mut values = vec![0.0; res];
    // random tones across the full band, 1/k amplitude decay
    for k in 1..=res / 2 {
        let amp = 1.0 / k as f64;
        let a: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let b: f64 = rng.random::<f64>() * 2.0 - 1.0;
        for (j, v) in values.iter_mut().enumerate() {
            let phase = TAU * (k * j) as f64 / res as f64;
            *v += amp * (a * phase.sin() + b * phase.cos());
        }
    }
    let original = GridField::new(1, res, values).map_err(to_js)?;
    let filtered = lowpass(&original, limit as usize).map_err(to_js)?;
    let resampled = resample(&filtered, new_res as usize).map_err(to_js)?;
    let payload = FilterResampleDemo {
        original: stage(&original),
        filtered: stage(&filtered),
        resampled: stage(&resampled),
    };
    Ok(serde_json::to_string(&payload).expect("serialize"))
}

#[derive(Serialize)]
struct BurgersDemo {
    x: Vec<f64>,
    u0: Vec<f64>,
    u_t: Vec<f64>,
    spectrum0: Vec<f64>,
    spectrum_t: Vec<f64>,
}

/// Random low-wavenumber initial state integrated to time `t`.
#[wasm_bindgen]
pub fn burgers_demo(seed: u32, t: f64, res: u32) -> Result<String, JsError> {
    let res = (res as usize).max(128);
    let opts = BurgersOptions {
        terminal_time: t.clamp(0.01, 4.0),
        ..Default::default()
    };
    let mut rng = substream(seed as u64, "demo/burgers");
    let u0 = initial_condition(&mut rng, res, &opts);
    let u_t = solve_burgers(&u0, &opts).map_err(to_js)?;
    let f0 = GridField::new(1, res, u0).map_err(to_js)?;
    let ft = GridField::new(1, res, u_t).map_err(to_js)?;
    let payload = BurgersDemo {
        x: (0..res).map(|j| j as f64 / res as f64).collect(),
        u0: f0.values.clone(),
        u_t: ft.values.clone(),
        spectrum0: energy_spectrum(&f0),
        spectrum_t: energy_spectrum(&ft),
    };
    Ok(serde_json::to_string(&payload).expect("serialize"))
}

fn to_js(e: opreslab::Error) -> JsError {
    JsError::new(&e.to_string())
}
