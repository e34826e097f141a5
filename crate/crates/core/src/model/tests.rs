use super::*;
use crate::spectral::energy_spectrum;
use crate::tensor::Gradients;
use std::f64::consts::TAU;

fn tone_1d(n: usize, k: f64, phase: f64) -> Vec<f64> {
    (0..n).map(|j| (TAU * k * j as f64 / n as f64 + phase).sin()).collect()
}

fn small_spec(dims: usize, m: usize) -> FnoSpec {
    FnoSpec {
        dims,
        width: 8,
        layers: 2,
        max_modes: m,
        lift_dim: 16,
        proj_dim: 16,
        coord_channels: true,
    }
}

#[test]
fn init_is_seed_deterministic() {
    let spec = small_spec(2, 4);
    let a = init_params(&spec, 7).unwrap();
    let b = init_params(&spec, 7).unwrap();
    for (x, y) in a.store.tensors.iter().zip(&b.store.tensors) {
        assert_eq!(x.data, y.data, "tensor {}", x.name);
    }
    let c = init_params(&spec, 8).unwrap();
    assert_ne!(a.store.tensors[0].data, c.store.tensors[0].data);
}

#[test]
fn init_forward_rms_is_sane() {
    let spec = FnoSpec::with_defaults(2, 8);
    let params = init_params(&spec, 3).unwrap();
    let n = 16;
    let input = GridField::new(2, n, vec![1.0; n * n]).unwrap();
    let out = fno_forward(&params, &[input]).unwrap();
    let rms = (out[0].values.iter().map(|v| v * v).sum::<f64>() / (n * n) as f64).sqrt();
    assert!((1e-3..=1e1).contains(&rms), "rms at init {rms}");
}

#[test]
fn zero_input_zero_biases_gives_zero_output() {
    let mut spec = small_spec(1, 4);
    spec.coord_channels = false;
    let mut params = init_params(&spec, 5).unwrap();
    for t in &mut params.store.tensors {
        if t.name.ends_with("/b") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let input = GridField::new(1, 32, vec![0.0; 32]).unwrap();
    let out = fno_forward(&params, &[input]).unwrap();
    assert!(out[0].values.iter().all(|&v| v == 0.0));
}

#[test]
fn spectral_conv_identity_when_modes_cover_band() {
    let n = 32;
    let width = 2;
    let m = n / 2;
    // identity across channels on every retained mode
    let mut r = vec![0.0; width * width * m * 2];
    for c in 0..width {
        for k in 0..m {
            r[((c * width + c) * m + k) * 2] = 1.0;
        }
    }
    let mut values = tone_1d(n, 3.0, 0.0);
    values
        .iter_mut()
        .zip(tone_1d(n, 5.0, 1.0))
        .for_each(|(v, w)| *v += w);
    let mut x2 = values.clone();
    x2.extend(values.iter().map(|v| 0.5 * v));
    let mut tape = Tape::new();
    let x = tape.constant(x2.clone(), vec![width, n]);
    let w = tape.constant(r, vec![width, width, m, 2]);
    let y = spectral_conv(&mut tape, x, w, 1, m, n).unwrap();
    let worst = tape
        .data(y)
        .iter()
        .zip(&x2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-10, "identity deviation {worst}");
}

#[test]
fn spectral_conv_truncates_above_mode_cap() {
    let n = 64;
    let m = 6;
    let mut r = vec![0.0; m * 2];
    r.iter_mut().step_by(2).for_each(|v| *v = 1.0);
    let mut tape = Tape::new();
    let x = tape.constant(tone_1d(n, 9.0, 0.3), vec![1, n]);
    let w = tape.constant(r, vec![1, 1, m, 2]);
    let y = spectral_conv(&mut tape, x, w, 1, m, n).unwrap();
    assert!(tape.data(y).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn spectral_conv_weight_gradient_matches_fd() {
    let n = 16;
    let m = 4;
    let mut store = ParamStore::default();
    let mut rng = substream(31, "model/test/conv-grad");
    let data: Vec<f64> = (0..m * 2)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * 0.5)
        .collect();
    store.push(ParamTensor::new("r", vec![1, 1, m, 2], data));
    let x_vals = tone_1d(n, 2.0, 0.2);

    let eval = |store: &ParamStore| -> (f64, Gradients) {
        let mut tape = Tape::new();
        let x = tape.constant(x_vals.clone(), vec![1, n]);
        let r = tape.param(store, 0);
        let y = spectral_conv(&mut tape, x, r, 1, m, n).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let mut grads = Gradients::zeros_like(store);
        tape.accumulate_param_grads(&mut grads, 1.0);
        (tape.data(loss)[0], grads)
    };
    let (_, grads) = eval(&store);
    for j in 0..store.tensors[0].data.len() {
        let orig = store.tensors[0].data[j];
        let h = 1e-6;
        store.tensors[0].data_mut()[j] = orig + h;
        let (fp, _) = eval(&store);
        store.tensors[0].data_mut()[j] = orig - h;
        let (fm, _) = eval(&store);
        store.tensors[0].data_mut()[j] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let analytic = grads.by_param[0][j];
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-5, "entry {j}: analytic {analytic} fd {fd}");
    }
}

#[test]
fn linear_path_is_discretization_invariant() {
    // band-limited function evaluated through the same spectral weights at
    // two resolutions agrees after spectral upsampling
    let m = 8;
    let mut rng = substream(37, "model/test/invariance");
    let rdata: Vec<f64> = (0..m * 2)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let f = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = j as f64 / n as f64;
                (TAU * 2.0 * x).sin() + 0.7 * (TAU * 5.0 * x).cos() + 0.2 * (TAU * 6.0 * x).sin()
            })
            .collect()
    };
    let run = |n: usize| -> GridField {
        let mut tape = Tape::new();
        let x = tape.constant(f(n), vec![1, n]);
        let w = tape.constant(rdata.clone(), vec![1, 1, m, 2]);
        let y = spectral_conv(&mut tape, x, w, 1, m, n).unwrap();
        GridField::new(1, n, tape.data(y).to_vec()).unwrap()
    };
    let coarse = run(32);
    let fine = run(64);
    let up = spectral::resample(&coarse, 64).unwrap();
    let num: f64 = up
        .values
        .iter()
        .zip(&fine.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = fine.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num / den < 1e-8, "relative disagreement {}", num / den);
}

#[test]
fn one_parameter_set_serves_many_resolutions() {
    let params = init_params(&small_spec(2, 4), 11).unwrap();
    for n in [8usize, 16, 32] {
        let input = GridField::new(2, n, vec![0.3; n * n]).unwrap();
        let out = fno_forward(&params, &[input]).unwrap();
        assert_eq!(out[0].resolution, n);
        assert_eq!(out[0].values.len(), n * n);
    }
}

#[test]
fn batch_rejects_mixed_resolutions() {
    let params = init_params(&small_spec(1, 4), 11).unwrap();
    let a = GridField::new(1, 16, vec![0.0; 16]).unwrap();
    let b = GridField::new(1, 32, vec![0.0; 32]).unwrap();
    assert!(fno_forward(&params, &[a, b]).is_err());
}

#[test]
fn wrapper_at_anchor_equals_inner_exactly() {
    let params = init_params(&small_spec(1, 8), 13).unwrap();
    let wrapper = BandLimitWrapper {
        inner: params.clone(),
        anchor_resolution: 16,
    };
    let input = GridField::new(1, 16, tone_1d(16, 3.0, 0.0)).unwrap();
    let direct = fno_forward(&params, &[input.clone()]).unwrap();
    let wrapped = bandlimited_forward(&wrapper, &[input]).unwrap();
    assert_eq!(direct[0].values, wrapped[0].values);
}

#[test]
fn wrapper_output_is_band_limited() {
    let params = init_params(&small_spec(1, 8), 13).unwrap();
    let wrapper = BandLimitWrapper {
        inner: params,
        anchor_resolution: 16,
    };
    let input = GridField::new(1, 128, tone_1d(128, 20.0, 0.4)).unwrap();
    let out = bandlimited_forward(&wrapper, &[input]).unwrap();
    let bins = energy_spectrum(&out[0]);
    let total: f64 = bins.iter().sum();
    let high: f64 = bins.iter().skip(9).sum();
    assert!(high < 1e-10 * total, "energy above anchor Nyquist: {high} of {total}");
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let params = init_params(&small_spec(2, 4), 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&params, dir.path(), Some(serde_json::json!({"run": "test"}))).unwrap();
    let loaded = checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.seed, params.seed);
    assert_eq!(loaded.spec, params.spec);
    for (a, b) in params.store.tensors.iter().zip(&loaded.store.tensors) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        let same_bits = a
            .data
            .iter()
            .zip(b.data.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same_bits, "tensor {} changed across reload", a.name);
    }
    let n = 16;
    let input = GridField::new(2, n, vec![0.25; n * n]).unwrap();
    let before = fno_forward(&params, &[input.clone()]).unwrap();
    let after = fno_forward(&loaded, &[input]).unwrap();
    assert_eq!(before[0].values, after[0].values);
}

use crate::rng::substream;
use crate::tensor::{ParamStore, ParamTensor};
use rand_distr::{Distribution, StandardNormal};
