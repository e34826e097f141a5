use super::*;
use crate::rng::substream;
use rand::Rng;

fn randn(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * scale)
        .collect()
}

/// Central finite differences against every parameter entry.
fn grad_check<F>(store: &mut ParamStore, build: F, tol: f64)
where
    F: Fn(&mut Tape, &ParamStore) -> Tx,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(store);
    tape.accumulate_param_grads(&mut grads, 1.0);

    let eval = |store: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store);
        tape.data(loss)[0]
    };

    for pi in 0..store.tensors.len() {
        for j in 0..store.tensors[pi].data.len() {
            let orig = store.tensors[pi].data[j];
            let h = 1e-6 * orig.abs().max(1.0);
            store.tensors[pi].data_mut()[j] = orig + h;
            let fp = eval(store);
            store.tensors[pi].data_mut()[j] = orig - h;
            let fm = eval(store);
            store.tensors[pi].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let analytic = grads.by_param[pi][j];
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            let rel = (analytic - fd).abs() / denom;
            assert!(
                rel < tol,
                "param {} [{j}]: analytic {analytic} vs fd {fd} (rel {rel})",
                store.tensors[pi].name
            );
        }
    }
}

#[test]
fn elementwise_add_values() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![1.0, 2.0], vec![2]);
    let b = tape.constant(vec![3.0, 4.0], vec![2]);
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.data(c), &[4.0, 6.0]);
}

#[test]
fn mul_by_zero_zeroes_value_and_gradient() {
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![3], vec![1.0, -2.0, 0.5]));
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let zero = tape.constant(vec![0.0; 3], vec![3]);
    let y = tape.mul(x, zero).unwrap();
    assert!(tape.data(y).iter().all(|&v| v == 0.0));
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(&store);
    tape.accumulate_param_grads(&mut grads, 1.0);
    assert!(grads.by_param[0].iter().all(|&g| g == 0.0));
}

#[test]
fn gelu_value_and_slope_at_zero() {
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![1], vec![0.0]));
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let y = tape.gelu(x);
    assert_eq!(tape.data(y)[0], 0.0);
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(&store);
    tape.accumulate_param_grads(&mut grads, 1.0);
    assert!((grads.by_param[0][0] - 0.5).abs() < 1e-12);
    // and the slope everywhere else agrees with finite differences
    store.tensors[0].data_mut()[0] = 0.37;
    grad_check(
        &mut store,
        |tape, store| {
            let x = tape.param(store, 0);
            let y = tape.gelu(x);
            tape.sum(y)
        },
        1e-6,
    );
}

#[test]
fn backward_sum_of_squares() {
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![3], vec![1.0, 2.0, 3.0]));
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(&store);
    tape.accumulate_param_grads(&mut grads, 1.0);
    assert_eq!(grads.by_param[0], vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_mean_spreads_evenly() {
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![4], vec![5.0, -1.0, 2.0, 0.0]));
    let mut tape = Tape::new();
    let x = tape.param(&store, 0);
    let loss = tape.mean(x);
    tape.backward(loss).unwrap();
    let mut grads = Gradients::zeros_like(&store);
    tape.accumulate_param_grads(&mut grads, 1.0);
    assert_eq!(grads.by_param[0], vec![0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.constant(vec![1.0, 2.0], vec![2]);
    assert!(tape.backward(x).is_err());
}

#[test]
fn gradients_accumulate_across_backwards() {
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![2], vec![1.0, 2.0]));
    let mut grads = Gradients::zeros_like(&store);
    for _ in 0..2 {
        let mut tape = Tape::new();
        let x = tape.param(&store, 0);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut grads, 1.0);
    }
    // twice the single-pass gradient [2, 4]
    assert_eq!(grads.by_param[0], vec![4.0, 8.0]);
}

#[test]
fn fft_roundtrip_within_1e10() {
    let mut rng = substream(7, "test/fft-roundtrip");
    for (dims, n) in [(1usize, 32usize), (2, 16)] {
        let len = 3 * n.pow(dims as u32);
        let values = randn(&mut rng, len, 1.0);
        let mut tape = Tape::new();
        let shape = if dims == 1 { vec![3, n] } else { vec![3, n, n] };
        let x = tape.constant(values.clone(), shape);
        let spec = tape.rfft(x, dims).unwrap();
        let back = tape.irfft(spec, dims, n).unwrap();
        let worst = tape
            .data(back)
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "dims {dims}: max err {worst}");
    }
}

#[test]
fn grad_check_elementwise_chain() {
    let mut rng = substream(11, "test/elementwise");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("a", vec![6], randn(&mut rng, 6, 1.0)));
    store.push(ParamTensor::new("b", vec![6], randn(&mut rng, 6, 1.0)));
    grad_check(
        &mut store,
        |tape, store| {
            let a = tape.param(store, 0);
            let b = tape.param(store, 1);
            let s = tape.add(a, b).unwrap();
            let d = tape.sub(s, b).unwrap();
            let p = tape.mul(d, s).unwrap();
            let sc = tape.scale(p, 0.7);
            let of = tape.offset(sc, 0.3);
            let g = tape.gelu(of);
            tape.mean(g)
        },
        1e-5,
    );
}

#[test]
fn grad_check_channel_matmul_and_bias() {
    let mut rng = substream(13, "test/matmul");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("w", vec![3, 2], randn(&mut rng, 6, 0.8)));
    store.push(ParamTensor::new("b", vec![3], randn(&mut rng, 3, 0.5)));
    store.push(ParamTensor::new("x", vec![2, 5], randn(&mut rng, 10, 1.0)));
    grad_check(
        &mut store,
        |tape, store| {
            let w = tape.param(store, 0);
            let b = tape.param(store, 1);
            let x = tape.param(store, 2);
            let y = tape.channel_matmul(w, x).unwrap();
            let y = tape.bias_add(y, b).unwrap();
            let sq = tape.mul(y, y).unwrap();
            tape.mean(sq)
        },
        1e-5,
    );
}

#[test]
fn grad_check_rfft_diag_irfft_1d() {
    let n = 16;
    let mut rng = substream(17, "test/rfft1d");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![2, n], randn(&mut rng, 2 * n, 1.0)));
    // first spectral derivative: diag = i 2 pi k, Nyquist zeroed
    let diag: Vec<Complex64> = (0..=n / 2)
        .map(|k| {
            if k == n / 2 {
                Complex64::default()
            } else {
                Complex64::new(0.0, std::f64::consts::TAU * k as f64)
            }
        })
        .collect();
    grad_check(
        &mut store,
        |tape, store| {
            let x = tape.param(store, 0);
            let spec = tape.rfft(x, 1).unwrap();
            let dspec = tape.mode_diag_mul(spec, diag.clone()).unwrap();
            let dx = tape.irfft(dspec, 1, n).unwrap();
            let sq = tape.mul(dx, dx).unwrap();
            tape.mean(sq)
        },
        1e-5,
    );
}

#[test]
fn grad_check_spectral_mode_pipeline_2d() {
    // n/2 < m so the subset path (m_eff < m) is exercised
    let n = 8;
    let m = 6;
    let m_eff = n / 2;
    let (in_c, out_c) = (2, 2);
    let k_full = 2 * m * m;
    let mut rng = substream(19, "test/modes2d");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new(
        "r",
        vec![out_c, in_c, k_full, 2],
        randn(&mut rng, out_c * in_c * k_full * 2, 0.3),
    ));
    store.push(ParamTensor::new(
        "x",
        vec![in_c, n, n],
        randn(&mut rng, in_c * n * n, 1.0),
    ));
    grad_check(
        &mut store,
        |tape, store| {
            let r = tape.param(store, 0);
            let x = tape.param(store, 1);
            let spec = tape.rfft(x, 2).unwrap();
            let sel = tape.mode_select(spec, 2, m).unwrap();
            let r_eff = tape.mode_subset(r, 2, m, m_eff).unwrap();
            let mixed = tape.mode_contract(r_eff, sel).unwrap();
            let scat = tape.mode_scatter(mixed, 2, n).unwrap();
            let y = tape.irfft(scat, 2, n).unwrap();
            let sq = tape.mul(y, y).unwrap();
            tape.mean(sq)
        },
        1e-5,
    );
}

#[test]
fn grad_check_complex_mul() {
    let mut rng = substream(23, "test/cmul");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("a", vec![4, 2], randn(&mut rng, 8, 1.0)));
    store.push(ParamTensor::new("b", vec![4, 2], randn(&mut rng, 8, 1.0)));
    grad_check(
        &mut store,
        |tape, store| {
            let a = tape.param(store, 0);
            let b = tape.param(store, 1);
            let y = tape.complex_mul(a, b).unwrap();
            let sq = tape.mul(y, y).unwrap();
            tape.mean(sq)
        },
        1e-5,
    );
}

/// Cumulative sum: simple non-symmetric operator with a known transpose.
struct CumSum;

impl LinearOp for CumSum {
    fn out_shape(&self, in_shape: &[usize]) -> crate::error::Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        x.iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect()
    }
    fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = g
            .iter()
            .rev()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        out.reverse();
        out
    }
    fn name(&self) -> &'static str {
        "cumsum"
    }
}

#[test]
fn grad_check_linear_op() {
    let mut rng = substream(29, "test/linop");
    let mut store = ParamStore::default();
    store.push(ParamTensor::new("x", vec![7], randn(&mut rng, 7, 1.0)));
    grad_check(
        &mut store,
        |tape, store| {
            let x = tape.param(store, 0);
            let y = tape.linear_map(x, Box::new(CumSum)).unwrap();
            let sq = tape.mul(y, y).unwrap();
            tape.mean(sq)
        },
        1e-5,
    );
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(vec![0.0; 6], vec![2, 3]);
    let b = tape.constant(vec![0.0; 6], vec![3, 2]);
    let err = tape.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
}
