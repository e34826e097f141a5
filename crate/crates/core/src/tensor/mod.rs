//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records one forward pass as an arena of nodes; [`Tape::backward`]
//! walks it once in reverse and is then done — tapes are built per pass and
//! dropped after use, and a tape lives on a single thread. Complex values are
//! paired real buffers with a trailing axis of length 2; the real-FFT ops and
//! complex mode arithmetic carry hand-written adjoints (the adjoint of a
//! unitary real FFT is the zero-extended inverse transform).
//!
//! Parameters live outside tapes in a [`ParamStore`]; leaves copy parameter
//! data in, and [`Tape::accumulate_param_grads`] routes gradients back out.

mod adam;

pub use adam::{adam_step, AdamState};

use crate::error::{Error, Result};
use crate::fft;
use rustfft::num_complex::Complex64;
use std::sync::Arc;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tx(usize);

/// A named trainable tensor. Data sits behind an `Arc` so tape leaves share
/// it without copying; the optimizer mutates in place once tapes are gone.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
    /// Populated by gradient accumulation; `None` until then.
    pub grad: Option<Vec<f64>>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        ParamTensor {
            name: name.into(),
            shape,
            data: Arc::new(data),
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mutable view; clones only if a tape still shares the buffer.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data)
    }
}

/// Ordered collection of parameters; order is the contract for gradients,
/// optimizer state, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub tensors: Vec<ParamTensor>,
}

/// Detached gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub by_param: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn push(&mut self, tensor: ParamTensor) -> usize {
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Adds `scale * grads` into the stores' gradient buffers, creating them
    /// on first use. Repeated accumulation without [`Self::zero_grads`] sums.
    pub fn add_grads(&mut self, grads: &Gradients, scale: f64) {
        for (tensor, g) in self.tensors.iter_mut().zip(&grads.by_param) {
            let buf = tensor.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (acc, &v) in buf.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for tensor in &mut self.tensors {
            tensor.grad = None;
        }
    }
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            by_param: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.by_param.iter_mut().zip(&other.by_param) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// A linear operator with an explicit transpose, recordable as one node.
pub trait LinearOp: Send + Sync {
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>>;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_transpose(&self, g: &[f64]) -> Vec<f64>;
    fn name(&self) -> &'static str;
}

enum Op {
    Const,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Gelu(usize),
    Mean(usize),
    Sum(usize),
    ChannelMatmul { w: usize, x: usize },
    BiasAdd { x: usize, b: usize },
    Rfft { x: usize, dims: usize, n: usize },
    Irfft { x: usize, dims: usize, n: usize },
    ModeSelect { x: usize, dims: usize, n: usize, m_eff: usize },
    ModeScatter { x: usize, dims: usize, n: usize, m_eff: usize },
    ModeSubset { r: usize, dims: usize, m: usize, m_eff: usize },
    ModeContract { r: usize, x: usize },
    ComplexMul(usize, usize),
    ModeDiagMul { x: usize, diag: Vec<Complex64> },
    Linear { x: usize, op: Box<dyn LinearOp> },
}

/// Node storage: owned results, or a zero-copy view of parameter data.
enum Buf {
    Owned(Vec<f64>),
    Shared(Arc<Vec<f64>>),
}

impl std::ops::Deref for Buf {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match self {
            Buf::Owned(v) => v,
            Buf::Shared(a) => a,
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Buf,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Backward graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let inner = s * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

/// Number of retained-mode entries (complex) for one channel.
fn mode_count(dims: usize, m_eff: usize) -> usize {
    match dims {
        1 => m_eff,
        _ => 2 * m_eff * m_eff,
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> Tx {
        self.push_buf(shape, Buf::Owned(data), needs_grad, op)
    }

    fn push_buf(&mut self, shape: Vec<usize>, data: Buf, needs_grad: bool, op: Op) -> Tx {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            needs_grad,
            op,
        });
        Tx(self.nodes.len() - 1)
    }

    pub fn data(&self, t: Tx) -> &[f64] {
        &self.nodes[t.0].data
    }

    pub fn shape(&self, t: Tx) -> &[usize] {
        &self.nodes[t.0].shape
    }

    fn needs(&self, t: Tx) -> bool {
        self.nodes[t.0].needs_grad
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Tx {
        self.push(shape, data, false, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> Tx {
        self.constant(vec![v], vec![1])
    }

    /// Leaf copying the parameter's current data; gradients route back to
    /// `store_idx` during accumulation.
    pub fn param(&mut self, store: &ParamStore, store_idx: usize) -> Tx {
        let t = &store.tensors[store_idx];
        self.push_buf(
            t.shape.clone(),
            Buf::Shared(Arc::clone(&t.data)),
            true,
            Op::Param(store_idx),
        )
    }

    fn check_same_shape(&self, op: &'static str, a: Tx, b: Tx) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tx, b: Tx) -> Result<Tx> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Tx, b: Tx) -> Result<Tx> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Tx, b: Tx) -> Result<Tx> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, needs, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Tx, c: f64) -> Tx {
        let data = self.data(x).iter().map(|v| v * c).collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), data, needs, Op::Scale(x.0, c))
    }

    pub fn offset(&mut self, x: Tx, c: f64) -> Tx {
        let data = self.data(x).iter().map(|v| v + c).collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), data, needs, Op::Offset(x.0))
    }

    pub fn gelu(&mut self, x: Tx) -> Tx {
        let data = self.data(x).iter().map(|&v| gelu(v)).collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), data, needs, Op::Gelu(x.0))
    }

    pub fn mean(&mut self, x: Tx) -> Tx {
        let n = self.data(x).len() as f64;
        let v = self.data(x).iter().sum::<f64>() / n;
        let needs = self.needs(x);
        self.push(vec![1], vec![v], needs, Op::Mean(x.0))
    }

    pub fn sum(&mut self, x: Tx) -> Tx {
        let v = self.data(x).iter().sum::<f64>();
        let needs = self.needs(x);
        self.push(vec![1], vec![v], needs, Op::Sum(x.0))
    }

    /// Matrix contraction along the channel axis: `w: [out, in]` applied to
    /// `x: [in, rest...]`, giving `[out, rest...]`.
    pub fn channel_matmul(&mut self, w: Tx, x: Tx) -> Result<Tx> {
        let ws = self.shape(w);
        let xs = self.shape(x);
        if ws.len() != 2 || xs.is_empty() || ws[1] != xs[0] {
            return Err(Error::shape(
                "channel_matmul",
                format!("{ws:?} vs {xs:?}"),
            ));
        }
        let (out_c, in_c) = (ws[0], ws[1]);
        let rest: usize = xs[1..].iter().product();
        let wd = self.data(w);
        let xd = self.data(x);
        let mut data = vec![0.0; out_c * rest];
        for o in 0..out_c {
            for i in 0..in_c {
                let coeff = wd[o * in_c + i];
                if coeff == 0.0 {
                    continue;
                }
                let xrow = &xd[i * rest..(i + 1) * rest];
                let yrow = &mut data[o * rest..(o + 1) * rest];
                for (yv, xv) in yrow.iter_mut().zip(xrow) {
                    *yv += coeff * xv;
                }
            }
        }
        let mut shape = vec![out_c];
        shape.extend_from_slice(&xs[1..]);
        let needs = self.needs(w) || self.needs(x);
        Ok(self.push(shape, data, needs, Op::ChannelMatmul { w: w.0, x: x.0 }))
    }

    /// Broadcasts `b: [c]` over `x: [c, rest...]`.
    pub fn bias_add(&mut self, x: Tx, b: Tx) -> Result<Tx> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() != 1 || xs.is_empty() || bs[0] != xs[0] {
            return Err(Error::shape("bias_add", format!("{xs:?} vs {bs:?}")));
        }
        let rest: usize = xs[1..].iter().product();
        let bd = self.data(b);
        let mut data = self.data(x).to_vec();
        for c in 0..bs[0] {
            let bias = bd[c];
            for v in &mut data[c * rest..(c + 1) * rest] {
                *v += bias;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(self.nodes[x.0].shape.clone(), data, needs, Op::BiasAdd { x: x.0, b: b.0 }))
    }

    /// Unitary real FFT over the trailing spatial axes of `x: [c, spatial...]`.
    /// 1D: `[c, n] -> [c, n/2+1, 2]`; 2D: `[c, n, n] -> [c, n, n/2+1, 2]`.
    pub fn rfft(&mut self, x: Tx, dims: usize) -> Result<Tx> {
        let xs = self.shape(x).to_vec();
        if xs.len() != dims + 1 || (dims == 2 && xs[1] != xs[2]) || !(dims == 1 || dims == 2) {
            return Err(Error::shape("rfft", format!("{xs:?} with dims {dims}")));
        }
        let n = xs[1];
        if n % 2 != 0 {
            return Err(Error::shape("rfft", format!("odd spatial size {n}")));
        }
        let channels = xs[0];
        let spatial = n.pow(dims as u32);
        let h = fft::half_len(n);
        let per_c = if dims == 1 { h } else { n * h };
        let xd = self.data(x);
        let mut data = vec![0.0; channels * per_c * 2];
        for c in 0..channels {
            let src = &xd[c * spatial..(c + 1) * spatial];
            let half = if dims == 1 {
                fft::rfft_1d(src)
            } else {
                fft::rfft_2d(src, n)
            };
            for (k, v) in half.iter().enumerate() {
                data[(c * per_c + k) * 2] = v.re;
                data[(c * per_c + k) * 2 + 1] = v.im;
            }
        }
        let shape = if dims == 1 {
            vec![channels, h, 2]
        } else {
            vec![channels, n, h, 2]
        };
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::Rfft { x: x.0, dims, n }))
    }

    /// Inverse unitary real FFT back to `[c, spatial...]` of size `n`.
    pub fn irfft(&mut self, x: Tx, dims: usize, n: usize) -> Result<Tx> {
        let xs = self.shape(x).to_vec();
        let h = fft::half_len(n);
        let ok = match dims {
            1 => xs.len() == 3 && xs[1] == h && xs[2] == 2,
            2 => xs.len() == 4 && xs[1] == n && xs[2] == h && xs[3] == 2,
            _ => false,
        };
        if !ok || n % 2 != 0 {
            return Err(Error::shape(
                "irfft",
                format!("{xs:?} with dims {dims}, n {n}"),
            ));
        }
        let channels = xs[0];
        let per_c = if dims == 1 { h } else { n * h };
        let spatial = n.pow(dims as u32);
        let xd = self.data(x);
        let mut data = vec![0.0; channels * spatial];
        for c in 0..channels {
            let half: Vec<Complex64> = (0..per_c)
                .map(|k| Complex64::new(xd[(c * per_c + k) * 2], xd[(c * per_c + k) * 2 + 1]))
                .collect();
            let field = if dims == 1 {
                fft::irfft_1d(&half, n)
            } else {
                fft::irfft_2d(&half, n)
            };
            data[c * spatial..(c + 1) * spatial].copy_from_slice(&field);
        }
        let mut shape = vec![channels];
        shape.extend(std::iter::repeat_n(n, dims));
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::Irfft { x: x.0, dims, n }))
    }

    /// Gathers the retained low-frequency modes from a half spectrum.
    /// 1D keeps bins `k < m_eff`; 2D keeps the two Hermitian-unique corner
    /// blocks (`kx in [0,m_eff) u [n-m_eff,n)`, `ky < m_eff`), stacked along
    /// a block axis. `m_eff` is clamped to `n/2`.
    pub fn mode_select(&mut self, x: Tx, dims: usize, m: usize) -> Result<Tx> {
        let xs = self.shape(x).to_vec();
        if m == 0 {
            return Err(Error::shape("mode_select", "m must be >= 1".to_string()));
        }
        let (n, channels) = match dims {
            1 if xs.len() == 3 && xs[2] == 2 => ((xs[1] - 1) * 2, xs[0]),
            2 if xs.len() == 4 && xs[3] == 2 && xs[1] == (xs[2] - 1) * 2 => (xs[1], xs[0]),
            _ => return Err(Error::shape("mode_select", format!("{xs:?} with dims {dims}"))),
        };
        let m_eff = m.min(n / 2);
        let xd = self.data(x);
        let data = gather_modes(xd, channels, dims, n, m_eff);
        let shape = match dims {
            1 => vec![channels, m_eff, 2],
            _ => vec![channels, 2, m_eff, m_eff, 2],
        };
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::ModeSelect { x: x.0, dims, n, m_eff }))
    }

    /// Inverse of [`Tape::mode_select`]: places retained modes back on a
    /// half spectrum of resolution `n`, zero elsewhere.
    pub fn mode_scatter(&mut self, x: Tx, dims: usize, n: usize) -> Result<Tx> {
        let xs = self.shape(x).to_vec();
        let (channels, m_eff) = match dims {
            1 if xs.len() == 3 && xs[2] == 2 => (xs[0], xs[1]),
            2 if xs.len() == 5 && xs[1] == 2 && xs[2] == xs[3] && xs[4] == 2 => (xs[0], xs[2]),
            _ => return Err(Error::shape("mode_scatter", format!("{xs:?} with dims {dims}"))),
        };
        if 2 * m_eff > n {
            return Err(Error::shape(
                "mode_scatter",
                format!("m_eff {m_eff} exceeds n/2 of {n}"),
            ));
        }
        let xd = self.data(x);
        let data = scatter_modes(xd, channels, dims, n, m_eff);
        let h = fft::half_len(n);
        let shape = match dims {
            1 => vec![channels, h, 2],
            _ => vec![channels, n, h, 2],
        };
        let needs = self.needs(x);
        Ok(self.push(shape, data, needs, Op::ModeScatter { x: x.0, dims, n, m_eff }))
    }

    /// Restricts spectral weights `r: [out, in, K(m), 2]` to the modes that
    /// survive at a coarser grid (`m_eff < m`); identity when `m_eff == m`.
    pub fn mode_subset(&mut self, r: Tx, dims: usize, m: usize, m_eff: usize) -> Result<Tx> {
        let rs = self.shape(r).to_vec();
        let k_full = mode_count(dims, m);
        if rs.len() != 4 || rs[2] != k_full || rs[3] != 2 || m_eff > m {
            return Err(Error::shape(
                "mode_subset",
                format!("{rs:?} with dims {dims}, m {m}, m_eff {m_eff}"),
            ));
        }
        if m_eff == m {
            return Ok(r);
        }
        let (out_c, in_c) = (rs[0], rs[1]);
        let k_eff = mode_count(dims, m_eff);
        let rd = self.data(r);
        let mut data = vec![0.0; out_c * in_c * k_eff * 2];
        for oi in 0..out_c * in_c {
            let src = &rd[oi * k_full * 2..(oi + 1) * k_full * 2];
            let dst = &mut data[oi * k_eff * 2..(oi + 1) * k_eff * 2];
            for (sub, full) in subset_index_pairs(dims, m, m_eff) {
                dst[sub * 2] = src[full * 2];
                dst[sub * 2 + 1] = src[full * 2 + 1];
            }
        }
        let needs = self.needs(r);
        Ok(self.push(
            vec![out_c, in_c, k_eff, 2],
            data,
            needs,
            Op::ModeSubset { r: r.0, dims, m, m_eff },
        ))
    }

    /// Per-mode complex channel mixing: `r: [out, in, K, 2]` contracted with
    /// `x: [in, K, 2]` into `[out, K, 2]`.
    pub fn mode_contract(&mut self, r: Tx, x: Tx) -> Result<Tx> {
        let rs = self.shape(r).to_vec();
        let xs = self.shape(x).to_vec();
        let k = if xs.len() >= 2 { numel(&xs[1..xs.len() - 1]) } else { 0 };
        if rs.len() != 4
            || xs.len() < 2
            || *xs.last().unwrap() != 2
            || rs[3] != 2
            || rs[1] != xs[0]
            || rs[2] != k
        {
            return Err(Error::shape("mode_contract", format!("{rs:?} vs {xs:?}")));
        }
        let (out_c, in_c) = (rs[0], rs[1]);
        let rd = self.data(r);
        let xd = self.data(x);
        let mut data = vec![0.0; out_c * k * 2];
        for o in 0..out_c {
            let yrow = &mut data[o * k * 2..(o + 1) * k * 2];
            for i in 0..in_c {
                let rrow = &rd[(o * in_c + i) * k * 2..(o * in_c + i + 1) * k * 2];
                let xrow = &xd[i * k * 2..(i + 1) * k * 2];
                for kk in 0..k {
                    let (rr, ri) = (rrow[kk * 2], rrow[kk * 2 + 1]);
                    let (xr, xi) = (xrow[kk * 2], xrow[kk * 2 + 1]);
                    yrow[kk * 2] += rr * xr - ri * xi;
                    yrow[kk * 2 + 1] += rr * xi + ri * xr;
                }
            }
        }
        let mut shape = vec![out_c];
        shape.extend_from_slice(&xs[1..]);
        let needs = self.needs(r) || self.needs(x);
        Ok(self.push(shape, data, needs, Op::ModeContract { r: r.0, x: x.0 }))
    }

    /// Elementwise complex product of two `[..., 2]` tensors.
    pub fn complex_mul(&mut self, a: Tx, b: Tx) -> Result<Tx> {
        self.check_same_shape("complex_mul", a, b)?;
        let shape = self.nodes[a.0].shape.clone();
        if shape.last() != Some(&2) {
            return Err(Error::shape(
                "complex_mul",
                format!("trailing axis must be 2, got {shape:?}"),
            ));
        }
        let ad = self.data(a);
        let bd = self.data(b);
        let mut data = vec![0.0; ad.len()];
        for k in 0..ad.len() / 2 {
            let (ar, ai) = (ad[k * 2], ad[k * 2 + 1]);
            let (br, bi) = (bd[k * 2], bd[k * 2 + 1]);
            data[k * 2] = ar * br - ai * bi;
            data[k * 2 + 1] = ar * bi + ai * br;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, needs, Op::ComplexMul(a.0, b.0)))
    }

    /// Multiplies each mode of `x: [c, K..., 2]` by a fixed complex diagonal.
    pub fn mode_diag_mul(&mut self, x: Tx, diag: Vec<Complex64>) -> Result<Tx> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || *xs.last().unwrap() != 2 || numel(&xs[1..xs.len() - 1]) != diag.len() {
            return Err(Error::shape(
                "mode_diag_mul",
                format!("{xs:?} vs diagonal of {}", diag.len()),
            ));
        }
        let channels = xs[0];
        let k = diag.len();
        let xd = self.data(x);
        let mut data = vec![0.0; xd.len()];
        for c in 0..channels {
            for (kk, d) in diag.iter().enumerate() {
                let idx = (c * k + kk) * 2;
                let (xr, xi) = (xd[idx], xd[idx + 1]);
                data[idx] = d.re * xr - d.im * xi;
                data[idx + 1] = d.re * xi + d.im * xr;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(xs, data, needs, Op::ModeDiagMul { x: x.0, diag }))
    }

    /// Records an opaque linear operator with a hand-written transpose.
    pub fn linear_map(&mut self, x: Tx, op: Box<dyn LinearOp>) -> Result<Tx> {
        let out_shape = op.out_shape(self.shape(x))?;
        let data = op.apply(self.data(x));
        if data.len() != numel(&out_shape) {
            return Err(Error::shape(op.name(), "operator output size mismatch"));
        }
        let needs = self.needs(x);
        Ok(self.push(out_shape, data, needs, Op::Linear { x: x.0, op }))
    }

    /// Reverse pass from a scalar loss. Node gradients are kept on the tape;
    /// use [`Tape::accumulate_param_grads`] to extract parameter gradients.
    pub fn backward(&mut self, loss: Tx) -> Result<()> {
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i);
        }
        Ok(())
    }

    fn grad_buf(&mut self, idx: usize) -> &mut Vec<f64> {
        let len = self.nodes[idx].data.len();
        self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; len])
    }

    fn add_grad(&mut self, idx: usize, contrib: &[f64]) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        let buf = self.grad_buf(idx);
        for (a, &b) in buf.iter_mut().zip(contrib) {
            *a += b;
        }
    }

    fn propagate(&mut self, i: usize) {
        let g = self.nodes[i].grad.clone().expect("grad present");
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            &Op::Add(a, b) => {
                self.add_grad(a, &g);
                self.add_grad(b, &g);
            }
            &Op::Sub(a, b) => {
                self.add_grad(a, &g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_grad(b, &neg);
            }
            &Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(self.nodes[b].data.iter()).map(|(gv, bv)| gv * bv).collect();
                let gb: Vec<f64> = g.iter().zip(self.nodes[a].data.iter()).map(|(gv, av)| gv * av).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.add_grad(x, &gx);
            }
            &Op::Offset(x) => {
                self.add_grad(x, &g);
            }
            &Op::Gelu(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x].data.iter())
                    .map(|(gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                self.add_grad(x, &gx);
            }
            &Op::Mean(x) => {
                let n = self.nodes[x].data.len();
                let gx = vec![g[0] / n as f64; n];
                self.add_grad(x, &gx);
            }
            &Op::Sum(x) => {
                let gx = vec![g[0]; self.nodes[x].data.len()];
                self.add_grad(x, &gx);
            }
            &Op::ChannelMatmul { w, x } => {
                let ws = &self.nodes[w].shape;
                let (out_c, in_c) = (ws[0], ws[1]);
                let rest = self.nodes[x].data.len() / in_c;
                if self.nodes[w].needs_grad {
                    let mut gw = vec![0.0; out_c * in_c];
                    for o in 0..out_c {
                        let grow = &g[o * rest..(o + 1) * rest];
                        for i in 0..in_c {
                            let xrow = &self.nodes[x].data[i * rest..(i + 1) * rest];
                            gw[o * in_c + i] = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.add_grad(w, &gw);
                }
                if self.nodes[x].needs_grad {
                    let mut gx = vec![0.0; in_c * rest];
                    for i in 0..in_c {
                        let xrow = &mut gx[i * rest..(i + 1) * rest];
                        for o in 0..out_c {
                            let coeff = self.nodes[w].data[o * in_c + i];
                            if coeff == 0.0 {
                                continue;
                            }
                            let grow = &g[o * rest..(o + 1) * rest];
                            for (xv, gv) in xrow.iter_mut().zip(grow) {
                                *xv += coeff * gv;
                            }
                        }
                    }
                    self.add_grad(x, &gx);
                }
            }
            &Op::BiasAdd { x, b } => {
                self.add_grad(x, &g);
                if self.nodes[b].needs_grad {
                    let c = self.nodes[b].data.len();
                    let rest = g.len() / c;
                    let gb: Vec<f64> = (0..c)
                        .map(|ci| g[ci * rest..(ci + 1) * rest].iter().sum())
                        .collect();
                    self.add_grad(b, &gb);
                }
            }
            &Op::Rfft { x, dims, n } => {
                if self.nodes[x].needs_grad {
                    let gx = rfft_adjoint(&g, self.nodes[x].data.len(), dims, n);
                    self.add_grad(x, &gx);
                }
            }
            &Op::Irfft { x, dims, n } => {
                if self.nodes[x].needs_grad {
                    let gx = irfft_adjoint(&g, self.nodes[x].data.len(), dims, n);
                    self.add_grad(x, &gx);
                }
            }
            &Op::ModeSelect { x, dims, n, m_eff } => {
                if self.nodes[x].needs_grad {
                    let channels = self.nodes[i].shape[0];
                    let gx = scatter_modes(&g, channels, dims, n, m_eff);
                    self.add_grad(x, &gx);
                }
            }
            &Op::ModeScatter { x, dims, n, m_eff } => {
                if self.nodes[x].needs_grad {
                    let channels = self.nodes[i].shape[0];
                    let gx = gather_modes(&g, channels, dims, n, m_eff);
                    self.add_grad(x, &gx);
                }
            }
            &Op::ModeSubset { r, dims, m, m_eff } => {
                if self.nodes[r].needs_grad {
                    let rs = &self.nodes[r].shape;
                    let (out_c, in_c) = (rs[0], rs[1]);
                    let k_full = mode_count(dims, m);
                    let k_eff = mode_count(dims, m_eff);
                    let mut gr = vec![0.0; out_c * in_c * k_full * 2];
                    for oi in 0..out_c * in_c {
                        let src = &g[oi * k_eff * 2..(oi + 1) * k_eff * 2];
                        let dst = &mut gr[oi * k_full * 2..(oi + 1) * k_full * 2];
                        for (sub, full) in subset_index_pairs(dims, m, m_eff) {
                            dst[full * 2] += src[sub * 2];
                            dst[full * 2 + 1] += src[sub * 2 + 1];
                        }
                    }
                    self.add_grad(r, &gr);
                }
            }
            &Op::ModeContract { r, x } => {
                let rs = &self.nodes[r].shape;
                let (out_c, in_c, k) = (rs[0], rs[1], rs[2]);
                if self.nodes[r].needs_grad {
                    let mut gr = vec![0.0; out_c * in_c * k * 2];
                    for o in 0..out_c {
                        let grow = &g[o * k * 2..(o + 1) * k * 2];
                        for i2 in 0..in_c {
                            let xrow = &self.nodes[x].data[i2 * k * 2..(i2 + 1) * k * 2];
                            let rrow = &mut gr[(o * in_c + i2) * k * 2..(o * in_c + i2 + 1) * k * 2];
                            for kk in 0..k {
                                let (gr_, gi) = (grow[kk * 2], grow[kk * 2 + 1]);
                                let (xr, xi) = (xrow[kk * 2], xrow[kk * 2 + 1]);
                                // d/dR of R*x against gy: gy * conj(x)
                                rrow[kk * 2] += gr_ * xr + gi * xi;
                                rrow[kk * 2 + 1] += gi * xr - gr_ * xi;
                            }
                        }
                    }
                    self.add_grad(r, &gr);
                }
                if self.nodes[x].needs_grad {
                    let mut gx = vec![0.0; in_c * k * 2];
                    for i2 in 0..in_c {
                        let xrow = &mut gx[i2 * k * 2..(i2 + 1) * k * 2];
                        for o in 0..out_c {
                            let grow = &g[o * k * 2..(o + 1) * k * 2];
                            let rrow =
                                &self.nodes[r].data[(o * in_c + i2) * k * 2..(o * in_c + i2 + 1) * k * 2];
                            for kk in 0..k {
                                let (gr_, gi) = (grow[kk * 2], grow[kk * 2 + 1]);
                                let (rr, ri) = (rrow[kk * 2], rrow[kk * 2 + 1]);
                                // conj(R) * gy
                                xrow[kk * 2] += rr * gr_ + ri * gi;
                                xrow[kk * 2 + 1] += rr * gi - ri * gr_;
                            }
                        }
                    }
                    self.add_grad(x, &gx);
                }
            }
            &Op::ComplexMul(a, b) => {
                let n = g.len() / 2;
                if self.nodes[a].needs_grad {
                    let mut ga = vec![0.0; g.len()];
                    for kk in 0..n {
                        let (gr, gi) = (g[kk * 2], g[kk * 2 + 1]);
                        let (br, bi) = (self.nodes[b].data[kk * 2], self.nodes[b].data[kk * 2 + 1]);
                        ga[kk * 2] = gr * br + gi * bi;
                        ga[kk * 2 + 1] = gi * br - gr * bi;
                    }
                    self.add_grad(a, &ga);
                }
                if self.nodes[b].needs_grad {
                    let mut gb = vec![0.0; g.len()];
                    for kk in 0..n {
                        let (gr, gi) = (g[kk * 2], g[kk * 2 + 1]);
                        let (ar, ai) = (self.nodes[a].data[kk * 2], self.nodes[a].data[kk * 2 + 1]);
                        gb[kk * 2] = gr * ar + gi * ai;
                        gb[kk * 2 + 1] = gi * ar - gr * ai;
                    }
                    self.add_grad(b, &gb);
                }
            }
            Op::ModeDiagMul { x, diag } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let k = diag.len();
                    let channels = self.nodes[x].data.len() / (k * 2);
                    let mut gx = vec![0.0; g.len()];
                    for c in 0..channels {
                        for (kk, d) in diag.iter().enumerate() {
                            let idx = (c * k + kk) * 2;
                            let (gr, gi) = (g[idx], g[idx + 1]);
                            gx[idx] = d.re * gr + d.im * gi;
                            gx[idx + 1] = d.re * gi - d.im * gr;
                        }
                    }
                    self.add_grad(x, &gx);
                }
            }
            Op::Linear { x, op } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let gx = op.apply_transpose(&g);
                    self.add_grad(x, &gx);
                }
            }
        }
    }

    /// Adds `scale` times each parameter leaf's gradient into `grads`.
    pub fn accumulate_param_grads(&self, grads: &mut Gradients, scale: f64) {
        for node in &self.nodes {
            if let (Op::Param(idx), Some(g)) = (&node.op, &node.grad) {
                let buf = &mut grads.by_param[*idx];
                for (a, &b) in buf.iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }
}

/// Adjoint of the unitary rfft: inverse transform of the zero-extended
/// cotangent half spectrum, real part.
fn rfft_adjoint(g: &[f64], in_len: usize, dims: usize, n: usize) -> Vec<f64> {
    let h = fft::half_len(n);
    let per_c = if dims == 1 { h } else { n * h };
    let spatial = n.pow(dims as u32);
    let channels = in_len / spatial;
    let mut out = vec![0.0; in_len];
    for c in 0..channels {
        let mut full = vec![Complex64::default(); spatial];
        if dims == 1 {
            for k in 0..h {
                full[k] = Complex64::new(g[(c * per_c + k) * 2], g[(c * per_c + k) * 2 + 1]);
            }
            fft::fft_inplace(&mut full, true);
        } else {
            for kx in 0..n {
                for ky in 0..h {
                    let src = (c * per_c + kx * h + ky) * 2;
                    full[kx * n + ky] = Complex64::new(g[src], g[src + 1]);
                }
            }
            fft::fft2_inplace(&mut full, n, n, true);
        }
        for (j, v) in full.iter().enumerate() {
            out[c * spatial + j] = v.re;
        }
    }
    out
}

/// Adjoint of the unitary irfft: forward transform of the cotangent field,
/// interior bins doubled (they stand for a conjugate pair), Nyquist-edge
/// imaginary parts dropped in 1D.
fn irfft_adjoint(g: &[f64], in_len: usize, dims: usize, n: usize) -> Vec<f64> {
    let h = fft::half_len(n);
    let per_c = if dims == 1 { h } else { n * h };
    let spatial = n.pow(dims as u32);
    let channels = in_len / (per_c * 2);
    let mut out = vec![0.0; in_len];
    for c in 0..channels {
        let field = &g[c * spatial..(c + 1) * spatial];
        if dims == 1 {
            let half = fft::rfft_1d(field);
            for (k, v) in half.iter().enumerate() {
                let factor = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                let edge = k == 0 || k == n / 2;
                out[(c * per_c + k) * 2] = factor * v.re;
                out[(c * per_c + k) * 2 + 1] = if edge { 0.0 } else { factor * v.im };
            }
        } else {
            let half = fft::rfft_2d(field, n);
            for kx in 0..n {
                for ky in 0..h {
                    let factor = if ky == 0 || ky == n / 2 { 1.0 } else { 2.0 };
                    let v = half[kx * h + ky];
                    out[(c * per_c + kx * h + ky) * 2] = factor * v.re;
                    out[(c * per_c + kx * h + ky) * 2 + 1] = factor * v.im;
                }
            }
        }
    }
    out
}

/// `(subset_flat_index, full_flat_index)` pairs mapping the `m_eff` corner
/// blocks into the `m` blocks.
fn subset_index_pairs(dims: usize, m: usize, m_eff: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    match dims {
        1 => {
            for k in 0..m_eff {
                pairs.push((k, k));
            }
        }
        _ => {
            for b in 0..2 {
                for kx in 0..m_eff {
                    for ky in 0..m_eff {
                        let sub = (b * m_eff + kx) * m_eff + ky;
                        let full = (b * m + kx) * m + ky;
                        pairs.push((sub, full));
                    }
                }
            }
        }
    }
    pairs
}

/// Copies the retained corner modes out of an interleaved half spectrum.
fn gather_modes(xd: &[f64], channels: usize, dims: usize, n: usize, m_eff: usize) -> Vec<f64> {
    let h = fft::half_len(n);
    let per_c = if dims == 1 { h } else { n * h };
    let k_out = mode_count(dims, m_eff);
    let mut data = vec![0.0; channels * k_out * 2];
    for c in 0..channels {
        match dims {
            1 => {
                for k in 0..m_eff {
                    data[(c * k_out + k) * 2] = xd[(c * per_c + k) * 2];
                    data[(c * k_out + k) * 2 + 1] = xd[(c * per_c + k) * 2 + 1];
                }
            }
            _ => {
                for b in 0..2 {
                    for kx in 0..m_eff {
                        let row = if b == 0 { kx } else { n - m_eff + kx };
                        for ky in 0..m_eff {
                            let dst = (c * k_out + (b * m_eff + kx) * m_eff + ky) * 2;
                            let src = (c * per_c + row * h + ky) * 2;
                            data[dst] = xd[src];
                            data[dst + 1] = xd[src + 1];
                        }
                    }
                }
            }
        }
    }
    data
}

/// Transpose of [`gather_modes`].
fn scatter_modes(xd: &[f64], channels: usize, dims: usize, n: usize, m_eff: usize) -> Vec<f64> {
    let h = fft::half_len(n);
    let per_c = if dims == 1 { h } else { n * h };
    let k_in = mode_count(dims, m_eff);
    let mut data = vec![0.0; channels * per_c * 2];
    for c in 0..channels {
        match dims {
            1 => {
                for k in 0..m_eff {
                    data[(c * per_c + k) * 2] = xd[(c * k_in + k) * 2];
                    data[(c * per_c + k) * 2 + 1] = xd[(c * k_in + k) * 2 + 1];
                }
            }
            _ => {
                for b in 0..2 {
                    for kx in 0..m_eff {
                        let row = if b == 0 { kx } else { n - m_eff + kx };
                        for ky in 0..m_eff {
                            let dst = (c * per_c + row * h + ky) * 2;
                            let src = (c * k_in + (b * m_eff + kx) * m_eff + ky) * 2;
                            data[dst] = xd[src];
                            data[dst + 1] = xd[src + 1];
                        }
                    }
                }
            }
        }
    }
    data
}

#[cfg(test)]
mod tests;
