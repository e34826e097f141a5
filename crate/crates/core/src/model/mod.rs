//! The resolution-agnostic Fourier neural operator and the fixed-anchor
//! band-limited inference wrapper.
//!
//! One parameter set accepts input at any grid size: the spectral layers act
//! on the lowest `min(max_modes, n/2)` wavenumbers per axis and zero the
//! rest, so only the retained-mode weights ever engage. Lifting and
//! projection are pointwise two-layer MLPs; optional coordinate channels are
//! appended to the input so non-translation-invariant targets (Dirichlet
//! boundaries) stay learnable.

pub mod checkpoint;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::spectral::{self, GridField};
use crate::tensor::{ParamStore, ParamTensor, Tape, Tx};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoSpec {
    /// Spatial dimensionality of the fields, 1 or 2.
    pub dims: usize,
    /// Channel count inside the spectral layers.
    pub width: usize,
    /// Number of spectral layers.
    pub layers: usize,
    /// Retained wavenumbers per axis (`m`).
    pub max_modes: usize,
    /// Hidden width of the lifting MLP.
    pub lift_dim: usize,
    /// Hidden width of the projection MLP.
    pub proj_dim: usize,
    /// Append normalized grid coordinates as input channels.
    pub coord_channels: bool,
}

impl FnoSpec {
    /// Reference-implementation defaults; `max_modes` is typically set to
    /// half the training resolution.
    pub fn with_defaults(dims: usize, max_modes: usize) -> FnoSpec {
        FnoSpec {
            dims,
            width: 32,
            layers: 4,
            max_modes,
            lift_dim: 128,
            proj_dim: 128,
            coord_channels: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims != 1 && self.dims != 2 {
            return Err(Error::Usage(format!("fno dims must be 1 or 2, got {}", self.dims)));
        }
        if self.max_modes < 1 || self.layers < 1 || self.width < 1 {
            return Err(Error::Usage(format!(
                "fno needs max_modes >= 1, layers >= 1, width >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        1 + if self.coord_channels { self.dims } else { 0 }
    }

    /// Complex entries per channel pair in one layer's spectral weights.
    pub fn modes_per_pair(&self) -> usize {
        match self.dims {
            1 => self.max_modes,
            _ => 2 * self.max_modes * self.max_modes,
        }
    }
}

/// Trainable state: an [`FnoSpec`] plus its named parameter tensors.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub spec: FnoSpec,
    pub seed: u64,
    pub store: ParamStore,
}

fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}

/// Deterministic parameter initialization: complex-Gaussian spectral weights
/// scaled by `1/width^2`, Kaiming-style uniform affine maps. Each tensor has
/// its own named substream, so layout changes cannot shuffle draws.
pub fn init_params(spec: &FnoSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut store = ParamStore::default();
    fn affine(store: &mut ParamStore, seed: u64, name: &str, out_c: usize, in_c: usize) {
        let mut rng = substream(seed, &format!("init/{name}"));
        let w = uniform_init(&mut rng, out_c * in_c, in_c);
        let b = uniform_init(&mut rng, out_c, in_c);
        store.push(ParamTensor::new(format!("{name}/w"), vec![out_c, in_c], w));
        store.push(ParamTensor::new(format!("{name}/b"), vec![out_c], b));
    }
    affine(&mut store, seed, "lift0", spec.lift_dim, spec.in_channels());
    affine(&mut store, seed, "lift1", spec.width, spec.lift_dim);
    for layer in 0..spec.layers {
        let name = format!("layer{layer}/spectral");
        let mut rng = substream(seed, &format!("init/{name}"));
        let k = spec.modes_per_pair();
        let scale = 1.0 / (spec.width * spec.width) as f64;
        let data: Vec<f64> = (0..spec.width * spec.width * k * 2)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * scale)
            .collect();
        store.push(ParamTensor::new(
            name,
            vec![spec.width, spec.width, k, 2],
            data,
        ));
        affine(&mut store, seed, &format!("layer{layer}/bypass"), spec.width, spec.width);
    }
    affine(&mut store, seed, "proj0", spec.proj_dim, spec.width);
    affine(&mut store, seed, "proj1", 1, spec.proj_dim);
    Ok(ModelParams {
        spec: spec.clone(),
        seed,
        store,
    })
}

impl ModelParams {
    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.store.tensors.iter().position(|t| t.name == name)
    }
}

/// One spectral convolution: real FFT, complex channel mixing on the lowest
/// `min(m, n/2)` wavenumbers per axis (both Hermitian corner blocks in 2D),
/// zeros elsewhere, inverse FFT. Differentiable end to end.
pub fn spectral_conv(
    tape: &mut Tape,
    x: Tx,
    weights: Tx,
    dims: usize,
    m: usize,
    n: usize,
) -> Result<Tx> {
    let m_eff = m.min(n / 2);
    let spec = tape.rfft(x, dims)?;
    let sel = tape.mode_select(spec, dims, m)?;
    let w_eff = tape.mode_subset(weights, dims, m, m_eff)?;
    let mixed = tape.mode_contract(w_eff, sel)?;
    let scat = tape.mode_scatter(mixed, dims, n)?;
    tape.irfft(scat, dims, n)
}

/// Records the full forward pass for one sample on `tape`, returning the
/// `[1, spatial...]` output tensor. `values` has `n^dims` entries.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    values: &[f64],
    n: usize,
) -> Result<Tx> {
    let spec = &params.spec;
    let spatial = n.pow(spec.dims as u32);
    if values.len() != spatial {
        return Err(Error::shape(
            "fno_forward",
            format!("input has {} values, expected {n}^{}", values.len(), spec.dims),
        ));
    }
    if n < 2 {
        return Err(Error::Usage(format!("fno input resolution must be >= 2, got {n}")));
    }
    let mut data = Vec::with_capacity(spec.in_channels() * spatial);
    data.extend_from_slice(values);
    if spec.coord_channels {
        match spec.dims {
            1 => data.extend((0..n).map(|j| j as f64 / n as f64)),
            _ => {
                data.extend((0..spatial).map(|idx| (idx / n) as f64 / n as f64));
                data.extend((0..spatial).map(|idx| (idx % n) as f64 / n as f64));
            }
        }
    }
    let mut shape = vec![spec.in_channels()];
    shape.extend(std::iter::repeat_n(n, spec.dims));
    let x = tape.constant(data, shape);

    let p = |tape: &mut Tape, name: &str| -> Result<Tx> {
        let idx = params
            .tensor_index(name)
            .ok_or_else(|| Error::Data(format!("missing parameter tensor {name}")))?;
        Ok(tape.param(&params.store, idx))
    };

    // lifting
    let w = p(tape, "lift0/w")?;
    let b = p(tape, "lift0/b")?;
    let mut h = tape.channel_matmul(w, x)?;
    h = tape.bias_add(h, b)?;
    h = tape.gelu(h);
    let w = p(tape, "lift1/w")?;
    let b = p(tape, "lift1/b")?;
    h = tape.channel_matmul(w, h)?;
    h = tape.bias_add(h, b)?;

    for layer in 0..spec.layers {
        let r = p(tape, &format!("layer{layer}/spectral"))?;
        let conv = spectral_conv(tape, h, r, spec.dims, spec.max_modes, n)?;
        let wb = p(tape, &format!("layer{layer}/bypass/w"))?;
        let bb = p(tape, &format!("layer{layer}/bypass/b"))?;
        let mut byp = tape.channel_matmul(wb, h)?;
        byp = tape.bias_add(byp, bb)?;
        let z = tape.add(conv, byp)?;
        h = if layer + 1 == spec.layers { z } else { tape.gelu(z) };
    }

    // projection
    let w = p(tape, "proj0/w")?;
    let b = p(tape, "proj0/b")?;
    let mut out = tape.channel_matmul(w, h)?;
    out = tape.bias_add(out, b)?;
    out = tape.gelu(out);
    let w = p(tape, "proj1/w")?;
    let b = p(tape, "proj1/b")?;
    out = tape.channel_matmul(w, out)?;
    tape.bias_add(out, b)
}

/// Batch inference; every field must share one resolution. The parameter set
/// is resolution-agnostic: output resolution equals input resolution.
pub fn fno_forward(params: &ModelParams, inputs: &[GridField]) -> Result<Vec<GridField>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let n = inputs[0].resolution;
    for f in inputs {
        if f.resolution != n || f.dims != params.spec.dims {
            return Err(Error::shape(
                "fno_forward",
                format!(
                    "batch mixes {}^{} with {}^{}",
                    f.resolution, f.dims, n, params.spec.dims
                ),
            ));
        }
    }
    let outputs = crate::par_map_indexed(inputs.len(), |i| -> Result<GridField> {
        let mut tape = Tape::new();
        let out = forward_on_tape(&mut tape, params, &inputs[i].values, n)?;
        GridField::new(params.spec.dims, n, tape.data(out).to_vec())
    });
    outputs.into_iter().collect()
}

/// CROP-style fixed-resolution lifting: inputs are resampled to the anchor
/// resolution, pushed through the inner model, and resampled back, so the
/// output spectrum is structurally zero above `anchor/2`.
#[derive(Debug, Clone)]
pub struct BandLimitWrapper {
    pub inner: ModelParams,
    pub anchor_resolution: usize,
}

pub fn bandlimited_forward(
    wrapper: &BandLimitWrapper,
    inputs: &[GridField],
) -> Result<Vec<GridField>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let original = inputs[0].resolution;
    let lifted: Vec<GridField> = inputs
        .iter()
        .map(|f| spectral::resample(f, wrapper.anchor_resolution))
        .collect::<Result<_>>()?;
    let out = fno_forward(&wrapper.inner, &lifted)?;
    out.iter().map(|f| spectral::resample(f, original)).collect()
}

#[cfg(test)]
mod tests;
