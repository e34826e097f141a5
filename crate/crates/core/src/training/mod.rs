//! Loss functions, the training loop, and run-directory artifacts.
//!
//! The data loss is plain MSE. The physics loss penalizes the governing
//! PDE's residual evaluated on the prediction: the Darcy residual uses the
//! generator's own five-point stencil on interior nodes; the Burgers
//! residual uses a one-shot midpoint form in time with pseudo-spectral space
//! derivatives (the model maps `u0 -> uT` with no intermediate slices). The
//! dual objective is `(1-w) * data + w * physics`.
//!
//! Mixed-resolution training keeps batches resolution-homogeneous: samples
//! are bucketed by resolution and each step consumes one bucket's batch,
//! with buckets visited in proportion to their size.

pub mod mix;

pub use mix::{compose_mix, MixEntry, MixSpec, TrainSet};

use crate::error::{Error, Result};
use crate::generators::{darcy, GridPack, PackMeta};
use crate::model::{forward_on_tape, ModelParams};
use crate::rng::substream;
use crate::spectral::GridField;
use crate::tensor::{adam_step, AdamState, Gradients, Tape, Tx};
use rand::seq::SliceRandom;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

/// Samples per parallel gradient chunk. Fixed (not core-count dependent), so
/// reduction order and results are identical on any machine.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "data")]
    Data,
    #[serde(rename = "data+physics")]
    DataPhysics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdeKind {
    Darcy,
    Burgers,
}

/// What the physics residual needs to know about the dataset.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsContext {
    pub pde: PdeKind,
    pub nu: f64,
    pub t_final: f64,
}

impl PhysicsContext {
    pub fn from_pack(meta: &PackMeta) -> Result<PhysicsContext> {
        let pde = match meta.pde.as_str() {
            "darcy" => PdeKind::Darcy,
            "burgers" => PdeKind::Burgers,
            other => {
                return Err(Error::Data(format!(
                    "unknown pde `{other}`: physics loss supports darcy and burgers"
                )))
            }
        };
        Ok(PhysicsContext {
            pde,
            nu: meta.params.nu.unwrap_or(1e-3),
            t_final: meta.params.t_final.unwrap_or(1.0),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    /// Physics weight in `[0, 1)`.
    pub w: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Darcy data-loss row of the tuned defaults.
    pub fn darcy_defaults() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 128,
            epochs: 50,
            loss: LossKind::Data,
            w: 0.0,
            seed: 0,
        }
    }

    /// Burgers data-loss row of the tuned defaults.
    pub fn burgers_defaults() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            ..TrainConfig::darcy_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Usage(format!(
                "epochs and batch size must be >= 1, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::Usage(format!(
                "physics weight must satisfy 0 <= w < 1, got {}",
                self.w
            )));
        }
        Ok(())
    }
}

/// Mean squared error between a prediction on the tape and label values.
pub fn data_loss_on_tape(tape: &mut Tape, pred: Tx, label: &[f64]) -> Result<Tx> {
    let shape = tape.shape(pred).to_vec();
    if shape.iter().product::<usize>() != label.len() {
        return Err(Error::shape(
            "data_loss",
            format!("prediction {shape:?} vs label of {} values", label.len()),
        ));
    }
    let l = tape.constant(label.to_vec(), shape);
    let d = tape.sub(pred, l)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

fn burgers_deriv_diag(n: usize, order: u32, scale: f64) -> Vec<Complex64> {
    (0..=n / 2)
        .map(|k| {
            if order % 2 == 1 && k == n / 2 {
                return Complex64::default();
            }
            Complex64::new(0.0, TAU * k as f64).powu(order) * scale
        })
        .collect()
}

/// Mean squared PDE residual of the prediction, differentiable w.r.t. it.
///
/// Darcy: `-div(a grad u_pred) - f` on interior nodes, boundary ring
/// excluded. Burgers: `(u_pred - u0)/T + d(ubar^2/2)/dx - (nu/pi)
/// d2(ubar)/dx2` with the midpoint state `ubar = (u_pred + u0)/2`.
pub fn physics_loss_on_tape(
    tape: &mut Tape,
    pred: Tx,
    input: &[f64],
    ctx: &PhysicsContext,
) -> Result<Tx> {
    let shape = tape.shape(pred).to_vec();
    match ctx.pde {
        PdeKind::Darcy => {
            if shape.len() != 3 || shape[0] != 1 || shape[1] != shape[2] {
                return Err(Error::shape(
                    "physics_loss",
                    format!("darcy residual expects [1, n, n], got {shape:?}"),
                ));
            }
            let n = shape[1];
            if input.len() != n * n {
                return Err(Error::shape(
                    "physics_loss",
                    format!("coefficient field has {} values, expected {}", input.len(), n * n),
                ));
            }
            let stencil = darcy::DarcyStencil {
                a: input.to_vec(),
                n,
            };
            let flux = tape.linear_map(pred, Box::new(stencil))?;
            let r = tape.offset(flux, -darcy::FORCING);
            let sq = tape.mul(r, r)?;
            Ok(tape.mean(sq))
        }
        PdeKind::Burgers => {
            if shape.len() != 2 || shape[0] != 1 {
                return Err(Error::shape(
                    "physics_loss",
                    format!("burgers residual expects [1, n], got {shape:?}"),
                ));
            }
            let n = shape[1];
            if input.len() != n {
                return Err(Error::shape(
                    "physics_loss",
                    format!("u0 has {} values, expected {n}", input.len()),
                ));
            }
            let u0 = tape.constant(input.to_vec(), vec![1, n]);
            let sum = tape.add(pred, u0)?;
            let ubar = tape.scale(sum, 0.5);
            let dt_term = {
                let d = tape.sub(pred, u0)?;
                tape.scale(d, 1.0 / ctx.t_final)
            };
            let flux_term = {
                let sq = tape.mul(ubar, ubar)?;
                let half_sq = tape.scale(sq, 0.5);
                let spec = tape.rfft(half_sq, 1)?;
                let d1 = tape.mode_diag_mul(spec, burgers_deriv_diag(n, 1, 1.0))?;
                tape.irfft(d1, 1, n)?
            };
            let diffusion_term = {
                let spec = tape.rfft(ubar, 1)?;
                let d2 = tape.mode_diag_mul(
                    spec,
                    burgers_deriv_diag(n, 2, ctx.nu / std::f64::consts::PI),
                )?;
                tape.irfft(d2, 1, n)?
            };
            let adv = tape.add(dt_term, flux_term)?;
            let r = tape.sub(adv, diffusion_term)?;
            let sq = tape.mul(r, r)?;
            Ok(tape.mean(sq))
        }
    }
}

/// `(1-w) * data + w * physics` on the tape. `w = 0` skips the physics
/// branch entirely, so it equals the data loss bitwise.
pub fn dual_loss_on_tape(
    tape: &mut Tape,
    pred: Tx,
    label: &[f64],
    input: &[f64],
    ctx: &PhysicsContext,
    w: f64,
) -> Result<Tx> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::Usage(format!("physics weight must satisfy 0 <= w < 1, got {w}")));
    }
    let data = data_loss_on_tape(tape, pred, label)?;
    if w == 0.0 {
        return Ok(data);
    }
    let phys = physics_loss_on_tape(tape, pred, input, ctx)?;
    let a = tape.scale(data, 1.0 - w);
    let b = tape.scale(phys, w);
    tape.add(a, b)
}

fn batch_mean<F>(count: usize, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64>,
{
    if count == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let mut acc = 0.0;
    for i in 0..count {
        acc += f(i)?;
    }
    Ok(acc / count as f64)
}

/// Batch MSE over fields (mean over batch and grid).
pub fn data_loss(preds: &[GridField], labels: &[GridField]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(
            "data_loss",
            format!("{} predictions vs {} labels", preds.len(), labels.len()),
        ));
    }
    batch_mean(preds.len(), |i| {
        let (p, l) = (&preds[i], &labels[i]);
        if p.values.len() != l.values.len() {
            return Err(Error::shape(
                "data_loss",
                format!("sample {i}: {} vs {} values", p.values.len(), l.values.len()),
            ));
        }
        Ok(p.values
            .iter()
            .zip(&l.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.values.len() as f64)
    })
}

fn field_shape(f: &GridField) -> Vec<usize> {
    let mut shape = vec![1];
    shape.extend(std::iter::repeat_n(f.resolution, f.dims));
    shape
}

/// Batch physics residual loss (mean over batch).
pub fn physics_loss(preds: &[GridField], inputs: &[GridField], ctx: &PhysicsContext) -> Result<f64> {
    if preds.len() != inputs.len() {
        return Err(Error::shape(
            "physics_loss",
            format!("{} predictions vs {} inputs", preds.len(), inputs.len()),
        ));
    }
    batch_mean(preds.len(), |i| {
        let mut tape = Tape::new();
        let pred = tape.constant(preds[i].values.clone(), field_shape(&preds[i]));
        let loss = physics_loss_on_tape(&mut tape, pred, &inputs[i].values, ctx)?;
        Ok(tape.data(loss)[0])
    })
}

/// Batch dual objective (mean over batch).
pub fn dual_loss(
    preds: &[GridField],
    labels: &[GridField],
    inputs: &[GridField],
    ctx: &PhysicsContext,
    w: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&w) {
        return Err(Error::Usage(format!("physics weight must satisfy 0 <= w < 1, got {w}")));
    }
    if w == 0.0 {
        return data_loss(preds, labels);
    }
    batch_mean(preds.len(), |i| {
        let mut tape = Tape::new();
        let pred = tape.constant(preds[i].values.clone(), field_shape(&preds[i]));
        let loss = dual_loss_on_tape(
            &mut tape,
            pred,
            &labels[i].values,
            &inputs[i].values,
            ctx,
            w,
        )?;
        Ok(tape.data(loss)[0])
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `(resolution, validation MSE)` per available validation pack.
    pub val_loss: Vec<(usize, f64)>,
    /// Wall time; excluded from the deterministic log file.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Mean MSE of the model over a pack.
pub fn evaluate_mse(params: &ModelParams, pack: &GridPack) -> Result<f64> {
    let per_sample = crate::par_map_indexed(pack.count, |i| -> Result<f64> {
        let mut tape = Tape::new();
        let pred = forward_on_tape(&mut tape, params, pack.input(i), pack.resolution)?;
        let loss = data_loss_on_tape(&mut tape, pred, pack.label(i))?;
        Ok(tape.data(loss)[0])
    });
    let mut acc = 0.0;
    for v in per_sample {
        acc += v?;
    }
    Ok(acc / pack.count as f64)
}

/// Trains `params` on the composed `set`, drawing samples from `packs`.
/// Validation MSE is recorded every epoch for every pack in `val_packs`.
/// Deterministic given the config seed: same seed, same epoch log, same
/// final parameters, independent of worker count.
pub fn train(
    mut params: ModelParams,
    packs: &BTreeMap<usize, GridPack>,
    set: &TrainSet,
    val_packs: &BTreeMap<usize, GridPack>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    for &(res, _) in &set.counts {
        if !packs.contains_key(&res) {
            return Err(Error::Data(format!("training set references missing pack at {res}")));
        }
    }
    let mut adam = AdamState::new(&params.store);
    let mut log = Vec::with_capacity(config.epochs);
    let buckets = set.buckets();
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        let start = std::time::Instant::now();
        let mut schedule: Vec<(usize, Vec<usize>)> = Vec::new();
        for (&res, indices) in &buckets {
            let mut order = indices.clone();
            order.shuffle(&mut substream(
                config.seed,
                &format!("train/epoch{epoch}/order/{res}"),
            ));
            for chunk in order.chunks(config.batch_size) {
                schedule.push((res, chunk.to_vec()));
            }
        }
        schedule.shuffle(&mut substream(
            config.seed,
            &format!("train/epoch{epoch}/schedule"),
        ));

        let mut loss_acc = 0.0;
        let mut seen = 0usize;
        for (res, batch) in &schedule {
            step += 1;
            let pack = &packs[res];
            let ctx = match config.loss {
                LossKind::Data => None,
                LossKind::DataPhysics => Some(PhysicsContext::from_pack(&pack.meta)?),
            };
            let batch_len = batch.len();
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let results = crate::par_map_indexed(chunks.len(), |ci| -> Result<(Gradients, f64)> {
                let mut grads = Gradients::zeros_like(&params.store);
                let mut losses = 0.0;
                for &idx in chunks[ci] {
                    let mut tape = Tape::new();
                    let pred = forward_on_tape(&mut tape, &params, pack.input(idx), *res)?;
                    let loss = match &ctx {
                        None => data_loss_on_tape(&mut tape, pred, pack.label(idx))?,
                        Some(ctx) => dual_loss_on_tape(
                            &mut tape,
                            pred,
                            pack.label(idx),
                            pack.input(idx),
                            ctx,
                            config.w,
                        )?,
                    };
                    losses += tape.data(loss)[0];
                    tape.backward(loss)?;
                    tape.accumulate_param_grads(&mut grads, 1.0);
                }
                Ok((grads, losses))
            });
            params.store.zero_grads();
            let mut batch_loss = 0.0;
            for r in results {
                let (grads, losses) = r?;
                params.store.add_grads(&grads, 1.0 / batch_len as f64);
                batch_loss += losses;
            }
            batch_loss /= batch_len as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became non-finite at epoch {epoch}, step {step} (resolution {res})"
                )));
            }
            adam_step(
                &mut params.store,
                &mut adam,
                config.lr,
                config.weight_decay,
                (0.9, 0.999),
                1e-8,
                step,
            )?;
            loss_acc += batch_loss * batch_len as f64;
            seen += batch_len;
        }

        let mut val_loss = Vec::new();
        for (&res, pack) in val_packs {
            val_loss.push((res, evaluate_mse(&params, pack)?));
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_acc / seen.max(1) as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome { params, log })
}

/// Serialized run layout: `config.json`, `log.csv` (deterministic),
/// `timings.csv` (wall clock, not deterministic), `checkpoint/`.
pub fn write_run_dir(
    dir: &Path,
    config: &TrainConfig,
    mix: Option<&MixSpec>,
    outcome: &TrainOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = serde_json::json!({ "train": config, "mix": mix });
    std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;

    let mut log = csv::Writer::from_path(dir.join("log.csv")).map_err(csv_err)?;
    let mut header = vec!["epoch".to_string(), "train_loss".to_string()];
    if let Some(first) = outcome.log.first() {
        for (res, _) in &first.val_loss {
            header.push(format!("val_loss@{res}"));
        }
    }
    log.write_record(&header).map_err(csv_err)?;
    for row in &outcome.log {
        let mut rec = vec![row.epoch.to_string(), format_f64(row.train_loss)];
        for (_, v) in &row.val_loss {
            rec.push(format_f64(*v));
        }
        log.write_record(&rec).map_err(csv_err)?;
    }
    log.flush()?;

    let mut timings = csv::Writer::from_path(dir.join("timings.csv")).map_err(csv_err)?;
    timings.write_record(["epoch", "seconds"]).map_err(csv_err)?;
    for row in &outcome.log {
        timings
            .write_record([row.epoch.to_string(), format!("{:.3}", row.seconds)])
            .map_err(csv_err)?;
    }
    timings.flush()?;

    let lineage = serde_json::json!({ "train": config, "mix": mix });
    crate::model::checkpoint::save(&outcome.params, &dir.join("checkpoint"), Some(lineage))?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv write failed: {e}"))
}

/// Shortest exact decimal representation (ryu), stable across runs.
pub(crate) fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // f64's Display already uses the shortest round-trip form
    format!("{v}")
}

#[cfg(test)]
mod tests;
