//! Experiment protocols: resolution interpolation, information
//! extrapolation, zero-shot cross-resolution sweeps, multi-resolution mix
//! sweeps, retained-mode sweeps, and data-cost/loss Pareto tables.
//!
//! Every protocol trains one model per row setting and evaluates it against
//! every column setting, recording a mean-MSE heatmap and a residual
//! spectrum per cell. Rows, columns, and seeds are all derived from the
//! plan, so a rerun of the same plan reproduces every cell bitwise.

pub mod report;

pub use report::write_report;

use crate::error::{Error, Result};
use crate::generators::{derive_resolutions, GridPack};
use crate::model::{
    bandlimited_forward, fno_forward, init_params, BandLimitWrapper, FnoSpec, ModelParams,
};
use crate::spectral::{spectrum_report, GridField, SpectrumReport};
use crate::training::{
    self, compose_mix, EpochLog, LossKind, MixSpec, TrainConfig, TrainSet,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Interpolation,
    Extrapolation,
    CrossResolution,
    MixSweep,
    ModesSweep,
    LossCompare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrapperKind {
    #[default]
    None,
    Bandlimit,
}

/// Architecture knobs; `max_modes = None` means half the training
/// resolution, the initialize-over-the-full-band default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub width: usize,
    pub layers: usize,
    pub lift_dim: usize,
    pub proj_dim: usize,
    pub max_modes: Option<usize>,
    pub coord_channels: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            width: 32,
            layers: 4,
            lift_dim: 128,
            proj_dim: 128,
            max_modes: None,
            coord_channels: true,
        }
    }
}

impl ModelSettings {
    pub fn spec_for(&self, dims: usize, train_resolution: usize) -> FnoSpec {
        FnoSpec {
            dims,
            width: self.width,
            layers: self.layers,
            max_modes: self.max_modes.unwrap_or((train_resolution / 2).max(1)),
            lift_dim: self.lift_dim,
            proj_dim: self.proj_dim,
            coord_channels: self.coord_channels,
        }
    }
}

/// Training-loop knobs; unset fields fall back to the tuned per-PDE rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    /// Cap on training samples drawn from the pack (default: all).
    pub train_samples: Option<usize>,
    /// Cap on evaluation samples (default: all).
    pub test_samples: Option<usize>,
}

impl TrainSettings {
    fn config_for(&self, pde: &str, loss: LossKind, w: f64, seed: u64) -> TrainConfig {
        let mut cfg = match pde {
            "burgers" => TrainConfig::burgers_defaults(),
            _ => TrainConfig::darcy_defaults(),
        };
        cfg.loss = loss;
        cfg.w = w;
        cfg.seed = seed;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(wd) = self.weight_decay {
            cfg.weight_decay = wd;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        cfg
    }
}

/// A JSON-serializable experiment description; the CLI's `--plan` format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: PlanKind,
    /// Master-resolution training pack path.
    pub train_pack: String,
    /// Master-resolution held-out pack path.
    pub test_pack: String,
    /// Band limit for interpolation (cycles per domain).
    #[serde(default)]
    pub limit: Option<usize>,
    /// Fixed grid size for extrapolation.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Row settings: resolutions, or low-pass limits for extrapolation.
    #[serde(default)]
    pub train_axis: Vec<usize>,
    /// Column settings; defaults to `train_axis`.
    #[serde(default)]
    pub test_axis: Vec<usize>,
    /// Mix proportions over `train_axis` for mix sweeps; `pairwise: true`
    /// additionally enumerates all dual-resolution ratios.
    #[serde(default)]
    pub mixes: Vec<Vec<f64>>,
    #[serde(default)]
    pub pairwise: bool,
    #[serde(default)]
    pub pairwise_ratios: Vec<f64>,
    /// Retained-mode values for modes sweeps.
    #[serde(default)]
    pub m_values: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub w: f64,
    #[serde(default)]
    pub wrapper: WrapperKind,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub total_samples: Option<usize>,
    pub seed: u64,
}

fn default_loss() -> LossKind {
    LossKind::Data
}

/// One trained-vs-tested cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub train_setting: usize,
    pub test_setting: usize,
    pub mse: f64,
    pub relative_l2: f64,
    pub spectrum: SpectrumReport,
    /// Set when the cell (or its row's training) failed; `mse` is NaN then.
    pub error: Option<String>,
}

/// Mean test MSE over a train-axis x test-axis grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapReport {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// Row-major `rows.len() x cols.len()`.
    pub cells: Vec<CellResult>,
    #[serde(skip)]
    pub row_logs: Vec<Vec<EpochLog>>,
}

impl HeatmapReport {
    pub fn cell(&self, row: usize, col: usize) -> &CellResult {
        &self.cells[row * self.cols.len() + col]
    }

    pub fn max_mse(&self) -> f64 {
        self.cells.iter().map(|c| c.mse).fold(f64::NAN, f64::max)
    }
}

/// Data-cost vs. loss table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoRow {
    pub label: String,
    pub avg_pixels: f64,
    pub per_resolution_mse: Vec<(usize, f64)>,
    pub max_mse: f64,
    pub pareto_optimal: bool,
}

fn relative_l2(preds: &[GridField], labels: &[GridField]) -> f64 {
    let mut acc = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        let num: f64 = p
            .values
            .iter()
            .zip(&l.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = l.values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        acc += num / den;
    }
    acc / preds.len().max(1) as f64
}

fn take_fields(pack: &GridPack, cap: Option<usize>) -> (Vec<GridField>, Vec<GridField>) {
    let n = cap.map_or(pack.count, |c| c.min(pack.count));
    let inputs = (0..n).map(|i| pack.input_field(i)).collect();
    let labels = (0..n).map(|i| pack.label_field(i)).collect();
    (inputs, labels)
}

fn subset_pack(pack: &GridPack, cap: Option<usize>) -> GridPack {
    match cap {
        None => pack.clone(),
        Some(c) if c >= pack.count => pack.clone(),
        Some(c) => {
            let l = pack.sample_len();
            GridPack {
                dims: pack.dims,
                resolution: pack.resolution,
                count: c,
                inputs: pack.inputs[..c * l].to_vec(),
                labels: pack.labels[..c * l].to_vec(),
                meta: pack.meta.clone(),
            }
        }
    }
}

/// Evaluates a trained model (optionally band-limit wrapped at its training
/// resolution) against one test pack.
fn evaluate_cell(
    params: &ModelParams,
    wrapper: WrapperKind,
    anchor: usize,
    test_pack: &GridPack,
    cap: Option<usize>,
) -> Result<(f64, f64, SpectrumReport)> {
    let (inputs, labels) = take_fields(test_pack, cap);
    let preds = match wrapper {
        WrapperKind::None => fno_forward(params, &inputs)?,
        WrapperKind::Bandlimit => {
            let wrapped = BandLimitWrapper {
                inner: params.clone(),
                anchor_resolution: anchor,
            };
            bandlimited_forward(&wrapped, &inputs)?
        }
    };
    let mse = training::data_loss(&preds, &labels)?;
    let rel = relative_l2(&preds, &labels);
    let spectrum = spectrum_report(&preds, &labels)?;
    Ok((mse, rel, spectrum))
}

struct Row {
    setting: usize,
    result: Result<(ModelParams, Vec<EpochLog>)>,
}

/// Shared heatmap scaffolding: trains one model per row pack, evaluates on
/// every column pack. Row failures poison their row's cells but not others.
fn run_grid(
    rows: &[(usize, GridPack)],
    cols: &[(usize, GridPack)],
    plan: &ExperimentPlan,
    pde: &str,
    dims: usize,
    max_modes_for: impl Fn(usize) -> Option<usize>,
) -> Result<HeatmapReport> {
    let mut trained: Vec<Row> = Vec::new();
    for (setting, pack) in rows {
        let mut model_settings = plan.model.clone();
        if let Some(m) = max_modes_for(*setting) {
            model_settings.max_modes = Some(m);
        }
        let spec = model_settings.spec_for(dims, pack.resolution);
        let cfg = plan
            .train
            .config_for(pde, plan.loss, plan.w, plan.seed ^ (*setting as u64));
        let result = (|| {
            let train_pack = subset_pack(pack, plan.train.train_samples);
            let params = init_params(&spec, cfg.seed)?;
            let set = TrainSet {
                items: (0..train_pack.count).map(|i| (train_pack.resolution, i)).collect(),
                counts: vec![(train_pack.resolution, train_pack.count)],
            };
            let mut packs = BTreeMap::new();
            packs.insert(train_pack.resolution, train_pack);
            let out = training::train(params, &packs, &set, &BTreeMap::new(), &cfg)?;
            Ok((out.params, out.log))
        })();
        trained.push(Row {
            setting: *setting,
            result,
        });
    }

    let mut cells = Vec::with_capacity(rows.len() * cols.len());
    let mut row_logs = Vec::with_capacity(rows.len());
    for (row, row_pack) in trained.iter().zip(rows) {
        match &row.result {
            Ok((params, log)) => {
                row_logs.push(log.clone());
                for (col_setting, test) in cols {
                    let anchor = row_pack.1.resolution;
                    let cell = evaluate_cell(params, plan.wrapper, anchor, test, plan.train.test_samples);
                    cells.push(match cell {
                        Ok((mse, rel, spectrum)) => CellResult {
                            train_setting: row.setting,
                            test_setting: *col_setting,
                            mse,
                            relative_l2: rel,
                            spectrum,
                            error: None,
                        },
                        Err(e) => failed_cell(row.setting, *col_setting, e.to_string()),
                    });
                }
            }
            Err(e) => {
                row_logs.push(Vec::new());
                for (col_setting, _) in cols {
                    cells.push(failed_cell(row.setting, *col_setting, e.to_string()));
                }
            }
        }
    }
    Ok(HeatmapReport {
        rows: rows.iter().map(|r| r.0).collect(),
        cols: cols.iter().map(|c| c.0).collect(),
        cells,
        row_logs,
    })
}

fn failed_cell(train_setting: usize, test_setting: usize, error: String) -> CellResult {
    CellResult {
        train_setting,
        test_setting,
        mse: f64::NAN,
        relative_l2: f64::NAN,
        spectrum: SpectrumReport {
            modes: Vec::new(),
            label_energy: Vec::new(),
            pred_energy: Vec::new(),
            residual_energy: Vec::new(),
            normalized_residual: Vec::new(),
            n_samples: 0,
        },
        error: Some(error),
    }
}

/// Fixed frequency content, varying sampling rate: one model per training
/// resolution on limit-filtered data, each evaluated at every filtered test
/// resolution.
pub fn run_interpolation(
    master_train: &GridPack,
    master_test: &GridPack,
    limit: usize,
    plan: &ExperimentPlan,
) -> Result<HeatmapReport> {
    let train_axis = &plan.train_axis;
    let test_axis = if plan.test_axis.is_empty() { train_axis } else { &plan.test_axis };
    for &r in train_axis.iter().chain(test_axis) {
        if r < 2 * limit {
            return Err(Error::Usage(format!(
                "interpolation requires every resolution to resolve the band: {r} < 2*{limit}"
            )));
        }
    }
    let rows = derive_axis(master_train, train_axis, Some(limit), &plan.train_pack)?;
    let cols = derive_axis(master_test, test_axis, Some(limit), &plan.test_pack)?;
    run_grid(&rows, &cols, plan, &master_train.meta.pde, master_train.dims, |_| None)
}

/// Fixed sampling rate, varying frequency content: one model per training
/// low-pass limit at a fixed resolution, evaluated across test limits.
pub fn run_extrapolation(
    master_train: &GridPack,
    master_test: &GridPack,
    resolution: usize,
    plan: &ExperimentPlan,
) -> Result<HeatmapReport> {
    let train_axis = &plan.train_axis;
    let test_axis = if plan.test_axis.is_empty() { train_axis } else { &plan.test_axis };
    for &l in train_axis.iter().chain(test_axis) {
        if 2 * l > resolution {
            return Err(Error::Usage(format!(
                "extrapolation limit {l} exceeds Nyquist of resolution {resolution}"
            )));
        }
    }
    let mut rows = Vec::new();
    for &l in train_axis {
        let packs = derive_resolutions(master_train, &[resolution], Some(l), &plan.train_pack)?;
        rows.push((l, packs.into_iter().next().unwrap()));
    }
    let mut cols = Vec::new();
    for &l in test_axis {
        let packs = derive_resolutions(master_test, &[resolution], Some(l), &plan.test_pack)?;
        cols.push((l, packs.into_iter().next().unwrap()));
    }
    run_grid(&rows, &cols, plan, &master_train.meta.pde, master_train.dims, |_| None)
}

/// Simultaneously changing sampling rate and frequency content: native
/// (unfiltered) packs at each resolution, trained and cross-evaluated.
pub fn run_cross_resolution(
    master_train: &GridPack,
    master_test: &GridPack,
    plan: &ExperimentPlan,
) -> Result<HeatmapReport> {
    let train_axis = &plan.train_axis;
    let test_axis = if plan.test_axis.is_empty() { train_axis } else { &plan.test_axis };
    let rows = derive_axis(master_train, train_axis, None, &plan.train_pack)?;
    let cols = derive_axis(master_test, test_axis, None, &plan.test_pack)?;
    run_grid(&rows, &cols, plan, &master_train.meta.pde, master_train.dims, |_| None)
}

fn derive_axis(
    master: &GridPack,
    axis: &[usize],
    limit: Option<usize>,
    label: &str,
) -> Result<Vec<(usize, GridPack)>> {
    if axis.is_empty() {
        return Err(Error::Usage("experiment axis is empty".into()));
    }
    let packs = derive_resolutions(master, axis, limit, label)?;
    Ok(axis.iter().copied().zip(packs).collect())
}

/// Trains one model per mix over the derived resolution packs and evaluates
/// it at every test resolution. Returns one single-row heatmap per mix.
pub fn run_mix_sweep(
    master_train: &GridPack,
    master_test: &GridPack,
    mixes: &[MixSpec],
    plan: &ExperimentPlan,
) -> Result<Vec<(MixSpec, HeatmapReport)>> {
    if mixes.is_empty() {
        return Err(Error::Usage("mix sweep needs at least one mix".into()));
    }
    let resolutions = &plan.train_axis;
    let test_axis = if plan.test_axis.is_empty() { resolutions } else { &plan.test_axis };
    let train_rows = derive_axis(master_train, resolutions, None, &plan.train_pack)?;
    let cols = derive_axis(master_test, test_axis, None, &plan.test_pack)?;
    let train_packs: BTreeMap<usize, GridPack> = train_rows.into_iter().collect();
    let pack_refs: BTreeMap<usize, &GridPack> =
        train_packs.iter().map(|(&r, p)| (r, p)).collect();
    let pde = master_train.meta.pde.clone();
    let dims = master_train.dims;

    // one model spec for every mix: cap modes at the largest mixed
    // resolution unless the plan pins a value
    let top_res = *resolutions.iter().max().unwrap();
    let mut out = Vec::with_capacity(mixes.len());
    for (mi, mix) in mixes.iter().enumerate() {
        let spec = plan.model.spec_for(dims, top_res);
        let cfg = plan
            .train
            .config_for(&pde, plan.loss, plan.w, plan.seed ^ ((mi as u64 + 1) << 32));
        let set = compose_mix(&pack_refs, mix, cfg.seed)?;
        let params = init_params(&spec, cfg.seed)?;
        let outcome = training::train(params, &train_packs, &set, &BTreeMap::new(), &cfg)?;
        let mut cells = Vec::new();
        for (col, test) in &cols {
            let (mse, rel, spectrum) =
                evaluate_cell(&outcome.params, plan.wrapper, top_res, test, plan.train.test_samples)?;
            cells.push(CellResult {
                train_setting: mi,
                test_setting: *col,
                mse,
                relative_l2: rel,
                spectrum,
                error: None,
            });
        }
        out.push((
            mix.clone(),
            HeatmapReport {
                rows: vec![mi],
                cols: cols.iter().map(|c| c.0).collect(),
                cells,
                row_logs: vec![outcome.log],
            },
        ));
    }
    Ok(out)
}

/// Repeats a protocol for several retained-mode caps.
pub fn modes_sweep(
    master_train: &GridPack,
    master_test: &GridPack,
    plan: &ExperimentPlan,
) -> Result<Vec<(usize, HeatmapReport)>> {
    if plan.m_values.is_empty() {
        return Err(Error::Usage("modes sweep needs m_values".into()));
    }
    let mut out = Vec::new();
    for &m in &plan.m_values {
        let mut sub = plan.clone();
        sub.model.max_modes = Some(m);
        let report = match (plan.limit, plan.resolution) {
            (Some(limit), _) => run_interpolation(master_train, master_test, limit, &sub)?,
            (None, Some(res)) => run_extrapolation(master_train, master_test, res, &sub)?,
            (None, None) => run_cross_resolution(master_train, master_test, &sub)?,
        };
        out.push((m, report));
    }
    Ok(out)
}

/// Sorts runs by average data size and flags the Pareto-optimal ones: rows
/// with no other row strictly smaller in both data size and max loss.
pub fn pareto_report(runs: &[(MixSpec, HeatmapReport)], dims: usize) -> Result<Vec<ParetoRow>> {
    if runs.is_empty() {
        return Err(Error::Usage("pareto report needs at least one run".into()));
    }
    let mut rows: Vec<ParetoRow> = runs
        .iter()
        .map(|(mix, report)| {
            let label = mix
                .entries
                .iter()
                .map(|e| format!("{}:{:.3}", e.resolution, e.proportion))
                .collect::<Vec<_>>()
                .join(",");
            let per_resolution_mse: Vec<(usize, f64)> = report
                .cols
                .iter()
                .copied()
                .zip(report.cells.iter().map(|c| c.mse))
                .collect();
            ParetoRow {
                label,
                avg_pixels: mix.average_pixels(dims),
                max_mse: report.max_mse(),
                per_resolution_mse,
                pareto_optimal: false,
            }
        })
        .collect();
    for i in 0..rows.len() {
        let dominated = rows.iter().any(|other| {
            other.avg_pixels < rows[i].avg_pixels && other.max_mse < rows[i].max_mse
        });
        rows[i].pareto_optimal = !dominated;
    }
    rows.sort_by(|a, b| a.avg_pixels.total_cmp(&b.avg_pixels));
    Ok(rows)
}

/// Expands a plan's mix description into concrete mixes.
pub fn plan_mixes(plan: &ExperimentPlan, available: usize) -> Result<Vec<MixSpec>> {
    let total = plan.total_samples.unwrap_or(available);
    let mut mixes = Vec::new();
    if plan.pairwise {
        let ratios: &[f64] = if plan.pairwise_ratios.is_empty() {
            &[0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
        } else {
            &plan.pairwise_ratios
        };
        for (i, &lo) in plan.train_axis.iter().enumerate() {
            for &hi in &plan.train_axis[i + 1..] {
                for &p in ratios {
                    mixes.push(MixSpec::pair(lo, hi, p, total));
                }
            }
        }
    }
    for props in &plan.mixes {
        if props.len() != plan.train_axis.len() {
            return Err(Error::Usage(format!(
                "mix {props:?} must list one proportion per resolution in {:?}",
                plan.train_axis
            )));
        }
        mixes.push(MixSpec::from_proportions(&plan.train_axis, props, total));
    }
    if mixes.is_empty() {
        return Err(Error::Usage("plan defines no mixes".into()));
    }
    Ok(mixes)
}

/// Loads packs, dispatches on the plan kind, and writes the report
/// directory. Returns the paths written.
pub fn run_plan(plan: &ExperimentPlan, out_dir: &Path) -> Result<()> {
    let master_train = GridPack::read(Path::new(&plan.train_pack))?;
    let master_test = GridPack::read(Path::new(&plan.test_pack))?;
    match plan.kind {
        PlanKind::Interpolation => {
            let limit = plan
                .limit
                .ok_or_else(|| Error::Usage("interpolation plan needs `limit`".into()))?;
            let report = run_interpolation(&master_train, &master_test, limit, plan)?;
            write_report(out_dir, plan, &report)
        }
        PlanKind::Extrapolation => {
            let resolution = plan
                .resolution
                .ok_or_else(|| Error::Usage("extrapolation plan needs `resolution`".into()))?;
            let report = run_extrapolation(&master_train, &master_test, resolution, plan)?;
            write_report(out_dir, plan, &report)
        }
        PlanKind::CrossResolution => {
            let report = run_cross_resolution(&master_train, &master_test, plan)?;
            write_report(out_dir, plan, &report)
        }
        PlanKind::MixSweep => {
            let mixes = plan_mixes(plan, master_train.count)?;
            let runs = run_mix_sweep(&master_train, &master_test, &mixes, plan)?;
            for (i, (mix, report)) in runs.iter().enumerate() {
                let label = format!("mix{:02}", i);
                let mut sub = plan.clone();
                sub.mixes = vec![mix.entries.iter().map(|e| e.proportion).collect()];
                write_report(&out_dir.join(label), &sub, report)?;
            }
            let pareto = pareto_report(&runs, master_train.dims)?;
            report::write_pareto(out_dir, &pareto)
        }
        PlanKind::ModesSweep => {
            let runs = modes_sweep(&master_train, &master_test, plan)?;
            for (m, report) in &runs {
                write_report(&out_dir.join(format!("m{:03}", m)), plan, report)?;
            }
            Ok(())
        }
        PlanKind::LossCompare => {
            let mut data_plan = plan.clone();
            data_plan.loss = LossKind::Data;
            data_plan.w = 0.0;
            let report = run_cross_resolution(&master_train, &master_test, &data_plan)?;
            write_report(&out_dir.join("data"), &data_plan, &report)?;
            let mut phys_plan = plan.clone();
            phys_plan.loss = LossKind::DataPhysics;
            if phys_plan.w == 0.0 {
                phys_plan.w = 0.1;
            }
            let report = run_cross_resolution(&master_train, &master_test, &phys_plan)?;
            write_report(
                &out_dir.join(format!("physics_w{}", phys_plan.w)),
                &phys_plan,
                &report,
            )
        }
    }
}
