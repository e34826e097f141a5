//! Report directory layout:
//!
//! ```text
//! <dir>/report.json                     plan + cell index
//! <dir>/cells/<train>_<test>/log.csv    training log of the cell's row
//! <dir>/cells/<train>_<test>/spectrum.csv
//! <dir>/cells/<train>_<test>/mse.txt
//! <dir>/timings.csv                     wall clock per row (not deterministic)
//! ```
//!
//! `log.csv` and `spectrum.csv` are bitwise-reproducible for a fixed plan
//! seed; wall-clock timings live separately for that reason.

use super::{ExperimentPlan, HeatmapReport, ParetoRow};
use crate::error::Result;
use crate::spectral::SpectrumReport;
use crate::training::{csv_err, format_f64, EpochLog};
use serde::Serialize;
use std::path::Path;

#[derive(Serialize)]
struct CellIndexEntry {
    train: usize,
    test: usize,
    mse: f64,
    relative_l2: f64,
    dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ReportIndex<'a> {
    plan: &'a ExperimentPlan,
    rows: &'a [usize],
    cols: &'a [usize],
    cells: Vec<CellIndexEntry>,
}

pub fn write_spectrum_csv(path: &Path, spectrum: &SpectrumReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "mode",
        "label_energy",
        "pred_energy",
        "residual_energy",
        "normalized_residual",
    ])
    .map_err(csv_err)?;
    for (i, &mode) in spectrum.modes.iter().enumerate() {
        w.write_record([
            mode.to_string(),
            format_f64(spectrum.label_energy[i]),
            format_f64(spectrum.pred_energy[i]),
            format_f64(spectrum.residual_energy[i]),
            spectrum.normalized_residual[i]
                .map(format_f64)
                .unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["epoch".to_string(), "train_loss".to_string()];
    if let Some(first) = log.first() {
        for (res, _) in &first.val_loss {
            header.push(format!("val_loss@{res}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in log {
        let mut rec = vec![row.epoch.to_string(), format_f64(row.train_loss)];
        for (_, v) in &row.val_loss {
            rec.push(format_f64(*v));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one heatmap report directory.
pub fn write_report(dir: &Path, plan: &ExperimentPlan, report: &HeatmapReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(report.cells.len());
    for (ri, &row) in report.rows.iter().enumerate() {
        for (ci, &col) in report.cols.iter().enumerate() {
            let cell = report.cell(ri, ci);
            let cell_dir_name = format!("{row}_{col}");
            let cell_dir = dir.join("cells").join(&cell_dir_name);
            std::fs::create_dir_all(&cell_dir)?;
            if cell.error.is_none() {
                write_spectrum_csv(&cell_dir.join("spectrum.csv"), &cell.spectrum)?;
                std::fs::write(cell_dir.join("mse.txt"), format!("{}\n", format_f64(cell.mse)))?;
            } else {
                std::fs::write(
                    cell_dir.join("mse.txt"),
                    format!("failed: {}\n", cell.error.as_deref().unwrap_or("unknown")),
                )?;
            }
            if let Some(log) = report.row_logs.get(ri) {
                if !log.is_empty() {
                    write_log_csv(&cell_dir.join("log.csv"), log)?;
                }
            }
            index.push(CellIndexEntry {
                train: row,
                test: col,
                mse: cell.mse,
                relative_l2: cell.relative_l2,
                dir: format!("cells/{cell_dir_name}"),
                error: cell.error.clone(),
            });
        }
    }
    let json = ReportIndex {
        plan,
        rows: &report.rows,
        cols: &report.cols,
        cells: index,
    };
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&json)?)?;

    let mut timings = csv::Writer::from_path(dir.join("timings.csv")).map_err(csv_err)?;
    timings.write_record(["row", "epoch", "seconds"]).map_err(csv_err)?;
    for (ri, log) in report.row_logs.iter().enumerate() {
        for e in log {
            timings
                .write_record([
                    report.rows[ri].to_string(),
                    e.epoch.to_string(),
                    format!("{:.3}", e.seconds),
                ])
                .map_err(csv_err)?;
        }
    }
    timings.flush()?;
    Ok(())
}

/// Writes the data-cost vs. loss table.
pub fn write_pareto(dir: &Path, rows: &[ParetoRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("pareto.json"), serde_json::to_vec_pretty(rows)?)?;
    let mut w = csv::Writer::from_path(dir.join("pareto.csv")).map_err(csv_err)?;
    let mut header = vec!["mix".to_string(), "avg_pixels".to_string()];
    if let Some(first) = rows.first() {
        for (res, _) in &first.per_resolution_mse {
            header.push(format!("mse@{res}"));
        }
    }
    header.push("max_mse".to_string());
    header.push("pareto_optimal".to_string());
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.label.clone(), format_f64(row.avg_pixels)];
        for (_, v) in &row.per_resolution_mse {
            rec.push(format_f64(*v));
        }
        rec.push(format_f64(row.max_mse));
        rec.push(row.pareto_optimal.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
