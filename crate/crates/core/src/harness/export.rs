//! CSV and JSON outputs of runs, sweeps, training curves and demand traces.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::MetricsReport;
use super::scenario::Scenario;
use super::{HarnessError, SweepRow};
use crate::demand::DemandTrace;
use crate::marl::train::CurvePoint;
use crate::qos::Slice;

fn export_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Export {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| export_err(path, e))?;
    w.write_record(header).map_err(|e| export_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| export_err(path, e))?;
    }
    w.flush().map_err(|e| export_err(path, e))
}

#[derive(Serialize)]
struct SlotRow {
    slot: usize,
    cell: u32,
    res_cost: f64,
    dis_cost: f64,
    penalty: f64,
    system_cost: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    scheme: &'a str,
    scenario: &'a str,
    scenario_hash: String,
    seed: u64,
    horizon: usize,
    cells: usize,
    total_system_cost: f64,
    total_penalty: f64,
    total_cost: f64,
    mean_slot_cost: f64,
    resource_cost: f64,
    satellite_resource_cost: f64,
    dissatisfaction_probability: f64,
    effective_dissatisfaction: f64,
    shortfalls: usize,
    reliability_violations: usize,
    capacity_violations: usize,
    ratio_violations: usize,
    solver_failures: usize,
    max_idoa_iterations: u32,
    config: &'a Scenario,
}

/// Writes `<prefix>_slots.csv`, `<prefix>_cdf.csv` and
/// `<prefix>_summary.json` into `dir`.
pub fn export_report(
    report: &MetricsReport,
    scenario: &Scenario,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let w = report.weights;
    let slots = dir.join(format!("{prefix}_slots.csv"));
    write_rows(
        &slots,
        &["slot", "cell", "res_cost", "dis_cost", "penalty", "system_cost"],
        report.records.iter().map(|r| SlotRow {
            slot: r.slot,
            cell: r.cell as u32 + 1,
            res_cost: r.cost.res_cost,
            dis_cost: r.cost.dis_cost,
            penalty: r.cost.penalty(w.p1, w.p2),
            system_cost: r.cost.system(w.beta1, w.beta2),
        }),
    )?;
    let cdf = dir.join(format!("{prefix}_cdf.csv"));
    write_rows(&cdf, &["cost", "cumulative_fraction"], report.cost_cdf())?;
    let summary = dir.join(format!("{prefix}_summary.json"));
    let body = Summary {
        scheme: &report.scheme,
        scenario: &scenario.name,
        scenario_hash: scenario.content_hash(),
        seed: scenario.seed,
        horizon: report.horizon,
        cells: report.cell_count,
        total_system_cost: report.total_system_cost(),
        total_penalty: report.total_penalty(),
        total_cost: report.total_cost(),
        mean_slot_cost: report.mean_slot_cost(),
        resource_cost: report.resource_cost(),
        satellite_resource_cost: report.satellite_resource_cost(),
        dissatisfaction_probability: report.dissatisfaction_probability(),
        effective_dissatisfaction: report.effective_dissatisfaction(),
        shortfalls: report.shortfall_count(),
        reliability_violations: report.reliability_violation_count(),
        capacity_violations: report.capacity_violations,
        ratio_violations: report.ratio_violations,
        solver_failures: report.solver_failures,
        max_idoa_iterations: report.idoa_iterations.iter().copied().max().unwrap_or(0),
        config: scenario,
    };
    let json = serde_json::to_string_pretty(&body).map_err(|e| export_err(&summary, e))?;
    std::fs::write(&summary, json + "\n").map_err(|source| HarnessError::Io {
        path: summary.clone(),
        source,
    })?;
    Ok(vec![slots, cdf, summary])
}

pub fn export_curve(curve: &[CurvePoint], path: &Path) -> Result<(), HarnessError> {
    write_rows(
        path,
        &["episode", "cumulative_cost", "mean_reward", "policy_loss", "critic_loss", "entropy"],
        curve.iter().map(|c| (c.episode, c.cumulative_cost, c.mean_reward, c.policy_loss, c.critic_loss, c.entropy)),
    )
}

pub fn export_sweep(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    write_rows(
        path,
        &[
            "angle_deg",
            "satellite_resource",
            "satellite_ratio",
            "dissatisfaction",
            "dissatisfaction_cost",
            "mean_slot_cost",
        ],
        rows.iter().copied(),
    )
}

/// Per-slot intensities: slot, cell, slice, lambda, covered, uncovered.
pub fn export_demand(trace: &DemandTrace, path: &Path) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for t in 0..trace.horizon {
        for n in 0..trace.cell_count() {
            for slice in Slice::ALL {
                rows.push((
                    t,
                    n as u32 + 1,
                    slice.number(),
                    trace.lambda(n, slice, t),
                    trace.lambda_covered(n, slice, t),
                    trace.lambda_uncovered(n, slice, t),
                ));
            }
        }
    }
    write_rows(path, &["slot", "cell", "slice", "lambda", "covered", "uncovered"], rows)
}
