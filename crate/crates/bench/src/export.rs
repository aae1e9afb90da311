//! Grid exports: backup, certified and oracle sets on a regular grid, and
//! the reach-avoid value grid with its sidecar.

use std::io::Write;
use std::path::Path;

use rlbus_core::backup::BackupSuite;
use rlbus_core::dynamics::{ScalarField, Vector};
use rlbus_hj::{GridSpec, SolveReport, ValueGrid};
use serde::Serialize;

use crate::benchmark::{state_box, Benchmark};
use crate::Result;

/// Set columns: safe set, three backup sets, three per-backup certified
/// values, the combined value, and optionally the oracle value.
pub const SET_COLUMNS: [&str; 11] = ["x1", "x2", "h_s", "h_b1", "h_b2", "h_b3", "h_1", "h_2", "h_3", "h", "V_hj"];

/// Areas measured while exporting (grid cell area times node count).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub per_dim: usize,
    /// Area of `{h_j ≥ 0}` per backup index.
    pub backup_certified_area: Vec<f64>,
    /// Area of `{h ≥ ε}`.
    pub certified_area: f64,
    pub oracle_area: Option<f64>,
}

fn grid_points(per_dim: usize) -> impl Iterator<Item = Vector<2>> {
    let (lo, hi) = state_box();
    let step = (hi - lo) / (per_dim - 1) as f64;
    (0..per_dim).flat_map(move |k| (0..per_dim).map(move |i| Vector::<2>::new(lo[0] + i as f64 * step[0], lo[1] + k as f64 * step[1])))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Writes one CSV row per grid node of the state box. Blank cells mark
/// quantities that do not exist for this suite (no neural backup).
pub fn export_set_grid<W: Write>(
    bench: &Benchmark,
    suite: &BackupSuite<2, 1>,
    oracle: Option<&ValueGrid>,
    per_dim: usize,
    out: W,
) -> Result<SetSummary> {
    let barrier = bench.barrier(suite)?;
    let mut w = csv::Writer::from_writer(out);
    let cols = if oracle.is_some() { &SET_COLUMNS[..] } else { &SET_COLUMNS[..10] };
    w.write_record(cols)?;
    let (lo, hi) = state_box();
    let cell = (hi[0] - lo[0]) * (hi[1] - lo[1]) / ((per_dim - 1) * (per_dim - 1)) as f64;
    let mut counts = vec![0usize; suite.len()];
    let (mut certified, mut oracle_count) = (0usize, 0usize);
    for x in grid_points(per_dim) {
        let eval = barrier.h_value(&x)?;
        let mut row = vec![format!("{:e}", x[0]), format!("{:e}", x[1]), format!("{:e}", bench.safe_set().value(&x))];
        for j in 0..3 {
            row.push(opt((j < suite.len()).then(|| suite.set_value(j, &x))));
        }
        for j in 0..3 {
            row.push(opt(eval.h_j.get(j).copied()));
        }
        row.push(format!("{:e}", eval.h));
        for (c, h) in counts.iter_mut().zip(&eval.h_j) {
            *c += usize::from(*h >= 0.0);
        }
        certified += usize::from(eval.h >= barrier.config().epsilon);
        if let Some(grid) = oracle {
            let v = grid.query_value(&x)?;
            oracle_count += usize::from(v >= 0.0);
            row.push(format!("{v:e}"));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(SetSummary {
        per_dim,
        backup_certified_area: counts.iter().map(|c| *c as f64 * cell).collect(),
        certified_area: certified as f64 * cell,
        oracle_area: oracle.map(|_| oracle_count as f64 * cell),
    })
}

/// Sidecar describing a value-grid CSV.
#[derive(Debug, Clone, Serialize)]
pub struct ValueGridSidecar {
    pub spec: GridSpec,
    pub steps: usize,
    pub clamped_targets: usize,
    /// Interpolation error bound of the grid.
    pub delta_grid: f64,
    pub superlevel_area: f64,
}

/// Writes `x1,x2,V` rows and a JSON sidecar next to them.
pub fn write_value_grid(grid: &ValueGrid, report: &SolveReport, csv_path: &Path, json_path: &Path) -> Result<ValueGridSidecar> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["x1", "x2", "V"])?;
    let [n0, n1] = grid.spec.points;
    for k in 0..n1 {
        for i in 0..n0 {
            let x = grid.spec.node(i, k);
            w.write_record([format!("{:e}", x[0]), format!("{:e}", x[1]), format!("{:e}", grid.values[i + k * n0])])?;
        }
    }
    w.flush()?;
    let sidecar = ValueGridSidecar {
        spec: grid.spec,
        steps: report.steps,
        clamped_targets: report.clamped_targets,
        delta_grid: grid.interpolation_error_bound(),
        superlevel_area: grid.superlevel_area(0.0),
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}
