use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agents::ManipulationMatrix;
use crate::altmin::{limit_radius, ConvergenceConstants, Reference, RunTrace, Scenario, Scheme};
use crate::error::{Error, Result};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_BOUND_VIOLATION: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;

/// Distances below this are treated as numerically converged when fitting
/// the rate.
const RATE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phi: f64,
    pub dist_x: Option<f64>,
    pub dist_p: Option<f64>,
    pub bound_x: Option<f64>,
    pub bound_p: Option<f64>,
    pub gap_p_realized: f64,
    pub gap_x_realized: f64,
}

impl TraceRow {
    pub fn from_trace(trace: &RunTrace) -> Vec<Self> {
        trace
            .records
            .iter()
            .map(|r| TraceRow {
                iter: r.iter,
                phi: r.phi,
                dist_x: r.dist_x,
                dist_p: r.dist_p,
                bound_x: r.bound.x,
                bound_p: r.bound.p,
                gap_p_realized: r.gap_p,
                gap_x_realized: r.gap_x,
            })
            .collect()
    }
}

pub fn write_trace(trace: &RunTrace, format: TraceFormat, out: impl Write) -> Result<()> {
    let rows = TraceRow::from_trace(trace);
    match format {
        TraceFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        TraceFormat::Json => {
            serde_json::to_writer_pretty(out, &rows).map_err(std::io::Error::from)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsSummary {
    pub sigma1: f64,
    pub sigma2: f64,
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
    pub stable: bool,
}

impl From<ConvergenceConstants> for ConstantsSummary {
    fn from(c: ConvergenceConstants) -> Self {
        Self {
            sigma1: c.sigma1,
            sigma2: c.sigma2,
            l1: c.l1,
            l2: c.l2,
            lambda: c.lambda,
            stable: c.stable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scheme: &'static str,
    pub iterations: usize,
    pub converged: bool,
    pub final_phi: f64,
    pub final_dist_x: Option<f64>,
    pub final_dist_p: Option<f64>,
    /// Fitted slope of `ln ‖X_ℓ − X*‖_F` per iteration.
    pub rate_estimate: Option<f64>,
    pub assumption_violated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tight_bound_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_radius_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit_radius_p: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl Report {
    pub fn new(trace: &RunTrace, wall_clock_seconds: f64) -> Self {
        let last = trace.last();
        let checked = !trace.assumption_violated && trace.has_reference();
        let radii = trace
            .constants
            .filter(|_| !trace.assumption_violated)
            .map(|c| limit_radius(&c, trace.delta1, trace.delta2));
        Self {
            scheme: match trace.scheme {
                Scheme::Exact => "exact",
                Scheme::Inexact => "inexact",
            },
            iterations: last.iter,
            converged: trace.converged,
            final_phi: last.phi,
            final_dist_x: last.dist_x,
            final_dist_p: last.dist_p,
            rate_estimate: trace.rate_estimate(RATE_FLOOR),
            assumption_violated: trace.assumption_violated,
            constants: trace.constants.map(Into::into),
            bound_violations: checked.then(|| trace.bound_violations().len()),
            tight_bound_violations: checked.then(|| trace.tight_bound_violations().len()),
            limit_radius_x: radii.map(|r| r.0),
            limit_radius_p: radii.map(|r| r.1),
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReferenceFile {
    /// Columns of `X*`.
    x: Vec<Vec<f64>>,
    /// Columns of `P*`; recomputed from `x` on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

pub fn write_reference(r: &Reference, path: impl AsRef<Path>) -> Result<()> {
    let file = ReferenceFile {
        x: columns(r.x.matrix()),
        p: Some(columns(r.p.matrix())),
    };
    let text = serde_json::to_string_pretty(&file).expect("reference serializes");
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_reference(s: &Scenario, path: impl AsRef<Path>) -> Result<Reference> {
    let text = std::fs::read_to_string(path)?;
    let file: ReferenceFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let cols: Vec<DVector<f64>> = file.x.iter().map(|c| DVector::from_column_slice(c)).collect();
    if cols.iter().any(|c| c.len() != s.n()) {
        return Err(Error::dims("reference column", s.n(), cols.iter().map(|c| c.len()).find(|&l| l != s.n()).unwrap_or(0)));
    }
    Reference::new(s, ManipulationMatrix::from_columns(&cols)?)
}
