//! Exact tabular solutions for an experiment's environment.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::{init_run, oracle_tables, FixedPointSummary};
use crate::output::{ensure_dir, write_json, write_text};
use crate::setup::Setup;
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub gamma: f64,
    /// Stationary weights over feature rows.
    pub weights: Vec<f64>,
    /// Flattened tables over feature rows, keyed by oracle.
    pub tables: BTreeMap<String, Vec<f64>>,
    /// Projected fixed point at the first width and seed, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<FixedPointSummary>,
}

pub fn run_oracle(spec: &ExperimentSpec, out: &Path) -> Result<OracleReport> {
    spec.validate()?;
    ensure_dir(out)?;
    write_text(&out.join("spec.json"), &(spec.canonical_json() + "\n"))?;
    let setup = Setup::build(spec)?;
    let params = if spec.diagnostics.fixed_point {
        Some(init_run(spec, &setup, spec.sweep.widths[0], spec.sweep.seeds[0])?.params)
    } else {
        None
    };
    let omega = spec.train.as_ref().map(|t| t.omega).unwrap_or(f64::INFINITY);
    let oracles = oracle_tables(spec, &setup, params.as_ref(), omega)?;
    let report = OracleReport {
        name: spec.name.clone(),
        gamma: setup.gamma(),
        weights: setup.weights.clone(),
        fixed_point: oracles.fixed_point.as_ref().map(FixedPointSummary::from),
        tables: oracles.tables,
    };
    write_json(&out.join("oracle.json"), &report)?;
    Ok(report)
}
