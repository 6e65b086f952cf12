//! Assumption probes selected by the `[diagnostics]` section.

use std::path::Path;
use std::time::Instant;

use ntd_core::diagnostics::{
    contraction_check, kernel_orthogonality_check, linearization_gap_scan, regularity_probe_minimax, regularity_probe_q,
    summarize_trials, GapReport, GapScanConfig, ProbeSummary, SpectrumReport, SpectrumSummary,
};
use ntd_core::env::{fit_geometric, mixing_profile, GeometricFit, MixingPoint};
use ntd_core::oracles::{exact_q_pi, projected_fixed_point};
use ntd_core::rng::{derive_seed, seeded};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunnerError};
use crate::experiment::{init_run, spectrum_records, FixedPointSummary, SPECTRUM_HEADER};
use crate::output::{ensure_dir, num, write_csv, write_json, write_text};
use crate::setup::{Env, Setup};
use crate::spec::{EnvSpec, ExperimentSpec, RegularitySpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub m: usize,
    pub seed: u64,
    pub rank: usize,
    pub n_params: usize,
    pub violation: f64,
    /// `1e-6 sqrt(sigma_max)`
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCheck {
    pub m: usize,
    pub seed: u64,
    pub report: FixedPointSummary,
    /// `max |Q_hat(theta*) - Q^pi|` over the feature rows.
    pub max_abs_diff_q_pi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityCheck {
    pub m: usize,
    pub seed: u64,
    pub probe: ProbeSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingCheck {
    pub fit: Option<GeometricFit>,
    /// `|2p - 1|` for the two-state chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form_rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub seed: u64,
    pub reports: Vec<GapReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spectrum: Vec<SpectrumSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kernel: Vec<KernelCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_point: Vec<FixedPointCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regularity: Vec<RegularityCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gap: Vec<GapCheck>,
}

#[derive(Clone, Debug)]
pub struct DiagnosticsBundle {
    pub summary: DiagnosticsSummary,
    pub wall_clock_seconds: f64,
}

fn jobs(spec: &ExperimentSpec) -> Vec<(usize, u64)> {
    spec.sweep
        .widths
        .iter()
        .flat_map(|&m| spec.sweep.seeds.iter().map(move |&s| (m, s)))
        .collect()
}

/// Uniform draws from the ball of radius `r` around `center`.
fn ball_points(center: &[f64], r: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let n = center.len();
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = r * rng.random::<f64>().powf(1.0 / n as f64);
            center.iter().zip(&dir).map(|(c, d)| c + radius * d / norm).collect()
        })
        .collect()
}

fn regularity_one(setup: &Setup, spec: &ExperimentSpec, reg: &RegularitySpec, m: usize, seed: u64) -> Result<RegularityCheck> {
    let init = init_run(spec, setup, m, seed)?;
    let nu = reg.nu.unwrap_or(1.0 - setup.gamma());
    let pts_seed = derive_seed(seed, 0x7e9);
    let order = spec.train.as_ref().map(|t| t.minimax_order).unwrap_or_default();
    let probe = match &setup.env {
        Env::Mdp { mdp, policy } => {
            let pts = ball_points(init.params.theta(), reg.radius, reg.n_points, pts_seed);
            regularity_probe_q(&init.params, &setup.features, mdp, policy, &pts)?
        }
        Env::Game { game, policies } => {
            let a = ball_points(init.params.theta(), reg.radius, reg.n_points, pts_seed);
            let b = ball_points(init.params.theta(), reg.radius, reg.n_points, derive_seed(pts_seed, 1));
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = a.into_iter().zip(b).collect();
            regularity_probe_minimax(&init.params, &setup.features, game, policies, &pairs, order)?
        }
    };
    Ok(RegularityCheck {
        m,
        seed,
        probe: probe.summary(nu),
    })
}

/// Runs every enabled probe and writes `diagnostics.json` plus CSVs into `out`.
pub fn diagnose(spec: &ExperimentSpec, out: &Path) -> Result<DiagnosticsBundle> {
    spec.validate()?;
    let start = Instant::now();
    ensure_dir(out)?;
    write_text(&out.join("spec.json"), &(spec.canonical_json() + "\n"))?;
    let setup = Setup::build(spec)?;
    let diag = &spec.diagnostics;
    let jobs = jobs(spec);
    let mut summary = DiagnosticsSummary {
        name: spec.name.clone(),
        ..Default::default()
    };

    if diag.spectrum {
        let reports: Vec<(u64, SpectrumReport)> = jobs
            .par_iter()
            .map(|&(m, s)| Ok((s, SpectrumReport::from_estimate(&init_run(spec, &setup, m, s)?.sigma, m))))
            .collect::<Result<_>>()?;
        write_csv(&out.join("spectrum.csv"), &SPECTRUM_HEADER, &spectrum_records(&reports))?;
        summary.spectrum = spec
            .sweep
            .widths
            .iter()
            .map(|&m| summarize_trials(m, reports.iter().filter(|(_, r)| r.m == m).map(|(_, r)| *r).collect()))
            .collect();
        let rows: Vec<Vec<String>> = summary
            .spectrum
            .iter()
            .map(|s| vec![s.m.to_string(), num(s.mean_ratio), num(s.std_ratio), s.trials.len().to_string()])
            .collect();
        write_csv(&out.join("ratio.csv"), &["m", "mean_ratio", "std_ratio", "trials"], &rows)?;
    }

    if diag.kernel {
        let support = setup.support();
        summary.kernel = jobs
            .par_iter()
            .map(|&(m, s)| {
                let init = init_run(spec, &setup, m, s)?;
                Ok(KernelCheck {
                    m,
                    seed: s,
                    rank: init.sigma.rank,
                    n_params: init.params.n_params(),
                    violation: kernel_orthogonality_check(&init.sigma, &init.params, &setup.features, &support)?,
                    bound: 1e-6 * init.sigma.sigma_max().sqrt(),
                })
            })
            .collect::<Result<_>>()?;
    }

    if diag.fixed_point {
        let Env::Mdp { mdp, policy } = &setup.env else {
            return Err(RunnerError::Invalid("the fixed-point probe needs an MDP".into()));
        };
        let omega = spec.train.as_ref().map(|t| t.omega).unwrap_or(f64::INFINITY);
        let q_pi = exact_q_pi(mdp, policy)?.flat();
        summary.fixed_point = jobs
            .par_iter()
            .map(|&(m, s)| {
                let init = init_run(spec, &setup, m, s)?;
                let fp = projected_fixed_point(&init.params, &setup.features, mdp, policy, omega)?;
                let diff = fp.values.iter().zip(&q_pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                Ok(FixedPointCheck {
                    m,
                    seed: s,
                    report: FixedPointSummary::from(&fp),
                    max_abs_diff_q_pi: diff,
                })
            })
            .collect::<Result<_>>()?;
    }

    if let Some(reg) = &diag.regularity {
        summary.regularity = jobs
            .par_iter()
            .map(|&(m, s)| regularity_one(&setup, spec, reg, m, s))
            .collect::<Result<_>>()?;
    }

    if let Some(c) = &diag.contraction {
        let Env::Mdp { mdp, policy } = &setup.env else {
            return Err(RunnerError::Invalid("the contraction probe needs an MDP".into()));
        };
        summary.contraction = Some(contraction_check(mdp, policy, c.trials, spec.sweep.seeds[0])?);
    }

    if let Some(mx) = &diag.mixing {
        let Env::Mdp { mdp, policy } = &setup.env else {
            return Err(RunnerError::Invalid("the mixing probe needs an MDP".into()));
        };
        let profile: Vec<MixingPoint> = mixing_profile(mdp, policy, mx.horizon)?;
        let rows: Vec<Vec<String>> = profile.iter().map(|p| vec![p.t.to_string(), num(p.tv)]).collect();
        write_csv(&out.join("mixing.csv"), &["t", "tv"], &rows)?;
        let closed_form_rho = match &spec.env {
            EnvSpec::Chain { stay, .. } => Some((2.0 * stay - 1.0).abs()),
            _ => None,
        };
        summary.mixing = Some(MixingCheck {
            fit: fit_geometric(&profile),
            closed_form_rho,
        });
    }

    if let Some(g) = &diag.gap {
        summary.gap = spec
            .sweep
            .seeds
            .par_iter()
            .map(|&s| {
                let cfg = GapScanConfig {
                    depth: spec.network.depth,
                    input_dim: g.input_dim,
                    widths: spec.sweep.widths.clone(),
                    omega: g.omega,
                    n_theta: g.n_theta,
                    n_x: g.n_x,
                    seed: s,
                    activation: spec.network.activation,
                    power_iters: g.power_iters,
                };
                Ok(GapCheck {
                    seed: s,
                    reports: linearization_gap_scan(&cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<String>> = summary
            .gap
            .iter()
            .flat_map(|c| {
                c.reports.iter().map(move |r| {
                    vec![r.m.to_string(), c.seed.to_string(), num(r.max_gap), num(r.random_max), num(r.curvature_max)]
                })
            })
            .collect();
        write_csv(&out.join("gap.csv"), &["m", "seed", "max_gap", "random_max", "curvature_max"], &rows)?;
    }

    write_json(&out.join("diagnostics.json"), &summary)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("meta.json"), &serde_json::json!({ "wall_clock_seconds": wall_clock_seconds }))?;
    Ok(DiagnosticsBundle {
        summary,
        wall_clock_seconds,
    })
}
