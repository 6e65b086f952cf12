//! Training sweeps: the cartesian product of widths and seeds, one
//! independent run each.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ntd_core::algorithms::{EvalTarget, RunRecord, Sample, Schedule, TrainConfig, Trainer};
use ntd_core::diagnostics::{estimate_sigma, fit_rate_slope, RateFit, SigmaEstimate, SpectrumReport};
use ntd_core::env::{default_burn_in, sample_game_trajectory, sample_trajectory, StateChain};
use ntd_core::network::{init_params, Architecture, Linearization, NetworkParams};
use ntd_core::oracles::{exact_minimax_q, exact_q_pi, exact_q_star, projected_fixed_point, FixedPointReport};
use ntd_core::rng::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunnerError};
use crate::output::{ensure_dir, num, write_csv, write_json, write_text};
use crate::setup::{Env, Setup};
use crate::spec::{EvalKind, ExperimentSpec, ScheduleSpec, TrainSpec};

/// Init and sampling seeds of one run.
pub fn run_seeds(seed: u64) -> (u64, u64) {
    (seed, derive_seed(seed, 1))
}

pub fn run_stem(m: usize, seed: u64) -> String {
    format!("m{m}_seed{seed}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSummary {
    pub delta_norm: f64,
    pub inside_ball: bool,
    pub residual: f64,
    pub rank: usize,
}

impl From<&FixedPointReport> for FixedPointSummary {
    fn from(r: &FixedPointReport) -> Self {
        Self {
            delta_norm: r.delta_norm,
            inside_ball: r.inside_ball,
            residual: r.residual,
            rank: r.rank,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `lambda0` handed to the theorem schedule, if used.
    pub schedule_lambda0: Option<f64>,
    pub burn_in: usize,
    pub errors_at_t: Vec<(usize, f64)>,
    /// Final weighted mean-square error against every available oracle.
    pub final_errors: BTreeMap<String, f64>,
    /// `E[(Q(x; theta^T) - Q_hat(x; theta^T))^2]` under the stationary weights.
    pub linearization_gap: f64,
    /// Mean squared TD error over the last tenth of the logged rows.
    pub tail_td_sq: f64,
    pub max_theta_dist: f64,
    pub projection_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub m: usize,
    pub seed: u64,
    pub csv: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<FixedPointSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub m: usize,
    pub ok_runs: usize,
    pub mean_ratio: Option<f64>,
    pub mean_errors_at_t: Vec<(usize, f64)>,
    pub rate_fit: Option<RateFit>,
    pub mean_final_errors: BTreeMap<String, f64>,
    pub mean_tail_td_sq: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub runs: Vec<RunSummary>,
    pub widths: Vec<WidthSummary>,
}

/// What a sweep leaves on disk, plus its wall clock.
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub spec: ExperimentSpec,
    pub summary: Summary,
    pub wall_clock_seconds: f64,
}

impl ResultBundle {
    pub fn failed_runs(&self) -> usize {
        self.summary.runs.iter().filter(|r| !r.ok).count()
    }

    pub fn width(&self, m: usize) -> Option<&WidthSummary> {
        self.summary.widths.iter().find(|w| w.m == m)
    }
}

/// Network, initialization and `Sigma` of one run.
pub struct RunInit {
    pub params: NetworkParams,
    pub sigma: SigmaEstimate,
}

pub fn init_run(spec: &ExperimentSpec, setup: &Setup, m: usize, seed: u64) -> Result<RunInit> {
    let mut arch = Architecture::new(spec.network.depth, m, setup.features.dim(), spec.network.activation);
    arch.output_scale = spec.network.output_scale;
    let (params, _) = init_params(arch, run_seeds(seed).0)?;
    let sigma = estimate_sigma(&params, &setup.features, &setup.weights)?;
    Ok(RunInit { params, sigma })
}

/// Oracle values over the feature rows, keyed by name.
pub struct Oracles {
    pub tables: BTreeMap<String, Vec<f64>>,
    pub fixed_point: Option<FixedPointReport>,
}

pub fn oracle_tables(spec: &ExperimentSpec, setup: &Setup, params: Option<&NetworkParams>, omega: f64) -> Result<Oracles> {
    let mut tables = BTreeMap::new();
    let mut fixed_point = None;
    let order = spec.train.as_ref().map(|t| t.minimax_order).unwrap_or_default();
    match &setup.env {
        Env::Mdp { mdp, policy } => {
            tables.insert("q_pi".to_string(), exact_q_pi(mdp, policy)?.flat());
            tables.insert("q_star".to_string(), exact_q_star(mdp, 1e-10)?.flat());
            let wants_fp = spec.diagnostics.fixed_point || spec.train.as_ref().is_some_and(|t| t.eval_kind() == EvalKind::FixedPoint);
            if let (true, Some(p)) = (wants_fp, params) {
                let fp = projected_fixed_point(p, &setup.features, mdp, policy, omega)?;
                tables.insert("fixed_point".to_string(), fp.values.clone());
                fixed_point = Some(fp);
            }
        }
        Env::Game { game, .. } => {
            tables.insert("minimax".to_string(), exact_minimax_q(game, 1e-10, order)?.flat());
        }
    }
    Ok(Oracles { tables, fixed_point })
}

fn eval_key(kind: EvalKind) -> Option<&'static str> {
    match kind {
        EvalKind::FixedPoint => Some("fixed_point"),
        EvalKind::QPi => Some("q_pi"),
        EvalKind::QStar => Some("q_star"),
        EvalKind::Minimax => Some("minimax"),
        EvalKind::None => None,
    }
}

pub fn resolve_schedule(schedule: &ScheduleSpec, sigma: &SigmaEstimate) -> Result<(Schedule, Option<f64>)> {
    Ok(match *schedule {
        ScheduleSpec::Constant { eta0 } => (Schedule::Constant { eta0 }, None),
        ScheduleSpec::Theorem { lambda0, lambda0_scale, nu } => {
            let l = lambda0.unwrap_or_else(|| sigma.lambda0() * lambda0_scale);
            if !(l > 0.0) {
                return Err(RunnerError::Invalid(format!("estimated lambda0 {l} is not positive")));
            }
            (Schedule::Theorem { lambda0: l, nu }, Some(l))
        }
    })
}

pub fn train_config(train: &TrainSpec, schedule: Schedule, seed: u64, burn_in: usize) -> Result<TrainConfig> {
    Ok(TrainConfig {
        algorithm: train.algorithm,
        gamma: None,
        omega: train.omega,
        iterations: train.iterations()?,
        schedule,
        seed: run_seeds(seed).1,
        burn_in: Some(burn_in),
        eval_every: train.eval_every,
        minimax_order: train.minimax_order,
    })
}

pub fn burn_in_for(train: &TrainSpec, setup: &Setup) -> Result<usize> {
    Ok(match train.burn_in {
        Some(b) => b,
        None => match &setup.env {
            Env::Mdp { mdp, policy } => default_burn_in(&StateChain::from_mdp(mdp, policy)?),
            Env::Game { game, policies } => default_burn_in(&StateChain::from_game(game, policies)?),
        },
    })
}

/// The fixed sample list of a replay run.
pub fn replay_samples(setup: &Setup, config: &TrainConfig, samples: usize) -> Result<(Vec<Sample>, (usize, usize))> {
    let burn_in = config.burn_in.unwrap_or(0);
    Ok(match &setup.env {
        Env::Mdp { mdp, policy } => {
            let traj = sample_trajectory(mdp, policy, samples, config.seed, burn_in)?;
            let na = mdp.n_actions();
            let s = traj
                .steps
                .iter()
                .map(|tr| Sample::from_transition(tr, na, config.algorithm))
                .collect::<ntd_core::Result<Vec<_>>>()?;
            (s, (na, 1))
        }
        Env::Game { game, policies } => {
            let traj = sample_game_trajectory(game, policies, samples, config.seed, burn_in)?;
            let (n1, n2) = (game.n_actions_p1(), game.n_actions_p2());
            (traj.steps.iter().map(|tr| Sample::from_game_transition(tr, n1, n2)).collect(), (n1, n2))
        }
    })
}

/// Sidecar of a run: the exact configuration that produced its CSV.
#[derive(Serialize)]
struct Sidecar<'a> {
    m: usize,
    seed: u64,
    init_seed: u64,
    config: &'a TrainConfig,
    replay: Option<crate::spec::ReplaySpec>,
}

fn train_one(spec: &ExperimentSpec, setup: &Setup, train: &TrainSpec, m: usize, seed: u64, runs_dir: &Path) -> RunSummary {
    let stem = run_stem(m, seed);
    let csv = format!("runs/{stem}.csv");
    let mut summary = RunSummary {
        m,
        seed,
        csv: csv.clone(),
        ok: false,
        error: None,
        spectrum: None,
        fixed_point: None,
        metrics: None,
    };
    let result = (|| -> Result<(RunRecord, RunMetrics)> {
        let init = init_run(spec, setup, m, seed)?;
        summary.spectrum = Some(SpectrumReport::from_estimate(&init.sigma, m));
        let oracles = oracle_tables(spec, setup, Some(&init.params), train.omega)?;
        summary.fixed_point = oracles.fixed_point.as_ref().map(FixedPointSummary::from);
        let (schedule, schedule_lambda0) = resolve_schedule(&train.schedule, &init.sigma)?;
        let burn_in = burn_in_for(train, setup)?;
        let config = train_config(train, schedule, seed, burn_in)?;
        let eval = match eval_key(train.eval_kind()) {
            Some(k) => Some(EvalTarget {
                values: oracles.tables.get(k).cloned().ok_or_else(|| RunnerError::Invalid(format!("no {k} oracle")))?,
                weights: setup.weights.clone(),
            }),
            None => None,
        };
        let sidecar = Sidecar {
            m,
            seed,
            init_seed: run_seeds(seed).0,
            config: &config,
            replay: train.replay,
        };
        write_json(&runs_dir.join(format!("{stem}.json")), &sidecar)?;
        let (params, record) = match train.replay {
            Some(r) => {
                let (samples, n_actions) = replay_samples(setup, &config, r.samples)?;
                Trainer::replay(&setup.features, &init.params, &config, setup.gamma(), n_actions, samples)?.run(&config, eval.as_ref())?
            }
            None => Trainer::new(setup.problem(), &setup.features, &init.params, &config)?.run(&config, eval.as_ref())?,
        };
        let q = params.q_values(&setup.features)?;
        let final_errors = oracles
            .tables
            .iter()
            .map(|(k, v)| {
                let target = EvalTarget {
                    values: v.clone(),
                    weights: setup.weights.clone(),
                };
                (k.clone(), target.error(&q))
            })
            .collect();
        let lin = Linearization::new(&init.params, &setup.features)?.values(params.theta());
        let linearization_gap = EvalTarget {
            values: lin,
            weights: setup.weights.clone(),
        }
        .error(&q);
        let errors_at_t = spec
            .sweep
            .t_values
            .iter()
            .filter_map(|&t| record.rows.iter().find(|r| r.t == t).and_then(|r| r.q_eval_error).map(|e| (t, e)))
            .collect();
        let tail = (record.rows.len() / 10).max(1);
        let tail_rows = &record.rows[record.rows.len() - tail..];
        let metrics = RunMetrics {
            schedule_lambda0,
            burn_in,
            errors_at_t,
            final_errors,
            linearization_gap,
            tail_td_sq: tail_rows.iter().map(|r| r.td_error * r.td_error).sum::<f64>() / tail as f64,
            max_theta_dist: record.rows.iter().map(|r| r.theta_dist).fold(0.0, f64::max),
            projection_hits: record.rows.iter().filter(|r| r.projection_hit).count(),
        };
        Ok((record, metrics))
    })();
    let csv_path = runs_dir.join(format!("{stem}.csv"));
    match result {
        Ok((record, metrics)) => {
            let mut buf = Vec::new();
            match record.write_csv(&mut buf).map_err(RunnerError::from).and_then(|_| {
                std::fs::write(&csv_path, &buf).map_err(|e| RunnerError::io(&csv_path, e))
            }) {
                Ok(()) => {
                    summary.ok = true;
                    summary.metrics = Some(metrics);
                }
                Err(e) => summary.error = Some(e.to_string()),
            }
        }
        Err(e) => {
            // Header-only CSV so every listed run has a file on disk.
            let _ = write_text(&csv_path, "t,td_error,theta_dist,q_eval_error,projection_hit\n");
            summary.error = Some(e.to_string());
        }
    }
    summary
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize_width(m: usize, runs: &[RunSummary], t_values: &[usize]) -> WidthSummary {
    let ok: Vec<&RunMetrics> = runs.iter().filter(|r| r.m == m && r.ok).filter_map(|r| r.metrics.as_ref()).collect();
    let mean_errors_at_t: Vec<(usize, f64)> = t_values
        .iter()
        .filter_map(|&t| {
            mean(ok.iter().filter_map(|mt| mt.errors_at_t.iter().find(|(tt, _)| *tt == t).map(|(_, e)| *e))).map(|e| (t, e))
        })
        .collect();
    let rate_fit = if mean_errors_at_t.len() >= 3 {
        let pts: Vec<(f64, f64)> = mean_errors_at_t.iter().map(|&(t, e)| (t as f64, e)).collect();
        fit_rate_slope(&pts).ok()
    } else {
        None
    };
    let keys: Vec<String> = ok.first().map(|mt| mt.final_errors.keys().cloned().collect()).unwrap_or_default();
    let mean_final_errors = keys
        .into_iter()
        .filter_map(|k| mean(ok.iter().filter_map(|mt| mt.final_errors.get(&k).copied())).map(|e| (k, e)))
        .collect();
    WidthSummary {
        m,
        ok_runs: ok.len(),
        mean_ratio: mean(runs.iter().filter(|r| r.m == m).filter_map(|r| r.spectrum.map(|s| s.ratio))),
        mean_errors_at_t,
        rate_fit,
        mean_final_errors,
        mean_tail_td_sq: mean(ok.iter().map(|mt| mt.tail_td_sq)),
    }
}

pub fn spectrum_records(reports: &[(u64, SpectrumReport)]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|(_, r)| vec![r.m.to_string(), num(r.sigma_max), num(r.sigma_min_nonzero), num(r.ratio), r.rank.to_string()])
        .collect()
}

pub const SPECTRUM_HEADER: [&str; 5] = ["m", "sigma_max", "sigma_min_nonzero", "ratio", "rank"];

/// Runs every (width, seed) pair of the sweep and writes the bundle into `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ResultBundle> {
    spec.validate()?;
    let train = spec
        .train
        .as_ref()
        .ok_or_else(|| RunnerError::Invalid(format!("{}: a [train] section is required", spec.name)))?;
    let start = Instant::now();
    let runs_dir = out.join("runs");
    ensure_dir(&runs_dir)?;
    write_text(&out.join("spec.json"), &(spec.canonical_json() + "\n"))?;
    let setup = Setup::build(spec)?;
    let jobs: Vec<(usize, u64)> = spec
        .sweep
        .widths
        .iter()
        .flat_map(|&m| spec.sweep.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs: Vec<RunSummary> = jobs.par_iter().map(|&(m, s)| train_one(spec, &setup, train, m, s, &runs_dir)).collect();
    let widths = spec.sweep.widths.iter().map(|&m| summarize_width(m, &runs, &spec.sweep.t_values)).collect();
    let spectra: Vec<(u64, SpectrumReport)> = runs.iter().filter_map(|r| r.spectrum.map(|s| (r.seed, s))).collect();
    write_csv(&out.join("spectrum.csv"), &SPECTRUM_HEADER, &spectrum_records(&spectra))?;
    let summary = Summary {
        name: spec.name.clone(),
        runs,
        widths,
    };
    write_json(&out.join("summary.json"), &summary)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("meta.json"), &serde_json::json!({ "wall_clock_seconds": wall_clock_seconds }))?;
    Ok(ResultBundle {
        dir: out.to_path_buf(),
        spec: spec.clone(),
        summary,
        wall_clock_seconds,
    })
}

/// Output directory: explicit override, then the spec's, then `out/<name>`.
pub fn output_dir(spec: &ExperimentSpec, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&spec.name))
}
