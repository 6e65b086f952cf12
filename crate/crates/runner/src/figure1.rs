//! Width study: TD training curves on one stored trajectory cycled for many
//! epochs, and the spread of the non-zero spectrum of Sigma per width.

use std::path::Path;
use std::time::Instant;

use ntd_core::algorithms::Trainer;
use ntd_core::diagnostics::{summarize_trials, SpectrumReport, SpectrumSummary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunnerError};
use crate::experiment::{burn_in_for, init_run, replay_samples, resolve_schedule, spectrum_records, train_config, SPECTRUM_HEADER};
use crate::output::{ensure_dir, num, write_csv, write_json, write_text};
use crate::setup::Setup;
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRun {
    pub m: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Mean squared TD error of each epoch.
    pub epoch_td_sq: Vec<f64>,
    pub spectrum: Option<SpectrumReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthCurve {
    pub m: usize,
    pub mean_epoch_td_sq: Vec<f64>,
    /// Mean over the last tenth of the epochs.
    pub tail_td_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Summary {
    pub name: String,
    pub curves: Vec<WidthCurve>,
    pub ratios: Vec<SpectrumSummary>,
    /// Adjacent widths whose tail TD error increases with `m`.
    pub tail_inversions: usize,
    pub failed_runs: usize,
}

#[derive(Clone, Debug)]
pub struct Figure1Bundle {
    pub summary: Figure1Summary,
    pub wall_clock_seconds: f64,
}

fn curve_run(spec: &ExperimentSpec, setup: &Setup, m: usize, seed: u64) -> CurveRun {
    let mut run = CurveRun {
        m,
        seed,
        error: None,
        epoch_td_sq: Vec::new(),
        spectrum: None,
    };
    let result = (|| -> Result<()> {
        let train = spec.train.as_ref().expect("validated");
        let replay = train
            .replay
            .ok_or_else(|| RunnerError::Invalid("the width study needs train.replay".into()))?;
        let init = init_run(spec, setup, m, seed)?;
        run.spectrum = Some(SpectrumReport::from_estimate(&init.sigma, m));
        let (schedule, _) = resolve_schedule(&train.schedule, &init.sigma)?;
        let config = train_config(train, schedule, seed, burn_in_for(train, setup)?)?;
        let (samples, n_actions) = replay_samples(setup, &config, replay.samples)?;
        let mut trainer = Trainer::replay(&setup.features, &init.params, &config, setup.gamma(), n_actions, samples)?;
        for _ in 0..replay.epochs {
            let mut acc = 0.0;
            for _ in 0..replay.samples {
                let d = trainer.step()?.td_error;
                acc += d * d;
            }
            run.epoch_td_sq.push(acc / replay.samples as f64);
        }
        Ok(())
    })();
    if let Err(e) = result {
        run.error = Some(e.to_string());
    }
    run
}

/// Counts adjacent pairs where the value goes up.
pub fn inversions(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] > w[0]).count()
}

pub fn replicate_figure1(spec: &ExperimentSpec, out: &Path) -> Result<Figure1Bundle> {
    spec.validate()?;
    if spec.train.as_ref().and_then(|t| t.replay).is_none() {
        return Err(RunnerError::Invalid(format!("{}: the width study needs [train] with replay", spec.name)));
    }
    let start = Instant::now();
    ensure_dir(out)?;
    write_text(&out.join("spec.json"), &(spec.canonical_json() + "\n"))?;
    let setup = Setup::build(spec)?;
    let jobs: Vec<(usize, u64)> = spec
        .sweep
        .widths
        .iter()
        .flat_map(|&m| spec.sweep.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs: Vec<CurveRun> = jobs.par_iter().map(|&(m, s)| curve_run(spec, &setup, m, s)).collect();

    let mut curve_rows = Vec::new();
    for r in &runs {
        for (e, v) in r.epoch_td_sq.iter().enumerate() {
            curve_rows.push(vec![r.m.to_string(), r.seed.to_string(), e.to_string(), num(*v)]);
        }
    }
    write_csv(&out.join("curves.csv"), &["m", "seed", "epoch", "mean_sq_td_error"], &curve_rows)?;

    let mut curves = Vec::new();
    let mut ratios = Vec::new();
    for &m in &spec.sweep.widths {
        let ok: Vec<&CurveRun> = runs.iter().filter(|r| r.m == m && r.error.is_none()).collect();
        if let Some(first) = ok.first() {
            let epochs = first.epoch_td_sq.len();
            let mean: Vec<f64> = (0..epochs)
                .map(|e| ok.iter().map(|r| r.epoch_td_sq[e]).sum::<f64>() / ok.len() as f64)
                .collect();
            let tail = (epochs / 10).max(1);
            let tail_td_sq = mean[epochs - tail..].iter().sum::<f64>() / tail as f64;
            curves.push(WidthCurve {
                m,
                mean_epoch_td_sq: mean,
                tail_td_sq,
            });
        }
        let reports: Vec<SpectrumReport> = runs.iter().filter(|r| r.m == m).filter_map(|r| r.spectrum).collect();
        if !reports.is_empty() {
            ratios.push(summarize_trials(m, reports));
        }
    }
    let spectra: Vec<(u64, SpectrumReport)> = runs.iter().filter_map(|r| r.spectrum.map(|s| (r.seed, s))).collect();
    write_csv(&out.join("spectrum.csv"), &SPECTRUM_HEADER, &spectrum_records(&spectra))?;
    let ratio_rows: Vec<Vec<String>> = ratios
        .iter()
        .map(|s| vec![s.m.to_string(), num(s.mean_ratio), num(s.std_ratio), s.trials.len().to_string()])
        .collect();
    write_csv(&out.join("ratio.csv"), &["m", "mean_ratio", "std_ratio", "trials"], &ratio_rows)?;
    let tails: Vec<f64> = curves.iter().map(|c| c.tail_td_sq).collect();
    let summary = Figure1Summary {
        name: spec.name.clone(),
        tail_inversions: inversions(&tails),
        curves,
        ratios,
        failed_runs: runs.iter().filter(|r| r.error.is_some()).count(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("meta.json"), &serde_json::json!({ "wall_clock_seconds": wall_clock_seconds }))?;
    Ok(Figure1Bundle {
        summary,
        wall_clock_seconds,
    })
}
