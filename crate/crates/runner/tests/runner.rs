use std::path::Path;
use std::process::Command;

use ntd_runner::setup::gridworld;
use ntd_runner::spec::{EnvSpec, EvalKind};
use ntd_runner::{diagnose, replicate_figure1, run_experiment, run_oracle, ExperimentSpec, RunnerError};

const SMALL: &str = r#"
name = "small"

[env]
kind = "random_mdp"
n_states = 3
n_actions = 2
gamma = 0.8
seed = 1

[features]
kind = "one_hot"

[network]
depth = 2

[train]
omega = 5.0
iterations = 400
eval_every = 100

[train.schedule]
kind = "theorem"

[sweep]
widths = [16]
seeds = [4]
t_values = [100, 200, 400]
"#;

fn small() -> ExperimentSpec {
    ExperimentSpec::from_toml_str(SMALL).unwrap()
}

fn rejected(text: &str) -> String {
    match ExperimentSpec::from_toml_str(text) {
        Err(e) => e.to_string(),
        Ok(_) => panic!("accepted:\n{text}"),
    }
}

#[test]
fn toml_defaults_are_filled_in() {
    let spec = small();
    assert!(matches!(spec.env, EnvSpec::RandomMdp { n_states: 3, .. }));
    let train = spec.train.as_ref().unwrap();
    assert_eq!(train.eval_kind(), EvalKind::FixedPoint);
    assert_eq!(train.iterations().unwrap(), 400);
    assert_eq!(spec.network.depth, 2);
}

#[test]
fn json_and_toml_documents_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small();
    let path = dir.path().join("small.json");
    std::fs::write(&path, spec.canonical_json()).unwrap();
    assert_eq!(ExperimentSpec::load(&path).unwrap(), spec);
}

#[test]
fn invalid_documents_are_rejected() {
    assert!(rejected(&SMALL.replace("widths = [16]", "widths = [32, 16]")).contains("ascending"));
    assert!(rejected(&SMALL.replace("t_values = [100, 200, 400]", "t_values = [150]")).contains("t_value"));
    assert!(rejected(&SMALL.replace("omega = 5.0", "omega = 5.0\nalgorithm = \"minimax\"")).contains("environment"));
    assert!(rejected(&SMALL.replace("depth = 2", "depth = 2\nwidht = 3")).contains("widht"));
    let missing = SMALL.replace(
        "kind = \"random_mdp\"\nn_states = 3\nn_actions = 2\ngamma = 0.8\nseed = 1",
        "kind = \"mdp_file\"\npath = \"/nonexistent/mdp.json\"",
    );
    assert!(rejected(&missing).contains("does not exist"));
}

fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn single_run_writes_one_csv_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&small(), dir.path()).unwrap();
    assert_eq!(bundle.failed_runs(), 0);
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 2, "csv plus json sidecar");
    let rows = csv_rows(&dir.path().join("runs/m16_seed4.csv"));
    assert_eq!(rows[0], "t,td_error,theta_dist,q_eval_error,projection_hit");
    assert_eq!(rows.len(), 1 + 5, "t = 0 and every 100 steps");
    for name in ["spec.json", "summary.json", "spectrum.csv", "meta.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let w = bundle.width(16).unwrap();
    assert_eq!(w.mean_errors_at_t.len(), 3);
    assert!(w.rate_fit.is_some());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&small(), a.path()).unwrap();
    run_experiment(&small(), b.path()).unwrap();
    for f in ["runs/m16_seed4.csv", "runs/m16_seed4.json", "spectrum.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn diverging_run_is_recorded_and_siblings_finish() {
    let text = SMALL
        .replace("omega = 5.0", "omega = 1e308")
        .replace("kind = \"theorem\"", "kind = \"constant\"\neta0 = 1e300")
        .replace("seeds = [4]", "seeds = [4, 5]");
    let spec = ExperimentSpec::from_toml_str(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&spec, dir.path()).unwrap();
    assert_eq!(bundle.failed_runs(), 2);
    for r in &bundle.summary.runs {
        assert!(!r.ok);
        assert!(r.error.as_ref().unwrap().contains("non-finite"), "{:?}", r.error);
        assert_eq!(csv_rows(&dir.path().join(&r.csv)).len(), 1, "header only");
    }
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn oracle_report_matches_tables() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_oracle(&small(), dir.path()).unwrap();
    assert_eq!(report.weights.len(), 6);
    assert!((report.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for key in ["q_pi", "q_star"] {
        assert_eq!(report.tables[key].len(), 6, "{key}");
    }
    // Q* dominates Q^pi pointwise.
    for (s, p) in report.tables["q_star"].iter().zip(&report.tables["q_pi"]) {
        assert!(s + 1e-9 >= *p);
    }
    assert!(dir.path().join("oracle.json").is_file());
}

#[test]
fn gridworld_rows_are_distributions_and_goal_pays() {
    let mdp = gridworld(3, 4, 0.2, 0.9).unwrap();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (12, 4));
    for s in 0..12 {
        for a in 0..4 {
            let row = mdp.transition(s, a);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
            let r = mdp.reward(s, a);
            assert_eq!(r, if s == 11 { 1.0 } else { 0.0 });
        }
    }
    assert!(gridworld(3, 4, 1.5, 0.9).is_err());
}

#[test]
fn figure1_bundle_has_one_curve_per_width() {
    let text = r#"
name = "figure1-small"

[env]
kind = "chain"
stay = 0.7
reward = [1.0, -1.0]
gamma = 0.9

[features]
kind = "one_hot"

[network]
depth = 1

[train]
omega = 10.0
eval = "none"
eval_every = 50
schedule = { kind = "constant", eta0 = 0.05 }
replay = { samples = 50, epochs = 4 }

[sweep]
widths = [8, 16]
seeds = [0, 1]
"#;
    let spec = ExperimentSpec::from_toml_str(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let b = replicate_figure1(&spec, dir.path()).unwrap();
    assert_eq!(b.summary.failed_runs, 0);
    assert_eq!(b.summary.curves.len(), 2);
    assert!(b.summary.curves.iter().all(|c| c.mean_epoch_td_sq.len() == 4));
    assert_eq!(b.summary.ratios.len(), 2);
    assert!(b.summary.ratios.iter().all(|r| r.mean_ratio >= 1.0));
    let curves = csv_rows(&dir.path().join("curves.csv"));
    assert_eq!(curves[0], "m,seed,epoch,mean_sq_td_error");
    assert_eq!(curves.len(), 1 + 2 * 2 * 4);
    assert_eq!(csv_rows(&dir.path().join("ratio.csv")).len(), 3);

    let no_replay = text.replace("replay = { samples = 50, epochs = 4 }\n", "iterations = 100\n");
    let err = replicate_figure1(&ExperimentSpec::from_toml_str(&no_replay).unwrap(), dir.path()).unwrap_err();
    assert!(matches!(err, RunnerError::Invalid(_)), "{err}");
}

#[test]
fn diagnose_runs_only_requested_probes() {
    let text = SMALL.replace("[sweep]", "[diagnostics]\nspectrum = true\nmixing = { horizon = 10 }\n\n[sweep]");
    let dir = tempfile::tempdir().unwrap();
    let s = diagnose(&ExperimentSpec::from_toml_str(&text).unwrap(), dir.path()).unwrap().summary;
    assert_eq!(s.spectrum.len(), 1);
    assert!(s.mixing.is_some());
    assert!(s.kernel.is_empty() && s.gap.is_empty() && s.contraction.is_none());
    assert_eq!(csv_rows(&dir.path().join("mixing.csv")).len(), 1 + 11);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok.toml");
    std::fs::write(&ok, SMALL).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("omega = 5.0", "omega = 1e308").replace("kind = \"theorem\"", "kind = \"constant\"\neta0 = 1e300")).unwrap();
    let ntd = env!("CARGO_BIN_EXE_ntd");
    let run = |args: &[&str]| Command::new(ntd).args(args).output().unwrap();

    let out = dir.path().join("out");
    let o = run(&["train", "--config", ok.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("runs/m16_seed4.csv").is_file());

    let o = run(&["sweep", "--config", bad.to_str().unwrap(), "--out", dir.path().join("bad").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
