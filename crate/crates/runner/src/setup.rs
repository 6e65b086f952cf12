//! Turns an [`ExperimentSpec`] into concrete environments, policies and
//! feature tables.

use std::path::Path;

use ntd_core::algorithms::Problem;
use ntd_core::env::{
    epsilon_greedy, game_stationary_distribution, random_game, random_mdp, stationary_distribution, MarkovGame, PolicyPair,
    TabularMdp, TabularPolicy,
};
use ntd_core::features::{grid_features, one_hot_features, random_unit_features, FeatureKind, FeatureMap, DEFAULT_MIN_ANGLE};
use ntd_core::oracles::exact_q_star;
use serde::de::DeserializeOwned;

use crate::error::{Result, RunnerError};
use crate::spec::{EnvSpec, ExperimentSpec, FeatureSpec, PolicySpec};

#[derive(Clone, Debug)]
pub enum Env {
    Mdp { mdp: TabularMdp, policy: TabularPolicy },
    Game { game: MarkovGame, policies: PolicyPair },
}

/// Everything a run needs besides the network.
#[derive(Clone, Debug)]
pub struct Setup {
    pub env: Env,
    pub features: FeatureMap,
    /// Stationary weights over feature rows.
    pub weights: Vec<f64>,
}

impl Setup {
    pub fn build(spec: &ExperimentSpec) -> Result<Self> {
        let (env, coords) = build_env(spec)?;
        let n_rows = match &env {
            Env::Mdp { mdp, .. } => mdp.n_pairs(),
            Env::Game { game, .. } => game.n_triples(),
        };
        let features = build_features(&spec.features, &env, n_rows, coords.as_deref())?;
        if features.n_rows() != n_rows {
            return Err(RunnerError::Invalid(format!(
                "feature table has {} rows, environment needs {n_rows}",
                features.n_rows()
            )));
        }
        let weights = match &env {
            Env::Mdp { mdp, policy } => stationary_distribution(mdp, policy)?,
            Env::Game { game, policies } => game_stationary_distribution(game, policies)?,
        };
        Ok(Self { env, features, weights })
    }

    pub fn problem(&self) -> Problem<'_> {
        match &self.env {
            Env::Mdp { mdp, policy } => Problem::Mdp { mdp, policy },
            Env::Game { game, policies } => Problem::Game { game, policies },
        }
    }

    pub fn gamma(&self) -> f64 {
        self.problem().gamma()
    }

    /// Feature rows visited with positive stationary probability.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }
}

/// Raw per-state coordinates used by grid features.
type Coords = Vec<Vec<f64>>;

fn build_env(spec: &ExperimentSpec) -> Result<(Env, Option<Coords>)> {
    let game = match &spec.env {
        EnvSpec::RandomGame {
            n_states,
            n_actions_p1,
            n_actions_p2,
            gamma,
            r_max,
            seed,
        } => Some(random_game(*n_states, *n_actions_p1, *n_actions_p2, *gamma, *r_max, *seed)?),
        EnvSpec::GameFile { path } => Some(read_json::<MarkovGame>(path)?),
        _ => None,
    };
    if let Some(game) = game {
        let policies = match &spec.policy {
            PolicySpec::Uniform => PolicyPair::uniform(&game),
            PolicySpec::File { path } => read_json::<PolicyPair>(path)?,
            PolicySpec::EpsilonGreedy { .. } => {
                return Err(RunnerError::Invalid("epsilon-greedy policies are defined for MDPs only".into()))
            }
        };
        return Ok((Env::Game { game, policies }, None));
    }
    let (mdp, coords) = match &spec.env {
        EnvSpec::RandomMdp {
            n_states,
            n_actions,
            gamma,
            r_max,
            seed,
        } => (random_mdp(*n_states, *n_actions, *gamma, *r_max, *seed)?, None),
        EnvSpec::Chain { stay, reward, gamma } => (TabularMdp::symmetric_chain(*stay, *reward, *gamma)?, None),
        EnvSpec::Gridworld { rows, cols, slip, gamma } => {
            let mdp = gridworld(*rows, *cols, *slip, *gamma)?;
            let coords = (0..rows * cols).map(|s| vec![(s / cols) as f64, (s % cols) as f64]).collect();
            (mdp, Some(coords))
        }
        EnvSpec::MdpFile { path } => (read_json::<TabularMdp>(path)?, None),
        EnvSpec::RandomGame { .. } | EnvSpec::GameFile { .. } => unreachable!("games handled above"),
    };
    let policy = match &spec.policy {
        PolicySpec::Uniform => TabularPolicy::uniform(mdp.n_states(), mdp.n_actions())?,
        PolicySpec::EpsilonGreedy { epsilon } => epsilon_greedy(&exact_q_star(&mdp, 1e-10)?.q, *epsilon)?,
        PolicySpec::File { path } => read_json::<TabularPolicy>(path)?,
    };
    Ok((Env::Mdp { mdp, policy }, coords))
}

/// Gridworld with actions up, down, left, right. The intended move happens
/// with probability `1 - slip`, each other move with `slip / 3`; moves into
/// a wall stay put. The bottom-right cell pays reward 1 for every action and
/// resets to a uniformly random cell.
pub fn gridworld(rows: usize, cols: usize, slip: f64, gamma: f64) -> Result<TabularMdp> {
    if rows * cols < 2 {
        return Err(RunnerError::Invalid("gridworld needs at least two cells".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(RunnerError::Invalid(format!("slip must lie in [0,1], got {slip}")));
    }
    let n = rows * cols;
    let goal = n - 1;
    let step = |s: usize, a: usize| -> usize {
        let (r, c) = (s / cols, s % cols);
        match a {
            0 if r > 0 => s - cols,
            1 if r + 1 < rows => s + cols,
            2 if c > 0 => s - 1,
            3 if c + 1 < cols => s + 1,
            _ => s,
        }
    };
    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for s in 0..n {
        for a in 0..4 {
            if s == goal {
                transition[s][a] = vec![1.0 / n as f64; n];
                reward[s][a] = 1.0;
                continue;
            }
            for b in 0..4 {
                let p = if a == b { 1.0 - slip } else { slip / 3.0 };
                transition[s][a][step(s, b)] += p;
            }
        }
    }
    Ok(TabularMdp::new(transition, reward, gamma, Some(1.0))?)
}

fn build_features(spec: &FeatureSpec, env: &Env, n_rows: usize, coords: Option<&[Vec<f64>]>) -> Result<FeatureMap> {
    let (n_states, n_actions) = match env {
        Env::Mdp { mdp, .. } => (mdp.n_states(), mdp.n_actions()),
        Env::Game { game, .. } => (game.n_states(), game.n_actions_p1() * game.n_actions_p2()),
    };
    match spec {
        FeatureSpec::OneHot => Ok(one_hot_features(n_states, n_actions)?),
        FeatureSpec::RandomUnit { dim, seed, min_angle_deg } => {
            Ok(random_unit_features(n_rows, *dim, *seed, min_angle_deg.to_radians())?)
        }
        FeatureSpec::Shared { distinct, dim, seed } => {
            let base = random_unit_features(*distinct, *dim, *seed, DEFAULT_MIN_ANGLE)?;
            let rows = (0..n_rows).map(|i| base.row(i % distinct).to_vec()).collect();
            Ok(FeatureMap::from_rows(rows, FeatureKind::Custom)?)
        }
        FeatureSpec::Grid { bins } => {
            let (raw, hi) = grid_coordinates(env, n_states, n_actions, coords);
            if bins.len() != hi.len() {
                return Err(RunnerError::Invalid(format!("grid features need {} bin counts", hi.len())));
            }
            let lo = vec![-0.5; hi.len()];
            let grid = grid_features(&raw, bins, &lo, &hi)?;
            let rows = grid.assignment.iter().map(|&r| grid.map.row(r).to_vec()).collect();
            Ok(FeatureMap::from_rows(rows, FeatureKind::Grid)?)
        }
        FeatureSpec::File { path } => Ok(read_json::<FeatureMap>(path)?),
    }
}

/// Raw coordinates of every feature row and the upper grid bounds.
fn grid_coordinates(env: &Env, n_states: usize, n_actions: usize, coords: Option<&[Vec<f64>]>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let state_coords: Vec<Vec<f64>> = match coords {
        Some(c) => c.to_vec(),
        None => (0..n_states).map(|s| vec![s as f64]).collect(),
    };
    let mut hi: Vec<f64> = (0..state_coords[0].len())
        .map(|j| state_coords.iter().map(|c| c[j]).fold(0.0, f64::max) + 0.5)
        .collect();
    let action_dims: Vec<usize> = match env {
        Env::Mdp { .. } => vec![n_actions],
        Env::Game { game, .. } => vec![game.n_actions_p1(), game.n_actions_p2()],
    };
    hi.extend(action_dims.iter().map(|&n| n as f64 - 0.5));
    let mut raw = Vec::with_capacity(n_states * n_actions);
    for c in &state_coords {
        for a in 0..n_actions {
            let mut x = c.clone();
            match action_dims.as_slice() {
                [_] => x.push(a as f64),
                [_, n2] => {
                    x.push((a / n2) as f64);
                    x.push((a % n2) as f64);
                }
                _ => unreachable!(),
            }
            raw.push(x);
        }
    }
    (raw, hi)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| RunnerError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::parse(path, e))
}
