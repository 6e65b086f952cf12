//! Projected stochastic semi-gradient learners: neural TD (policy
//! evaluation), neural Q-learning and minimax neural Q-learning.
//!
//! One iteration samples the next chained transition, forms the TD error
//! `Delta_t`, steps along `-eta_t Delta_t grad Q(x_t; theta^t)` and projects
//! back onto the ball `S_omega` around the initialization.

use serde::{Deserialize, Serialize};

use crate::env::{
    argmax, default_burn_in, GameSampler, GameTransition, MarkovGame, MdpSampler, PolicyPair, StateChain, TabularMdp, TabularPolicy,
    Transition,
};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::network::{distance, norm, BallConstraint, NetworkParams};
use crate::oracles::{matrix_game_value, MinimaxOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td,
    Q,
    #[serde(alias = "minimax")]
    MinimaxQ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// `eta_t = 1 / (2 c lambda0 (t + 1))` with `c = 1 - gamma` for TD and
    /// `c = nu` (default `1 - gamma`) for the Q-learning variants.
    Theorem {
        lambda0: f64,
        #[serde(default)]
        nu: Option<f64>,
    },
    Constant { eta0: f64 },
}

pub fn step_size(schedule: &Schedule, algorithm: Algorithm, gamma: f64, t: usize) -> Result<f64> {
    match *schedule {
        Schedule::Constant { eta0 } => {
            if !(eta0 > 0.0) {
                return Err(Error::config(format!("eta0 must be positive, got {eta0}")));
            }
            Ok(eta0)
        }
        Schedule::Theorem { lambda0, nu } => {
            if !(lambda0 > 0.0) {
                return Err(Error::config(format!("lambda0 must be positive, got {lambda0}")));
            }
            let c = match (algorithm, nu) {
                (Algorithm::Td, _) | (_, None) => 1.0 - gamma,
                (_, Some(nu)) => nu,
            };
            if !(c > 0.0) {
                return Err(Error::config(format!("schedule constant must be positive, got {c}")));
            }
            Ok(1.0 / (2.0 * c * lambda0 * (t as f64 + 1.0)))
        }
    }
}

fn td_from_values(q_t: f64, r: f64, gamma: f64, q_next: f64) -> f64 {
    q_t - (r + gamma * q_next)
}

/// `Q(x_t) - (r_t + gamma Q(x_{t+1}))`.
pub fn td_error_policy_eval(params: &NetworkParams, phi_t: &[f64], phi_t1: &[f64], r_t: f64, gamma: f64) -> Result<f64> {
    Ok(td_from_values(params.q_value(phi_t)?, r_t, gamma, params.q_value(phi_t1)?))
}

/// Greedy next-state value `max_b Q(s', b)`.
fn max_next(params: &NetworkParams, features: &FeatureMap, n_actions: usize, s_next: usize) -> f64 {
    let qs: Vec<f64> = (0..n_actions)
        .map(|b| params.forward_unchecked(features.row(s_next * n_actions + b)).0)
        .collect();
    qs[argmax(&qs)]
}

fn minimax_next(params: &NetworkParams, features: &FeatureMap, n1: usize, n2: usize, s_next: usize, order: MinimaxOrder) -> f64 {
    let base = s_next * n1 * n2;
    let qs: Vec<f64> = (0..n1 * n2).map(|k| params.forward_unchecked(features.row(base + k)).0).collect();
    matrix_game_value(&qs, n1, n2, order).0
}

fn check_table(params: &NetworkParams, features: &FeatureMap, rows: usize) -> Result<()> {
    if features.dim() != params.input_dim() {
        return Err(Error::Dimension {
            expected: params.input_dim(),
            got: features.dim(),
        });
    }
    if features.n_rows() < rows {
        return Err(Error::Dimension {
            expected: rows,
            got: features.n_rows(),
        });
    }
    Ok(())
}

/// `Q(s_t, a_t) - (r_t + gamma max_b Q(s_next, b))`, ties to the smallest `b`.
#[allow(clippy::too_many_arguments)]
pub fn td_error_optimality(
    params: &NetworkParams,
    features: &FeatureMap,
    n_actions: usize,
    s_t: usize,
    a_t: usize,
    r_t: f64,
    s_next: usize,
    gamma: f64,
) -> Result<f64> {
    check_table(params, features, (s_t.max(s_next) + 1) * n_actions)?;
    if a_t >= n_actions {
        return Err(Error::config("action out of range"));
    }
    let q_t = params.forward_unchecked(features.row(s_t * n_actions + a_t)).0;
    Ok(td_from_values(q_t, r_t, gamma, max_next(params, features, n_actions, s_next)))
}

/// Minimax TD error with the next-state value taken in the given order.
#[allow(clippy::too_many_arguments)]
pub fn td_error_minimax(
    params: &NetworkParams,
    features: &FeatureMap,
    n_actions: (usize, usize),
    s_t: usize,
    a1: usize,
    a2: usize,
    r_t: f64,
    s_next: usize,
    gamma: f64,
    order: MinimaxOrder,
) -> Result<f64> {
    let (n1, n2) = n_actions;
    check_table(params, features, (s_t.max(s_next) + 1) * n1 * n2)?;
    if a1 >= n1 || a2 >= n2 {
        return Err(Error::config("action out of range"));
    }
    let q_t = params.forward_unchecked(features.row((s_t * n1 + a1) * n2 + a2)).0;
    Ok(td_from_values(q_t, r_t, gamma, minimax_next(params, features, n1, n2, s_next, order)))
}

/// Environment plus behaviour policy generating the samples.
#[derive(Clone, Copy, Debug)]
pub enum Problem<'a> {
    Mdp {
        mdp: &'a TabularMdp,
        policy: &'a TabularPolicy,
    },
    Game {
        game: &'a MarkovGame,
        policies: &'a PolicyPair,
    },
}

impl Problem<'_> {
    pub fn gamma(&self) -> f64 {
        match self {
            Problem::Mdp { mdp, .. } => mdp.gamma(),
            Problem::Game { game, .. } => game.gamma(),
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            Problem::Mdp { mdp, .. } => mdp.n_pairs(),
            Problem::Game { game, .. } => game.n_triples(),
        }
    }

    fn chain(&self) -> Result<StateChain> {
        match self {
            Problem::Mdp { mdp, policy } => StateChain::from_mdp(mdp, policy),
            Problem::Game { game, policies } => StateChain::from_game(game, policies),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Overrides the environment discount when set.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub omega: f64,
    pub iterations: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Defaults to ten fitted mixing times of the behaviour chain.
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub eval_every: usize,
    #[serde(default)]
    pub minimax_order: MinimaxOrder,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::config(format!("omega must be positive, got {}", self.omega)));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::config(format!("gamma must lie in (0,1), got {g}")));
            }
        }
        step_size(&self.schedule, self.algorithm, self.gamma.unwrap_or(0.5), 0)?;
        Ok(())
    }
}

/// Target values over the feature rows with the weights of the mean-square
/// evaluation error.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTarget {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EvalTarget {
    pub fn error(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(&self.values)
            .zip(&self.weights)
            .map(|((q, v), w)| w * (q - v) * (q - v))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: usize,
    pub td_error: f64,
    pub theta_dist: f64,
    pub q_eval_error: Option<f64>,
    pub projection_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub gamma: f64,
    pub burn_in: usize,
    pub rows: Vec<LogRow>,
}

impl RunRecord {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "td_error", "theta_dist", "q_eval_error", "projection_hit"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                format!("{:e}", r.td_error),
                format!("{:e}", r.theta_dist),
                r.q_eval_error.map(|e| format!("{e:e}")).unwrap_or_default(),
                u8::from(r.projection_hit).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn final_eval_error(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.q_eval_error)
    }
}

/// Sampled step in a form shared by all three algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    Sarsa { row: usize, r: f64, next_row: usize },
    Max { row: usize, r: f64, s_next: usize },
    Minimax { row: usize, r: f64, s_next: usize },
}

impl Sample {
    fn row(&self) -> usize {
        match *self {
            Sample::Sarsa { row, .. } | Sample::Max { row, .. } | Sample::Minimax { row, .. } => row,
        }
    }
}

impl Sample {
    /// The sample an MDP transition yields for `algorithm` (`Td` or `Q`).
    pub fn from_transition(tr: &Transition, n_actions: usize, algorithm: Algorithm) -> Result<Self> {
        let row = tr.s * n_actions + tr.a;
        match algorithm {
            Algorithm::Td => Ok(Sample::Sarsa {
                row,
                r: tr.r,
                next_row: tr.s_next * n_actions + tr.a_next,
            }),
            Algorithm::Q => Ok(Sample::Max { row, r: tr.r, s_next: tr.s_next }),
            Algorithm::MinimaxQ => Err(Error::config("minimax samples come from game transitions")),
        }
    }

    pub fn from_game_transition(tr: &GameTransition, n1: usize, n2: usize) -> Self {
        Sample::Minimax {
            row: (tr.s * n1 + tr.a1) * n2 + tr.a2,
            r: tr.r,
            s_next: tr.s_next,
        }
    }

    fn matches(&self, algorithm: Algorithm) -> bool {
        matches!(
            (self, algorithm),
            (Sample::Sarsa { .. }, Algorithm::Td) | (Sample::Max { .. }, Algorithm::Q) | (Sample::Minimax { .. }, Algorithm::MinimaxQ)
        )
    }
}

enum Stream<'a> {
    Mdp(MdpSampler<'a>, usize),
    Game(GameSampler<'a>, usize, usize),
    /// A fixed sample list cycled in order.
    Replay { samples: Vec<Sample>, pos: usize, n1: usize, n2: usize },
}

/// Everything one update needs, returned for inspection by callers that
/// step the trainer manually.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub t: usize,
    pub sample: Sample,
    pub td_error: f64,
    pub eta: f64,
    /// `Delta_t grad Q(x_t; theta^t)`
    pub direction: Vec<f64>,
    pub projection_hit: bool,
}

/// Step-wise driver for one run.
pub struct Trainer<'a> {
    algorithm: Algorithm,
    gamma: f64,
    schedule: Schedule,
    order: MinimaxOrder,
    features: &'a FeatureMap,
    params: NetworkParams,
    ball: BallConstraint,
    stream: Stream<'a>,
    burn_in: usize,
    t: usize,
    scratch: Vec<f64>,
}

/// `(Delta, Delta * grad Q(x_t; theta))` for a sample.
pub fn semi_gradient(
    params: &NetworkParams,
    features: &FeatureMap,
    sample: &Sample,
    gamma: f64,
    n_actions: (usize, usize),
    order: MinimaxOrder,
) -> (f64, Vec<f64>) {
    let (q_t, mut g) = params.value_and_grad_unchecked(features.row(sample.row()));
    let (n1, n2) = n_actions;
    let delta = match *sample {
        Sample::Sarsa { r, next_row, .. } => td_from_values(q_t, r, gamma, params.forward_unchecked(features.row(next_row)).0),
        Sample::Max { r, s_next, .. } => td_from_values(q_t, r, gamma, max_next(params, features, n1, s_next)),
        Sample::Minimax { r, s_next, .. } => td_from_values(q_t, r, gamma, minimax_next(params, features, n1, n2, s_next, order)),
    };
    g.iter_mut().for_each(|x| *x *= delta);
    (delta, g)
}

impl<'a> Trainer<'a> {
    pub fn new(problem: Problem<'a>, features: &'a FeatureMap, init: &NetworkParams, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if features.n_rows() != problem.n_rows() {
            return Err(Error::Dimension {
                expected: problem.n_rows(),
                got: features.n_rows(),
            });
        }
        check_table(init, features, problem.n_rows())?;
        let gamma = config.gamma.unwrap_or_else(|| problem.gamma());
        let burn_in = match config.burn_in {
            Some(b) => b,
            None => default_burn_in(&problem.chain()?),
        };
        let stream = match (config.algorithm, problem) {
            (Algorithm::Td | Algorithm::Q, Problem::Mdp { mdp, policy }) => {
                Stream::Mdp(MdpSampler::new(mdp, policy, config.seed, burn_in)?, mdp.n_actions())
            }
            (Algorithm::MinimaxQ, Problem::Game { game, policies }) => Stream::Game(
                GameSampler::new(game, policies, config.seed, burn_in)?,
                game.n_actions_p1(),
                game.n_actions_p2(),
            ),
            (alg, _) => {
                return Err(Error::config(format!("algorithm {alg:?} does not match the environment kind")));
            }
        };
        Ok(Self {
            algorithm: config.algorithm,
            gamma,
            schedule: config.schedule,
            order: config.minimax_order,
            features,
            params: init.clone(),
            ball: BallConstraint::new(init.theta().to_vec(), config.omega)?,
            stream,
            burn_in,
            t: 0,
            scratch: vec![0.0; init.n_params()],
        })
    }

    /// A trainer that cycles `samples` in order instead of drawing from the
    /// chain, e.g. several epochs over one stored trajectory.
    pub fn replay(
        features: &'a FeatureMap,
        init: &NetworkParams,
        config: &TrainConfig,
        gamma: f64,
        n_actions: (usize, usize),
        samples: Vec<Sample>,
    ) -> Result<Self> {
        config.validate()?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if samples.is_empty() {
            return Err(Error::config("replay needs at least one sample"));
        }
        if let Some(bad) = samples.iter().find(|s| !s.matches(config.algorithm)) {
            return Err(Error::config(format!("sample {bad:?} does not fit algorithm {:?}", config.algorithm)));
        }
        let (n1, n2) = n_actions;
        let n_rows = features.n_rows();
        let n_states = n_rows / (n1 * n2).max(1);
        if n1 * n2 == 0 || n_states * n1 * n2 != n_rows {
            return Err(Error::config(format!("{n_rows} feature rows do not split into {n1}x{n2} actions")));
        }
        let in_range = |s: &Sample| match *s {
            Sample::Sarsa { row, next_row, .. } => row < n_rows && next_row < n_rows,
            Sample::Max { row, s_next, .. } | Sample::Minimax { row, s_next, .. } => row < n_rows && s_next < n_states,
        };
        if !samples.iter().all(in_range) {
            return Err(Error::config("replay sample indexes past the feature table"));
        }
        check_table(init, features, n_rows)?;
        Ok(Self {
            algorithm: config.algorithm,
            gamma: config.gamma.unwrap_or(gamma),
            schedule: config.schedule,
            order: config.minimax_order,
            features,
            params: init.clone(),
            ball: BallConstraint::new(init.theta().to_vec(), config.omega)?,
            stream: Stream::Replay { samples, pos: 0, n1, n2 },
            burn_in: 0,
            t: 0,
            scratch: vec![0.0; init.n_params()],
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn burn_in(&self) -> usize {
        self.burn_in
    }
    pub fn ball(&self) -> &BallConstraint {
        &self.ball
    }
    pub fn n_actions(&self) -> (usize, usize) {
        match self.stream {
            Stream::Mdp(_, na) => (na, 1),
            Stream::Game(_, n1, n2) | Stream::Replay { n1, n2, .. } => (n1, n2),
        }
    }
    pub fn order(&self) -> MinimaxOrder {
        self.order
    }

    fn next_sample(&mut self) -> Sample {
        match &mut self.stream {
            Stream::Mdp(s, na) => {
                let tr = s.next_transition();
                let row = tr.s * *na + tr.a;
                match self.algorithm {
                    Algorithm::Td => Sample::Sarsa {
                        row,
                        r: tr.r,
                        next_row: tr.s_next * *na + tr.a_next,
                    },
                    _ => Sample::Max { row, r: tr.r, s_next: tr.s_next },
                }
            }
            Stream::Game(s, n1, n2) => Sample::from_game_transition(&s.next_transition(), *n1, *n2),
            Stream::Replay { samples, pos, .. } => {
                let out = samples[*pos];
                *pos = (*pos + 1) % samples.len();
                out
            }
        }
    }

    /// Samples a transition and evaluates `Delta_t` and the semi-gradient
    /// without updating.
    fn peek(&mut self) -> (Sample, f64, Vec<f64>) {
        let sample = self.next_sample();
        let (delta, dir) = semi_gradient(&self.params, self.features, &sample, self.gamma, self.n_actions(), self.order);
        (sample, delta, dir)
    }

    fn apply(&mut self, sample: Sample, delta: f64, direction: Vec<f64>) -> Result<StepInfo> {
        let grad_norm = norm(&direction);
        if !delta.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step: self.t,
                td_error: delta,
                grad_norm,
            });
        }
        let eta = step_size(&self.schedule, self.algorithm, self.gamma, self.t)?;
        self.scratch.copy_from_slice(self.params.theta());
        for (th, g) in self.scratch.iter_mut().zip(&direction) {
            *th -= eta * g;
        }
        if self.scratch.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: self.t,
                td_error: delta,
                grad_norm,
            });
        }
        let projection_hit = self.ball.project_in_place(&mut self.scratch);
        self.params.set_theta(&self.scratch);
        let info = StepInfo {
            t: self.t,
            sample,
            td_error: delta,
            eta,
            direction,
            projection_hit,
        };
        self.t += 1;
        Ok(info)
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<StepInfo> {
        let (sample, delta, dir) = self.peek();
        self.apply(sample, delta, dir)
    }

    /// Runs `iterations` updates, logging every `eval_every` steps and at the end.
    pub fn run(mut self, config: &TrainConfig, eval: Option<&EvalTarget>) -> Result<(NetworkParams, RunRecord)> {
        if let Some(e) = eval {
            if e.values.len() != self.features.n_rows() || e.weights.len() != self.features.n_rows() {
                return Err(Error::Dimension {
                    expected: self.features.n_rows(),
                    got: e.values.len(),
                });
            }
        }
        let mut rows = Vec::new();
        let mut last_hit = false;
        let log = |tr: &Trainer, t: usize, delta: f64, hit: bool| -> Result<LogRow> {
            let q_eval_error = match eval {
                Some(e) => Some(e.error(&tr.params.q_values(tr.features)?)),
                None => None,
            };
            Ok(LogRow {
                t,
                td_error: delta,
                theta_dist: distance(tr.params.theta(), &tr.ball.center),
                q_eval_error,
                projection_hit: hit,
            })
        };
        for t in 0..config.iterations {
            let (sample, delta, dir) = self.peek();
            if t % config.eval_every == 0 {
                rows.push(log(&self, t, delta, last_hit)?);
            }
            last_hit = self.apply(sample, delta, dir)?.projection_hit;
        }
        // Final row: TD error of a fresh sample at theta^T, no update.
        let (_, delta, _) = self.peek();
        rows.push(log(&self, config.iterations, delta, last_hit)?);
        let record = RunRecord {
            config: config.clone(),
            gamma: self.gamma,
            burn_in: self.burn_in,
            rows,
        };
        Ok((self.params, record))
    }
}

/// Builds a trainer and runs it to completion.
pub fn train(
    problem: Problem<'_>,
    features: &FeatureMap,
    init: &NetworkParams,
    config: &TrainConfig,
    eval: Option<&EvalTarget>,
) -> Result<(NetworkParams, RunRecord)> {
    Trainer::new(problem, features, init, config)?.run(config, eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Architecture};

    #[test]
    fn step_size_examples() {
        let td = Schedule::Theorem { lambda0: 1.0, nu: None };
        assert!((step_size(&td, Algorithm::Td, 0.9, 0).unwrap() - 5.0).abs() < 1e-12);
        let r = step_size(&td, Algorithm::Td, 0.9, 1).unwrap() / step_size(&td, Algorithm::Td, 0.9, 0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let mm = Schedule::Theorem { lambda0: 2.0, nu: Some(0.5) };
        assert!((step_size(&mm, Algorithm::MinimaxQ, 0.9, 3).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(step_size(&Schedule::Constant { eta0: 0.3 }, Algorithm::Q, 0.9, 7).unwrap(), 0.3);
        assert!(step_size(&Schedule::Constant { eta0: 0.0 }, Algorithm::Q, 0.9, 0).is_err());
        assert!(step_size(&Schedule::Theorem { lambda0: -1.0, nu: None }, Algorithm::Td, 0.9, 0).is_err());
    }

    #[test]
    fn td_error_examples() {
        let a = Architecture::new(1, 4, 2, Activation::Elu);
        let zero = NetworkParams::new(a, vec![0.0; 8], vec![1.0; 4]).unwrap();
        let x = [1.0, 0.0];
        assert_eq!(td_error_policy_eval(&zero, &x, &x, 0.7, 0.9).unwrap(), -0.7);
        let (p, _) = crate::network::init_params(a, 4).unwrap();
        let y = [0.0, 1.0];
        let d = td_error_policy_eval(&p, &x, &y, 0.3, 0.0).unwrap();
        assert_eq!(d, p.q_value(&x).unwrap() - 0.3);
        assert!((td_from_values(1.0, 0.5, 0.9, 2.0) + 1.3).abs() < 1e-15);
        assert!((td_from_values(0.0, 0.0, 0.5, 0.7) + 0.35).abs() < 1e-15);
    }
}
