//! Finite MDPs, two-player zero-sum Markov games, tabular policies and
//! Markovian trajectory generation.
//!
//! State-action pairs are flattened in row-major order everywhere in the
//! crate: `(s, a) -> s * n_actions + a` for MDPs and
//! `(s, a1, a2) -> (s * n1 + a1) * n2 + a2` for games.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_index, sample_uniform_index, seeded, SeededRng};

const ROW_SUM_TOL: f64 = 1e-12;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("discount must lie in (0,1), got {gamma}")));
    }
    Ok(())
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(format!("{what}: negative or non-finite probability")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::config(format!("{what}: row sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Normalized positive random row ("Dirichlet-style" with unit shape).
fn random_simplex_row(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    // Fold the rounding residue into the largest entry so the row sums to 1 exactly
    // (or within one ulp).
    let resid = 1.0 - row.iter().sum::<f64>();
    if let Some(imax) = (0..n).max_by(|&i, &j| row[i].total_cmp(&row[j])) {
        row[imax] += resid;
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    /// `transition[s][a][s']`
    transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    reward: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
}

impl TryFrom<MdpDoc> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDoc) -> Result<Self> {
        let mdp = TabularMdp::new(doc.transition, doc.reward, doc.gamma, doc.r_max)?;
        if mdp.n_states != doc.n_states || mdp.n_actions != doc.n_actions {
            return Err(Error::config("declared sizes disagree with transition tensor"));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for MdpDoc {
    fn from(m: TabularMdp) -> Self {
        MdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transition: m.transition,
            reward: m.reward,
            r_max: Some(m.r_max),
        }
    }
}

impl TabularMdp {
    /// Validates and builds an MDP. `r_max` defaults to `max |r|` (or 1 for
    /// an all-zero reward).
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        r_max: Option<f64>,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::config("MDP needs at least one state"));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::config("MDP needs at least one action"));
        }
        if reward.len() != n_states {
            return Err(Error::config("reward has wrong number of states"));
        }
        for (s, (rows, rs)) in transition.iter().zip(&reward).enumerate() {
            if rows.len() != n_actions || rs.len() != n_actions {
                return Err(Error::config(format!("state {s}: wrong number of actions")));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::config(format!("P[{s}][{a}] has wrong length")));
                }
                check_distribution(row, &format!("P[{s}][{a}]"))?;
            }
        }
        let observed = reward.iter().flatten().fold(0.0_f64, |m, r| m.max(r.abs()));
        if !observed.is_finite() {
            return Err(Error::config("non-finite reward"));
        }
        let r_max = match r_max {
            Some(r) if r > 0.0 && observed <= r => r,
            Some(r) => {
                return Err(Error::config(format!(
                    "r_max={r} must be positive and bound every |r| (max {observed})"
                )))
            }
            None if observed > 0.0 => observed,
            None => 1.0,
        };
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            r_max,
            transition,
            reward,
        })
    }

    /// Two-state, single-action chain that stays with probability `stay`.
    pub fn symmetric_chain(stay: f64, reward: [f64; 2], gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::config("stay probability must lie in [0,1]"));
        }
        let p = vec![
            vec![vec![stay, 1.0 - stay]],
            vec![vec![1.0 - stay, stay]],
        ];
        Self::new(p, vec![vec![reward[0]], vec![reward[1]]], gamma, None)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Same dynamics with another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }

    /// Reads the MDP as a one-action-per-player game (`n1 = n_actions`, `n2 = 1`).
    pub fn to_game(&self) -> MarkovGame {
        let transition = self
            .transition
            .iter()
            .map(|rows| rows.iter().map(|row| vec![row.clone()]).collect())
            .collect();
        let reward = self
            .reward
            .iter()
            .map(|rs| rs.iter().map(|&r| vec![r]).collect())
            .collect();
        MarkovGame::new(transition, reward, self.gamma, Some(self.r_max))
            .expect("a valid MDP is a valid game")
    }
}

/// Random test instance: Dirichlet-style transition rows, rewards uniform in
/// `[-r_max, r_max]`.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::config("random_mdp needs n_states >= 1 and n_actions >= 1"));
    }
    if !(r_max > 0.0) {
        return Err(Error::config("r_max must be positive"));
    }
    check_gamma(gamma)?;
    let mut rng = seeded(seed);
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| random_simplex_row(n_states, &mut rng))
                .collect()
        })
        .collect();
    let reward = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| rng.random_range(-r_max..=r_max))
                .collect()
        })
        .collect();
    TabularMdp::new(transition, reward, gamma, Some(r_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameDoc", into = "GameDoc")]
pub struct MarkovGame {
    n_states: usize,
    n_actions_p1: usize,
    n_actions_p2: usize,
    gamma: f64,
    r_max: f64,
    /// `transition[s][a1][a2][s']`
    transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `reward[s][a1][a2]`, paid to player 1.
    reward: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct GameDoc {
    n_states: usize,
    n_actions_p1: usize,
    n_actions_p2: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<Vec<f64>>>>,
    reward: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
}

impl TryFrom<GameDoc> for MarkovGame {
    type Error = Error;

    fn try_from(doc: GameDoc) -> Result<Self> {
        let g = MarkovGame::new(doc.transition, doc.reward, doc.gamma, doc.r_max)?;
        if g.n_states != doc.n_states
            || g.n_actions_p1 != doc.n_actions_p1
            || g.n_actions_p2 != doc.n_actions_p2
        {
            return Err(Error::config("declared sizes disagree with transition tensor"));
        }
        Ok(g)
    }
}

impl From<MarkovGame> for GameDoc {
    fn from(g: MarkovGame) -> Self {
        GameDoc {
            n_states: g.n_states,
            n_actions_p1: g.n_actions_p1,
            n_actions_p2: g.n_actions_p2,
            gamma: g.gamma,
            transition: g.transition,
            reward: g.reward,
            r_max: Some(g.r_max),
        }
    }
}

impl MarkovGame {
    pub fn new(
        transition: Vec<Vec<Vec<Vec<f64>>>>,
        reward: Vec<Vec<Vec<f64>>>,
        gamma: f64,
        r_max: Option<f64>,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::config("game needs at least one state"));
        }
        let n1 = transition[0].len();
        let n2 = transition[0].first().map_or(0, Vec::len);
        if n1 == 0 || n2 == 0 {
            return Err(Error::config("each player needs at least one action"));
        }
        if reward.len() != n_states {
            return Err(Error::config("reward has wrong number of states"));
        }
        for s in 0..n_states {
            if transition[s].len() != n1 || reward[s].len() != n1 {
                return Err(Error::config(format!("state {s}: wrong number of p1 actions")));
            }
            for a1 in 0..n1 {
                if transition[s][a1].len() != n2 || reward[s][a1].len() != n2 {
                    return Err(Error::config(format!("state {s}: wrong number of p2 actions")));
                }
                for a2 in 0..n2 {
                    let row = &transition[s][a1][a2];
                    if row.len() != n_states {
                        return Err(Error::config(format!("P[{s}][{a1}][{a2}] has wrong length")));
                    }
                    check_distribution(row, &format!("P[{s}][{a1}][{a2}]"))?;
                }
            }
        }
        let observed = reward
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, r| m.max(r.abs()));
        if !observed.is_finite() {
            return Err(Error::config("non-finite reward"));
        }
        let r_max = match r_max {
            Some(r) if r > 0.0 && observed <= r => r,
            Some(r) => return Err(Error::config(format!("r_max={r} does not bound rewards"))),
            None if observed > 0.0 => observed,
            None => 1.0,
        };
        Ok(Self {
            n_states,
            n_actions_p1: n1,
            n_actions_p2: n2,
            gamma,
            r_max,
            transition,
            reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions_p1(&self) -> usize {
        self.n_actions_p1
    }
    pub fn n_actions_p2(&self) -> usize {
        self.n_actions_p2
    }
    pub fn n_triples(&self) -> usize {
        self.n_states * self.n_actions_p1 * self.n_actions_p2
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn transition(&self, s: usize, a1: usize, a2: usize) -> &[f64] {
        &self.transition[s][a1][a2]
    }
    pub fn reward(&self, s: usize, a1: usize, a2: usize) -> f64 {
        self.reward[s][a1][a2]
    }
    pub fn triple_index(&self, s: usize, a1: usize, a2: usize) -> usize {
        (s * self.n_actions_p1 + a1) * self.n_actions_p2 + a2
    }
}

pub fn random_game(
    n_states: usize,
    n_actions_p1: usize,
    n_actions_p2: usize,
    gamma: f64,
    r_max: f64,
    seed: u64,
) -> Result<MarkovGame> {
    if n_states == 0 || n_actions_p1 == 0 || n_actions_p2 == 0 {
        return Err(Error::config("random_game needs positive sizes"));
    }
    if !(r_max > 0.0) {
        return Err(Error::config("r_max must be positive"));
    }
    check_gamma(gamma)?;
    let mut rng = seeded(seed);
    let transition = (0..n_states)
        .map(|_| {
            (0..n_actions_p1)
                .map(|_| {
                    (0..n_actions_p2)
                        .map(|_| random_simplex_row(n_states, &mut rng))
                        .collect()
                })
                .collect()
        })
        .collect();
    let reward = (0..n_states)
        .map(|_| {
            (0..n_actions_p1)
                .map(|_| {
                    (0..n_actions_p2)
                        .map(|_| rng.random_range(-r_max..=r_max))
                        .collect()
                })
                .collect()
        })
        .collect();
    MarkovGame::new(transition, reward, gamma, Some(r_max))
}

/// Stochastic policy `probs[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDoc", into = "PolicyDoc")]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<PolicyDoc> for TabularPolicy {
    type Error = Error;
    fn try_from(doc: PolicyDoc) -> Result<Self> {
        TabularPolicy::new(doc.probs)
    }
}

impl From<TabularPolicy> for PolicyDoc {
    fn from(p: TabularPolicy) -> Self {
        PolicyDoc { probs: p.probs }
    }
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(Error::config("policy needs at least one state and one action"));
        }
        let n_actions = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::config(format!("policy row {s} has wrong length")));
            }
            check_distribution(row, &format!("pi[{s}]"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::config("policy needs at least one action"));
        }
        Self::new(vec![vec![1.0 / n_actions as f64; n_actions]; n_states])
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }
    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }
    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states() != n_states || self.n_actions() != n_actions {
            return Err(Error::config(format!(
                "policy shape {}x{} does not match environment {}x{}",
                self.n_states(),
                self.n_actions(),
                n_states,
                n_actions
            )));
        }
        Ok(())
    }
}

/// ε-greedy policy: `ε/|A|` everywhere plus `1-ε` on the greedy action.
/// Ties go to the smallest action index.
pub fn epsilon_greedy(q: &[Vec<f64>], epsilon: f64) -> Result<TabularPolicy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("epsilon must lie in [0,1], got {epsilon}")));
    }
    if q.is_empty() {
        return Err(Error::config("epsilon_greedy: no states"));
    }
    let probs = q
        .iter()
        .map(|row| {
            if row.is_empty() {
                return Err(Error::config("epsilon_greedy: empty action set"));
            }
            let n = row.len() as f64;
            let best = argmax(row);
            Ok(row
                .iter()
                .enumerate()
                .map(|(a, _)| epsilon / n + if a == best { 1.0 - epsilon } else { 0.0 })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    TabularPolicy::new(probs)
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// First index of the minimum.
pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Independent per-player policies for a Markov game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub first: TabularPolicy,
    pub second: TabularPolicy,
}

impl PolicyPair {
    pub fn uniform(game: &MarkovGame) -> Self {
        Self {
            first: TabularPolicy::uniform(game.n_states(), game.n_actions_p1()).unwrap(),
            second: TabularPolicy::uniform(game.n_states(), game.n_actions_p2()).unwrap(),
        }
    }

    /// Joint probability of `(a1, a2)` at `s`.
    pub fn joint(&self, s: usize, a1: usize, a2: usize) -> f64 {
        self.first.prob(s, a1) * self.second.prob(s, a2)
    }

    fn check_shape(&self, game: &MarkovGame) -> Result<()> {
        self.first.check_shape(game.n_states(), game.n_actions_p1())?;
        self.second.check_shape(game.n_states(), game.n_actions_p2())
    }
}

/// One SARSA-style step `(s, a, r, s', a')`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub a_next: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTransition {
    pub s: usize,
    pub a1: usize,
    pub a2: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub seed: u64,
    pub steps: Vec<T>,
}

/// Streams chained transitions from an MDP under a policy.
///
/// The start state is uniform; the sampled `a'` of each step is reused as
/// the action of the next step.
pub struct MdpSampler<'a> {
    mdp: &'a TabularMdp,
    policy: &'a TabularPolicy,
    rng: SeededRng,
    state: usize,
    action: usize,
}

impl<'a> MdpSampler<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        policy: &'a TabularPolicy,
        seed: u64,
        burn_in: usize,
    ) -> Result<Self> {
        policy.check_shape(mdp.n_states(), mdp.n_actions())?;
        let mut rng = seeded(seed);
        let state = sample_uniform_index(mdp.n_states(), &mut rng);
        let action = sample_index(policy.probs(state), &mut rng);
        let mut sampler = Self {
            mdp,
            policy,
            rng,
            state,
            action,
        };
        for _ in 0..burn_in {
            sampler.next_transition();
        }
        Ok(sampler)
    }

    pub fn next_transition(&mut self) -> Transition {
        let (s, a) = (self.state, self.action);
        let s_next = sample_index(self.mdp.transition(s, a), &mut self.rng);
        let a_next = sample_index(self.policy.probs(s_next), &mut self.rng);
        self.state = s_next;
        self.action = a_next;
        Transition {
            s,
            a,
            r: self.mdp.reward(s, a),
            s_next,
            a_next,
        }
    }
}

pub struct GameSampler<'a> {
    game: &'a MarkovGame,
    policies: &'a PolicyPair,
    rng: SeededRng,
    state: usize,
}

impl<'a> GameSampler<'a> {
    pub fn new(
        game: &'a MarkovGame,
        policies: &'a PolicyPair,
        seed: u64,
        burn_in: usize,
    ) -> Result<Self> {
        policies.check_shape(game)?;
        let mut rng = seeded(seed);
        let state = sample_uniform_index(game.n_states(), &mut rng);
        let mut sampler = Self {
            game,
            policies,
            rng,
            state,
        };
        for _ in 0..burn_in {
            sampler.next_transition();
        }
        Ok(sampler)
    }

    pub fn next_transition(&mut self) -> GameTransition {
        let s = self.state;
        let a1 = sample_index(self.policies.first.probs(s), &mut self.rng);
        let a2 = sample_index(self.policies.second.probs(s), &mut self.rng);
        let s_next = sample_index(self.game.transition(s, a1, a2), &mut self.rng);
        self.state = s_next;
        GameTransition {
            s,
            a1,
            a2,
            r: self.game.reward(s, a1, a2),
            s_next,
        }
    }
}

pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    length: usize,
    seed: u64,
    burn_in: usize,
) -> Result<Trajectory<Transition>> {
    if length == 0 {
        return Err(Error::config("trajectory length must be at least 1"));
    }
    let mut sampler = MdpSampler::new(mdp, policy, seed, burn_in)?;
    let steps = (0..length).map(|_| sampler.next_transition()).collect();
    Ok(Trajectory { seed, steps })
}

pub fn sample_game_trajectory(
    game: &MarkovGame,
    policies: &PolicyPair,
    length: usize,
    seed: u64,
    burn_in: usize,
) -> Result<Trajectory<GameTransition>> {
    if length == 0 {
        return Err(Error::config("trajectory length must be at least 1"));
    }
    let mut sampler = GameSampler::new(game, policies, seed, burn_in)?;
    let steps = (0..length).map(|_| sampler.next_transition()).collect();
    Ok(Trajectory { seed, steps })
}

/// State-to-state transition matrix induced by a policy.
#[derive(Clone, Debug)]
pub struct StateChain {
    pub matrix: DMatrix<f64>,
}

impl StateChain {
    pub fn from_mdp(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Self> {
        policy.check_shape(mdp.n_states(), mdp.n_actions())?;
        let n = mdp.n_states();
        let mut matrix = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..mdp.n_actions() {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for (s2, &p) in mdp.transition(s, a).iter().enumerate() {
                    matrix[(s, s2)] += pa * p;
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn from_game(game: &MarkovGame, policies: &PolicyPair) -> Result<Self> {
        policies.check_shape(game)?;
        let n = game.n_states();
        let mut matrix = DMatrix::zeros(n, n);
        for s in 0..n {
            for a1 in 0..game.n_actions_p1() {
                for a2 in 0..game.n_actions_p2() {
                    let pj = policies.joint(s, a1, a2);
                    if pj == 0.0 {
                        continue;
                    }
                    for (s2, &p) in game.transition(s, a1, a2).iter().enumerate() {
                        matrix[(s, s2)] += pj * p;
                    }
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn n_states(&self) -> usize {
        self.matrix.nrows()
    }

    /// Unique stationary distribution, or an error naming why the chain is
    /// not uniquely ergodic.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.n_states();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        let eig = self.matrix.complex_eigenvalues();
        let unit = eig.iter().filter(|z| (*z - 1.0).norm() < 1e-9).count();
        if unit != 1 {
            return Err(Error::Diagnostics(format!(
                "state chain has {unit} unit eigenvalues: not irreducible on a single class"
            )));
        }
        let on_circle = eig.iter().filter(|z| z.norm() > 1.0 - 1e-9).count();
        if on_circle != 1 {
            return Err(Error::Diagnostics(
                "state chain is periodic: eigenvalues on the unit circle besides 1".into(),
            ));
        }
        // Solve mu (P - I) = 0 with sum(mu) = 1 replacing the last equation.
        let mut a = self.matrix.transpose() - DMatrix::identity(n, n);
        a.row_mut(n - 1).fill(1.0);
        let mut b = nalgebra::DVector::zeros(n);
        b[n - 1] = 1.0;
        let mu = a.lu().solve(&b).ok_or_else(|| {
            Error::Diagnostics("stationary distribution solve is singular".into())
        })?;
        let mut mu: Vec<f64> = mu.iter().map(|&x| if x < 0.0 && x > -1e-12 { 0.0 } else { x }).collect();
        if mu.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Diagnostics("stationary solve produced negative mass".into()));
        }
        let total: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|x| *x /= total);
        Ok(mu)
    }
}

/// Stationary state-action distribution `mu(s) pi(a|s)`, flattened by pair index.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let mu = StateChain::from_mdp(mdp, policy)?.stationary()?;
    let mut d = Vec::with_capacity(mdp.n_pairs());
    for (s, &ms) in mu.iter().enumerate() {
        for a in 0..mdp.n_actions() {
            d.push(ms * policy.prob(s, a));
        }
    }
    Ok(d)
}

/// Stationary state distribution of a game under a policy pair.
pub fn game_state_distribution(game: &MarkovGame, policies: &PolicyPair) -> Result<Vec<f64>> {
    StateChain::from_game(game, policies)?.stationary()
}

/// Stationary distribution over `(s, a1, a2)` triples.
pub fn game_stationary_distribution(game: &MarkovGame, policies: &PolicyPair) -> Result<Vec<f64>> {
    let mu = game_state_distribution(game, policies)?;
    let mut d = Vec::with_capacity(game.n_triples());
    for (s, &ms) in mu.iter().enumerate() {
        for a1 in 0..game.n_actions_p1() {
            for a2 in 0..game.n_actions_p2() {
                d.push(ms * policies.joint(s, a1, a2));
            }
        }
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingPoint {
    pub t: usize,
    pub tv: f64,
}

/// Exact `sup_s d_TV(P^t(s, .), mu)` for `t = 0..=horizon`.
pub fn mixing_profile(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    horizon: usize,
) -> Result<Vec<MixingPoint>> {
    chain_mixing_profile(&StateChain::from_mdp(mdp, policy)?, horizon)
}

pub fn chain_mixing_profile(chain: &StateChain, horizon: usize) -> Result<Vec<MixingPoint>> {
    let mu = chain.stationary()?;
    let n = chain.n_states();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let tv = (0..n)
            .map(|s| 0.5 * (0..n).map(|j| (power[(s, j)] - mu[j]).abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        out.push(MixingPoint { t, tv });
        power = &power * &chain.matrix;
    }
    Ok(out)
}

/// Least-squares fit of `ln tv = ln kappa + t ln rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub kappa: f64,
    pub rho: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

impl GeometricFit {
    /// Smallest `t` with `kappa rho^t <= 1/4`.
    pub fn mixing_time(&self) -> Option<usize> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return None;
        }
        let t = ((0.25 / self.kappa).ln() / self.rho.ln()).ceil();
        Some(t.max(0.0) as usize)
    }
}

/// Fits the geometric envelope on the leading run of profile points whose
/// distance is clearly above rounding noise (> 1e-10). Needs two points.
pub fn fit_geometric(profile: &[MixingPoint]) -> Option<GeometricFit> {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .take_while(|p| p.tv > 1e-10)
        .map(|p| (p.t as f64, p.tv.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (slope, intercept, r2) = crate::diagnostics::least_squares(&pts)?;
    Some(GeometricFit {
        kappa: intercept.exp(),
        rho: slope.exp(),
        r_squared: r2,
        points_used: pts.len(),
    })
}

/// Burn-in length: ten fitted mixing times, or 100 when no fit exists.
pub fn default_burn_in(chain: &StateChain) -> usize {
    chain_mixing_profile(chain, 200)
        .ok()
        .and_then(|p| fit_geometric(&p))
        .and_then(|f| f.mixing_time())
        .map(|t| (10 * t).max(1))
        .unwrap_or(100)
}
