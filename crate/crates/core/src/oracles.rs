//! Exact tabular ground truth: `Q^pi`, `Q*`, pure-strategy minimax values and
//! the projected fixed point of the linearized class.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{argmax, argmin, stationary_distribution, MarkovGame, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::network::{Linearization, NetworkParams};

/// `q[s][a]`, serialized as nested JSON arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable {
    pub q: Vec<Vec<f64>>,
}

impl QTable {
    /// Entries in pair-index order.
    pub fn flat(&self) -> Vec<f64> {
        self.q.iter().flatten().copied().collect()
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.flat()
            .iter()
            .zip(other.flat())
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

/// `q[s][a1][a2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GameQTable {
    pub q: Vec<Vec<Vec<f64>>>,
}

impl GameQTable {
    /// Entries in triple-index order.
    pub fn flat(&self) -> Vec<f64> {
        self.q.iter().flatten().flatten().copied().collect()
    }
}

/// Order of the pure-strategy backup of a next-state Q matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinimaxOrder {
    /// `max_{a1} min_{a2}`
    #[default]
    MaxMin,
    /// `min_{a1} max_{a2}`
    MinMax,
}

/// Pure-strategy value of the `n1 x n2` row-major matrix `q` and the action
/// pair attaining it. Ties go to the smallest indices.
pub fn matrix_game_value(q: &[f64], n1: usize, n2: usize, order: MinimaxOrder) -> (f64, usize, usize) {
    debug_assert_eq!(q.len(), n1 * n2);
    match order {
        MinimaxOrder::MaxMin => {
            let inner: Vec<(f64, usize)> = (0..n1)
                .map(|a1| {
                    let row = &q[a1 * n2..(a1 + 1) * n2];
                    let a2 = argmin(row);
                    (row[a2], a2)
                })
                .collect();
            let vals: Vec<f64> = inner.iter().map(|v| v.0).collect();
            let a1 = argmax(&vals);
            (inner[a1].0, a1, inner[a1].1)
        }
        MinimaxOrder::MinMax => {
            let inner: Vec<(f64, usize)> = (0..n1)
                .map(|a1| {
                    let row = &q[a1 * n2..(a1 + 1) * n2];
                    let a2 = argmax(row);
                    (row[a2], a2)
                })
                .collect();
            let vals: Vec<f64> = inner.iter().map(|v| v.0).collect();
            let a1 = argmin(&vals);
            (inner[a1].0, a1, inner[a1].1)
        }
    }
}

/// Pair-to-pair transition matrix `P^pi[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')`.
pub fn pair_transition_matrix(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::config("policy shape does not match MDP"));
    }
    let na = mdp.n_actions();
    let p = mdp.n_pairs();
    let mut m = DMatrix::zeros(p, p);
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let i = mdp.pair_index(s, a);
            for (s2, &pr) in mdp.transition(s, a).iter().enumerate() {
                if pr == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[(i, s2 * na + a2)] += pr * policy.prob(s2, a2);
                }
            }
        }
    }
    Ok(m)
}

fn reward_vector(mdp: &TabularMdp) -> DVector<f64> {
    DVector::from_iterator(
        mdp.n_pairs(),
        (0..mdp.n_states()).flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a))).map(|(s, a)| mdp.reward(s, a)),
    )
}

fn to_table(flat: &[f64], n_actions: usize) -> QTable {
    QTable {
        q: flat.chunks(n_actions).map(<[f64]>::to_vec).collect(),
    }
}

/// `T^pi q = r + gamma P^pi q` on flattened tables.
pub fn bellman_policy(mdp: &TabularMdp, policy: &TabularPolicy, q: &[f64]) -> Result<Vec<f64>> {
    let p = pair_transition_matrix(mdp, policy)?;
    let qv = DVector::from_column_slice(q);
    Ok((reward_vector(mdp) + mdp.gamma() * p * qv).iter().copied().collect())
}

/// `(T q)(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) max_a' q(s',a')`.
pub fn bellman_optimality(mdp: &TabularMdp, q: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    let v: Vec<f64> = q.chunks(na).map(|row| row[argmax(row)]).collect();
    let mut out = Vec::with_capacity(q.len());
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let ev: f64 = mdp.transition(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            out.push(mdp.reward(s, a) + mdp.gamma() * ev);
        }
    }
    out
}

/// Minimax backup with the chosen pure-strategy order.
pub fn bellman_minimax(game: &MarkovGame, q: &[f64], order: MinimaxOrder) -> Vec<f64> {
    let (n1, n2) = (game.n_actions_p1(), game.n_actions_p2());
    let v: Vec<f64> = q.chunks(n1 * n2).map(|m| matrix_game_value(m, n1, n2, order).0).collect();
    let mut out = Vec::with_capacity(q.len());
    for s in 0..game.n_states() {
        for a1 in 0..n1 {
            for a2 in 0..n2 {
                let ev: f64 = game.transition(s, a1, a2).iter().zip(&v).map(|(p, v)| p * v).sum();
                out.push(game.reward(s, a1, a2) + game.gamma() * ev);
            }
        }
    }
    out
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Solves `(I - gamma P^pi) q = r` directly.
pub fn exact_q_pi(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<QTable> {
    let p = pair_transition_matrix(mdp, policy)?;
    let n = p.nrows();
    let a = DMatrix::identity(n, n) - mdp.gamma() * &p;
    let r = reward_vector(mdp);
    let q = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Numeric("policy evaluation system is singular".into()))?;
    let q: Vec<f64> = q.iter().copied().collect();
    let residual = sup_diff(&q, &bellman_policy(mdp, policy, &q)?);
    if !(residual <= 1e-9) {
        return Err(Error::Numeric(format!("policy evaluation residual {residual:e} exceeds 1e-9")));
    }
    Ok(to_table(&q, mdp.n_actions()))
}

/// Runs `backup` from zero until successive iterates differ by at most
/// `tol (1 - gamma) / gamma` in sup norm, which bounds the error by `tol`.
fn value_iterate(gamma: f64, tol: f64, len: usize, backup: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::config("value iteration tolerance must be positive"));
    }
    let stop = tol * (1.0 - gamma) / gamma;
    let mut q = vec![0.0; len];
    loop {
        let next = backup(&q);
        let diff = sup_diff(&next, &q);
        q = next;
        if diff <= stop {
            return Ok(q);
        }
    }
}

pub fn exact_q_star(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    let q = value_iterate(mdp.gamma(), tol, mdp.n_pairs(), |q| bellman_optimality(mdp, q))?;
    Ok(to_table(&q, mdp.n_actions()))
}

pub fn exact_minimax_q(game: &MarkovGame, tol: f64, order: MinimaxOrder) -> Result<GameQTable> {
    let q = value_iterate(game.gamma(), tol, game.n_triples(), |q| bellman_minimax(game, q, order))?;
    let (n1, n2) = (game.n_actions_p1(), game.n_actions_p2());
    Ok(GameQTable {
        q: q.chunks(n1 * n2).map(|m| m.chunks(n2).map(<[f64]>::to_vec).collect()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    #[serde(skip)]
    pub theta: Vec<f64>,
    /// `Q_hat(x; theta*)` on every feature row.
    pub values: Vec<f64>,
    pub delta_norm: f64,
    pub omega: f64,
    pub inside_ball: bool,
    /// `|| Q_hat - Pi T^pi Q_hat ||_D`
    pub residual: f64,
    pub rank: usize,
}

/// Orthonormal basis (columns) of the row space of `j`, from its SVD.
pub(crate) fn row_space_basis(j: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (p, n) = j.shape();
    let svd = j.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let thresh = p.max(n) as f64 * f64::EPSILON * smax;
    let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > thresh).collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    (basis, s)
}

fn weighted_norm(v: &DVector<f64>, w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// Minimum-norm solution `delta` of
/// `J^T D (J delta + q0 - r - gamma P^pi (J delta + q0)) = 0`, computed in
/// coordinates of the row space of `D^{1/2} J`, and `theta* = theta^0 + delta`.
pub fn projected_fixed_point(
    params_at_init: &NetworkParams,
    features: &FeatureMap,
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    omega: f64,
) -> Result<FixedPointReport> {
    if features.n_rows() != mdp.n_pairs() {
        return Err(Error::Dimension {
            expected: mdp.n_pairs(),
            got: features.n_rows(),
        });
    }
    let d = stationary_distribution(mdp, policy)?;
    let lin = Linearization::new(params_at_init, features)?;
    let p = pair_transition_matrix(mdp, policy)?;
    let gamma = mdp.gamma();

    let mut jw = lin.jacobian.clone();
    for (i, &w) in d.iter().enumerate() {
        jw.row_mut(i).scale_mut(w.sqrt());
    }
    let (basis, _) = row_space_basis(&jw);
    let k = basis.ncols();
    if k == 0 {
        return Err(Error::Numeric("linearized class is degenerate: rank 0".into()));
    }
    let a = &lin.jacobian * &basis; // p x k
    let q0 = DVector::from_column_slice(&lin.q0);
    let r = reward_vector(mdp);
    let dmat = DMatrix::from_diagonal(&DVector::from_column_slice(&d));
    let ad = a.transpose() * &dmat;
    let n_pairs = p.nrows();
    let lhs = &ad * (DMatrix::identity(n_pairs, n_pairs) - gamma * &p) * &a;
    let rhs = &ad * (&r + gamma * &p * &q0 - &q0);
    let c = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric(format!("fixed-point normal equations singular (rank {k})")))?;
    let delta = &basis * &c;
    let values = &q0 + &a * &c;

    // Residual of the projected operator: Pi T Q_hat - Q_hat.
    let target = &r + gamma * &p * &values;
    let gram = &ad * &a;
    let c_t = gram
        .lu()
        .solve(&(&ad * (&target - &q0)))
        .ok_or_else(|| Error::Numeric(format!("projection Gram matrix singular (rank {k})")))?;
    let projected = &q0 + &a * c_t;
    let residual = weighted_norm(&(projected - &values), &d);

    let delta_norm = delta.norm();
    let theta = lin.theta0.iter().zip(delta.iter()).map(|(t, dl)| t + dl).collect();
    Ok(FixedPointReport {
        theta,
        values: values.iter().copied().collect(),
        delta_norm,
        omega,
        inside_ball: delta_norm <= omega,
        residual,
        rank: k,
    })
}
