//! Numerical checks of the structural assumptions: the spectrum of
//! `Sigma = E[grad Q grad Q^T]` at initialization, range/kernel geometry,
//! the regularity conditions of the Q-learning variants, Bellman
//! contraction, the linearization gap and convergence-slope fits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{
    argmax, game_state_distribution, game_stationary_distribution, stationary_distribution, MarkovGame, PolicyPair,
    StateChain, TabularMdp, TabularPolicy,
};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::network::{init_params, linearized_q, Activation, Architecture, Linearization, NetworkParams};
use crate::oracles::{bellman_policy, matrix_game_value, row_space_basis, MinimaxOrder};
use crate::rng::{derive_seed, seeded};

/// Explicit kernel bases are only formed up to this parameter count.
pub const MAX_DENSE_PARAMS: usize = 2048;

/// Ordinary least squares of `y` on `x`: `(slope, intercept, R^2)`.
/// `None` with fewer than two points or constant `x`.
pub fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some((slope, intercept, r2))
}

/// Weighted gradient factor of `Sigma` over the finite support with its
/// SVD. `Sigma = F^T F` where row `i` of `F` is `sqrt(w_i) grad Q(x_i; theta^0)`.
#[derive(Clone, Debug)]
pub struct SigmaEstimate {
    /// Feature rows with positive weight, in increasing order.
    pub support: Vec<usize>,
    pub factor: DMatrix<f64>,
    /// Singular values of `factor`, descending. Eigenvalues of `Sigma` are their squares.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Rank cut on the factor singular values.
    pub threshold: f64,
    /// Orthonormal columns spanning the range of `Sigma`.
    pub range_basis: DMatrix<f64>,
}

impl SigmaEstimate {
    pub fn n_params(&self) -> usize {
        self.factor.ncols()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s * s).collect()
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().map_or(0.0, |s| s * s)
    }

    /// Smallest non-zero eigenvalue (`lambda_0`).
    pub fn lambda0(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.singular_values[self.rank - 1].powi(2)
        }
    }

    /// `v^T Sigma v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        (&self.factor * DVector::from_column_slice(v)).norm_squared()
    }

    /// Dense `Sigma` (n x n).
    pub fn matrix(&self) -> DMatrix<f64> {
        self.factor.transpose() * &self.factor
    }

    /// Orthonormal completion of the range basis; only for small `n`.
    pub fn kernel_basis(&self) -> Result<DMatrix<f64>> {
        let n = self.n_params();
        if n > MAX_DENSE_PARAMS {
            return Err(Error::Diagnostics(format!(
                "explicit kernel basis requested for n = {n} > {MAX_DENSE_PARAMS}"
            )));
        }
        let r = self.rank;
        // QR of [V | I]: the first r columns of Q span range(V), the rest complete it.
        let mut stacked = DMatrix::zeros(n, r + n);
        stacked.view_mut((0, 0), (n, r)).copy_from(&self.range_basis);
        stacked.view_mut((0, r), (n, n)).fill_with_identity();
        let q = stacked.qr().q();
        Ok(q.columns(r, n - r).into_owned())
    }
}

/// Exact `Sigma` over the rows with positive weight.
pub fn estimate_sigma(params_at_init: &NetworkParams, features: &FeatureMap, weights: &[f64]) -> Result<SigmaEstimate> {
    if weights.len() != features.n_rows() {
        return Err(Error::Dimension {
            expected: features.n_rows(),
            got: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("weights must be a distribution (sum {total})")));
    }
    let support: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if support.is_empty() {
        return Err(Error::config("empty support"));
    }
    if features.dim() != params_at_init.input_dim() {
        return Err(Error::Dimension {
            expected: params_at_init.input_dim(),
            got: features.dim(),
        });
    }
    let n = params_at_init.n_params();
    let mut factor = DMatrix::zeros(support.len(), n);
    for (r, &i) in support.iter().enumerate() {
        let (_, g) = params_at_init.value_and_grad_unchecked(features.row(i));
        let sw = weights[i].sqrt();
        for (k, gk) in g.into_iter().enumerate() {
            factor[(r, k)] = sw * gk;
        }
    }
    Ok(factorize(support, factor))
}

fn factorize(support: Vec<usize>, factor: DMatrix<f64>) -> SigmaEstimate {
    let (p, n) = factor.shape();
    let (basis, mut s) = row_space_basis(&factor);
    s.sort_by(|a, b| b.total_cmp(a));
    let smax = s.first().copied().unwrap_or(0.0);
    let threshold = p.max(n) as f64 * f64::EPSILON * smax;
    let rank = basis.ncols();
    SigmaEstimate {
        support,
        factor,
        singular_values: s,
        rank,
        threshold,
        range_basis: basis,
    }
}

/// Empirical visit frequencies of feature rows: the Monte-Carlo weights
/// whose `Sigma` is the sample average of outer products.
pub fn empirical_weights(visited_rows: &[usize], n_rows: usize) -> Result<Vec<f64>> {
    if visited_rows.is_empty() {
        return Err(Error::config("no samples"));
    }
    let mut w = vec![0.0; n_rows];
    for &r in visited_rows {
        if r >= n_rows {
            return Err(Error::Dimension { expected: n_rows, got: r + 1 });
        }
        w[r] += 1.0;
    }
    let n = visited_rows.len() as f64;
    w.iter_mut().for_each(|x| *x /= n);
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub m: usize,
    pub sigma_max: f64,
    pub sigma_min_nonzero: f64,
    pub ratio: f64,
    pub rank: usize,
    /// Rank cut expressed on the eigenvalues of `Sigma`.
    pub threshold: f64,
}

impl SpectrumReport {
    pub fn from_estimate(sigma: &SigmaEstimate, m: usize) -> Self {
        let sigma_max = sigma.sigma_max();
        let sigma_min_nonzero = sigma.lambda0();
        Self {
            m,
            sigma_max,
            sigma_min_nonzero,
            ratio: if sigma_min_nonzero > 0.0 { sigma_max / sigma_min_nonzero } else { f64::INFINITY },
            rank: sigma.rank,
            threshold: sigma.threshold * sigma.threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSweepConfig {
    pub widths: Vec<usize>,
    pub trials: usize,
    pub depth: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub m: usize,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub trials: Vec<SpectrumReport>,
}

/// Seed of trial `k` at width `m` in a spectrum sweep.
pub fn sweep_trial_seed(seed: u64, m: usize, k: usize) -> u64 {
    derive_seed(derive_seed(seed, m as u64), k as u64)
}

/// One spectrum trial: fresh initialization at width `m`.
pub fn spectrum_trial(config: &SpectrumSweepConfig, m: usize, k: usize, features: &FeatureMap, weights: &[f64]) -> Result<SpectrumReport> {
    let arch = Architecture::new(config.depth, m, features.dim(), config.activation);
    let (params, _) = init_params(arch, sweep_trial_seed(config.seed, m, k))?;
    Ok(SpectrumReport::from_estimate(&estimate_sigma(&params, features, weights)?, m))
}

pub fn summarize_trials(m: usize, trials: Vec<SpectrumReport>) -> SpectrumSummary {
    let n = trials.len() as f64;
    let mean = trials.iter().map(|t| t.ratio).sum::<f64>() / n;
    let var = if trials.len() > 1 {
        trials.iter().map(|t| (t.ratio - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    SpectrumSummary {
        m,
        mean_ratio: mean,
        std_ratio: var.sqrt(),
        trials,
    }
}

/// Mean and spread of `sigma_max / sigma_min_nonzero` per width over
/// independent initializations.
pub fn spectrum_sweep(config: &SpectrumSweepConfig, features: &FeatureMap, weights: &[f64]) -> Result<Vec<SpectrumSummary>> {
    if config.widths.is_empty() || config.trials == 0 {
        return Err(Error::config("spectrum sweep needs widths and trials >= 1"));
    }
    if config.widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("widths must be strictly ascending"));
    }
    config
        .widths
        .iter()
        .map(|&m| {
            let trials = (0..config.trials)
                .map(|k| spectrum_trial(config, m, k, features, weights))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize_trials(m, trials))
        })
        .collect()
}

/// `max_x sup_{v in K, |v| = 1} |<grad Q(x; theta^0), v>|` over the given rows,
/// i.e. the largest kernel component `|P_K g_x|`. This bounds the inner
/// product with every kernel basis vector.
pub fn kernel_orthogonality_check(sigma: &SigmaEstimate, params_at_init: &NetworkParams, features: &FeatureMap, support: &[usize]) -> Result<f64> {
    if sigma.rank == sigma.n_params() {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for &i in support {
        if i >= features.n_rows() {
            return Err(Error::Dimension { expected: features.n_rows(), got: i + 1 });
        }
        let (_, g) = params_at_init.value_and_grad(features.row(i))?;
        let g = DVector::from_vec(g);
        let coeff = sigma.range_basis.tr_mul(&g);
        let residual = &g - &sigma.range_basis * coeff;
        worst = worst.max(residual.norm());
    }
    Ok(worst)
}

/// Splits `theta - theta_ref` into its range and kernel components.
pub fn subspace_decompose(sigma: &SigmaEstimate, theta: &[f64], theta_ref: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sigma.n_params();
    if theta.len() != n || theta_ref.len() != n {
        return Err(Error::Dimension { expected: n, got: theta.len().min(theta_ref.len()) });
    }
    let delta = DVector::from_iterator(n, theta.iter().zip(theta_ref).map(|(a, b)| a - b));
    let par = &sigma.range_basis * sigma.range_basis.tr_mul(&delta);
    let perp = &delta - &par;
    Ok((par.iter().copied().collect(), perp.iter().copied().collect()))
}

fn jacobian_times(lin: &Linearization, v: &[f64]) -> Vec<f64> {
    (&lin.jacobian * DVector::from_column_slice(v)).iter().copied().collect()
}

/// Factor of `Sigma*(theta)` for Q-learning: row `s` is
/// `sqrt(mu(s)) grad Q(s, a*_s; theta^0)` with
/// `a*_s = argmax_a |<grad Q(s, a; theta^0), theta>|` (ties: smallest `a`).
pub fn sigma_star_factor_q(lin: &Linearization, n_actions: usize, state_weights: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let scores: Vec<f64> = jacobian_times(lin, theta).iter().map(|x| x.abs()).collect();
    let n = lin.jacobian.ncols();
    let mut f = DMatrix::zeros(state_weights.len(), n);
    for (s, &mu) in state_weights.iter().enumerate() {
        let a = argmax(&scores[s * n_actions..(s + 1) * n_actions]);
        let row = lin.jacobian.row(s * n_actions + a) * mu.sqrt();
        f.set_row(s, &row);
    }
    f
}

/// Factor of `Sigma*(theta_1, theta_2)` for minimax Q-learning.
///
/// At each state the selector `(a1_theta, a2_theta)` solves the pure
/// matrix game `[<grad Q(s, a1, a2; theta^0), theta>]` in `order`; the two
/// cross pairs `(a1_{theta_1}, a2_{theta_2})` and `(a1_{theta_2}, a2_{theta_1})`
/// compete on `|<grad Q(s, pair; theta^0), theta_1 - theta_2>|`, first on ties.
pub fn sigma_star_factor_minimax(
    lin: &Linearization,
    n_actions: (usize, usize),
    state_weights: &[f64],
    theta_1: &[f64],
    theta_2: &[f64],
    order: MinimaxOrder,
) -> DMatrix<f64> {
    let (n1, n2) = n_actions;
    let k = n1 * n2;
    let g1 = jacobian_times(lin, theta_1);
    let g2 = jacobian_times(lin, theta_2);
    let n = lin.jacobian.ncols();
    let mut f = DMatrix::zeros(state_weights.len(), n);
    for (s, &mu) in state_weights.iter().enumerate() {
        let (_, a1_1, a2_1) = matrix_game_value(&g1[s * k..(s + 1) * k], n1, n2, order);
        let (_, a1_2, a2_2) = matrix_game_value(&g2[s * k..(s + 1) * k], n1, n2, order);
        let c1 = s * k + a1_1 * n2 + a2_2;
        let c2 = s * k + a1_2 * n2 + a2_1;
        let score = |row: usize| (g1[row] - g2[row]).abs();
        let pick = if score(c2) > score(c1) { c2 } else { c1 };
        f.set_row(s, &(lin.jacobian.row(pick) * mu.sqrt()));
    }
    f
}

/// Restricted spectra of `(1-nu)^2 Sigma - gamma^2 Sigma*` for a set of
/// probe points, each projected onto the joint range of the two matrices.
#[derive(Clone, Debug)]
pub struct RegularityProbe {
    pub gamma: f64,
    /// Per probe point: `(B^T Sigma B, B^T Sigma* B)`.
    pub blocks: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub nu: f64,
    pub min_eigenvalue: f64,
    pub largest_feasible_nu: Option<f64>,
}

impl RegularityProbe {
    fn from_factors(gamma: f64, sigma_factor: &DMatrix<f64>, star_factors: Vec<DMatrix<f64>>) -> Self {
        let blocks = star_factors
            .into_iter()
            .map(|star| {
                let mut stacked = DMatrix::zeros(sigma_factor.nrows() + star.nrows(), sigma_factor.ncols());
                stacked.rows_mut(0, sigma_factor.nrows()).copy_from(sigma_factor);
                stacked.rows_mut(sigma_factor.nrows(), star.nrows()).copy_from(&star);
                let (basis, _) = row_space_basis(&stacked);
                let a = sigma_factor * &basis;
                let c = &star * &basis;
                (a.tr_mul(&a), c.tr_mul(&c))
            })
            .collect();
        Self { gamma, blocks }
    }

    /// Minimum over probe points of the restricted minimum eigenvalue.
    pub fn min_eigenvalue(&self, nu: f64) -> f64 {
        let a = (1.0 - nu).powi(2);
        let c = self.gamma * self.gamma;
        self.blocks
            .iter()
            .map(|(s, st)| {
                if s.nrows() == 0 {
                    return f64::INFINITY;
                }
                let m = s * a - st * c;
                SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `nu` on the grid `0.01, ..., 0.99` with a probe value `>= -1e-8`.
    pub fn largest_feasible_nu(&self) -> Option<f64> {
        (1..=99).rev().map(|k| k as f64 / 100.0).find(|&nu| self.min_eigenvalue(nu) >= -1e-8)
    }

    pub fn summary(&self, nu: f64) -> ProbeSummary {
        ProbeSummary {
            nu,
            min_eigenvalue: self.min_eigenvalue(nu),
            largest_feasible_nu: self.largest_feasible_nu(),
        }
    }
}

fn weighted_factor(lin: &Linearization, weights: &[f64]) -> DMatrix<f64> {
    let mut f = lin.jacobian.clone();
    for (i, &w) in weights.iter().enumerate() {
        f.row_mut(i).scale_mut(w.sqrt());
    }
    f
}

/// Probe of the Q-learning regularity condition at the given points.
pub fn regularity_probe_q(
    params_at_init: &NetworkParams,
    features: &FeatureMap,
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    theta_samples: &[Vec<f64>],
) -> Result<RegularityProbe> {
    if features.n_rows() != mdp.n_pairs() {
        return Err(Error::Dimension { expected: mdp.n_pairs(), got: features.n_rows() });
    }
    let d = stationary_distribution(mdp, policy)?;
    let mu = StateChain::from_mdp(mdp, policy)?.stationary()?;
    let lin = Linearization::new(params_at_init, features)?;
    let sigma = weighted_factor(&lin, &d);
    let stars = theta_samples
        .iter()
        .map(|th| {
            if th.len() != params_at_init.n_params() {
                return Err(Error::Dimension { expected: params_at_init.n_params(), got: th.len() });
            }
            Ok(sigma_star_factor_q(&lin, mdp.n_actions(), &mu, th))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularityProbe::from_factors(mdp.gamma(), &sigma, stars))
}

/// Probe of the minimax regularity condition at the given parameter pairs.
pub fn regularity_probe_minimax(
    params_at_init: &NetworkParams,
    features: &FeatureMap,
    game: &MarkovGame,
    policies: &PolicyPair,
    theta_pairs: &[(Vec<f64>, Vec<f64>)],
    order: MinimaxOrder,
) -> Result<RegularityProbe> {
    if features.n_rows() != game.n_triples() {
        return Err(Error::Dimension { expected: game.n_triples(), got: features.n_rows() });
    }
    let d = game_stationary_distribution(game, policies)?;
    let mu = game_state_distribution(game, policies)?;
    let lin = Linearization::new(params_at_init, features)?;
    let sigma = weighted_factor(&lin, &d);
    let n = params_at_init.n_params();
    let stars = theta_pairs
        .iter()
        .map(|(a, b)| {
            if a.len() != n || b.len() != n {
                return Err(Error::Dimension { expected: n, got: a.len().min(b.len()) });
            }
            Ok(sigma_star_factor_minimax(&lin, (game.n_actions_p1(), game.n_actions_p2()), &mu, a, b, order))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularityProbe::from_factors(game.gamma(), &sigma, stars))
}

fn mu_norm(v: &[f64], d: &[f64]) -> f64 {
    v.iter().zip(d).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// Largest observed `|T Q1 - T Q2|_mu / |Q1 - Q2|_mu` over random bounded
/// table pairs (0 when the denominator vanishes).
pub fn contraction_check(mdp: &TabularMdp, policy: &TabularPolicy, n_trials: usize, seed: u64) -> Result<f64> {
    let d = stationary_distribution(mdp, policy)?;
    let bound = mdp.r_max() / (1.0 - mdp.gamma());
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_trials {
        let q1: Vec<f64> = (0..mdp.n_pairs()).map(|_| rng.random_range(-bound..=bound)).collect();
        let q2: Vec<f64> = (0..mdp.n_pairs()).map(|_| rng.random_range(-bound..=bound)).collect();
        let t1 = bellman_policy(mdp, policy, &q1)?;
        let t2 = bellman_policy(mdp, policy, &q2)?;
        let num: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a - b).collect();
        let den: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a - b).collect();
        let den = mu_norm(&den, &d);
        if den > 0.0 {
            worst = worst.max(mu_norm(&num, &d) / den);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapScanConfig {
    pub depth: usize,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub omega: f64,
    pub n_theta: usize,
    pub n_x: usize,
    pub seed: u64,
    #[serde(default)]
    pub activation: Activation,
    /// Power iterations used to find the top-curvature direction per input.
    #[serde(default = "default_power_iters")]
    pub power_iters: usize,
}

fn default_power_iters() -> usize {
    20
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub m: usize,
    /// Largest `|Q - Q_hat|` over every probe point.
    pub max_gap: f64,
    /// Largest gap over uniformly random sphere points only.
    pub random_max: f64,
    /// Largest gap along the top-curvature directions.
    pub curvature_max: f64,
}

fn random_unit(n: usize, rng: &mut crate::rng::SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

fn shifted(base: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + t * d).collect()
}

/// Dominant eigenvector of the Hessian of `Q(x; .)` at `params`, by power
/// iteration on central-difference Hessian-vector products.
fn top_curvature_direction(params: &NetworkParams, x: &[f64], iters: usize, rng: &mut crate::rng::SeededRng) -> Result<Vec<f64>> {
    let n = params.n_params();
    let eps = 1e-4;
    let mut v = random_unit(n, rng);
    for _ in 0..iters {
        let gp = params.with_theta(shifted(params.theta(), &v, eps))?.grad_theta(x)?;
        let gm = params.with_theta(shifted(params.theta(), &v, -eps))?.grad_theta(x)?;
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let nh = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nh > 0.0) {
            break;
        }
        v = hv.into_iter().map(|x| x / nh).collect();
    }
    Ok(v)
}

fn gap_at(params: &NetworkParams, theta: &[f64], x: &[f64]) -> Result<f64> {
    let q = params.with_theta(theta.to_vec())?.q_value(x)?;
    Ok((q - linearized_q(params, theta, x)?).abs())
}

/// Per-width estimate of `sup |Q(x; theta) - Q_hat(x; theta)|` over the sphere
/// `|theta - theta^0| = omega` and unit inputs. The sup is approximated by
/// random sphere points plus `theta^0 +- omega v` along the dominant
/// Hessian direction `v` of each input.
pub fn linearization_gap_scan(config: &GapScanConfig) -> Result<Vec<GapReport>> {
    if config.widths.is_empty() || config.n_theta == 0 || config.n_x == 0 {
        return Err(Error::config("gap scan needs widths, n_theta >= 1 and n_x >= 1"));
    }
    if config.widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("widths must be strictly ascending"));
    }
    if !(config.omega > 0.0) {
        return Err(Error::config("omega must be positive"));
    }
    config.widths.iter().map(|&m| gap_for_width(config, m)).collect()
}

pub fn gap_for_width(config: &GapScanConfig, m: usize) -> Result<GapReport> {
    let arch = Architecture::new(config.depth, m, config.input_dim, config.activation);
    let (params, _) = init_params(arch, derive_seed(config.seed, m as u64))?;
    let mut rng = seeded(derive_seed(config.seed ^ 0x5eed, m as u64));
    let n = params.n_params();
    let xs: Vec<Vec<f64>> = (0..config.n_x).map(|_| random_unit(config.input_dim, &mut rng)).collect();
    let mut random_max: f64 = 0.0;
    for _ in 0..config.n_theta {
        let theta = shifted(params.theta(), &random_unit(n, &mut rng), config.omega);
        for x in &xs {
            random_max = random_max.max(gap_at(&params, &theta, x)?);
        }
    }
    let mut curvature_max: f64 = 0.0;
    if config.power_iters > 0 {
        for x in &xs {
            let v = top_curvature_direction(&params, x, config.power_iters, &mut rng)?;
            for sign in [1.0, -1.0] {
                let theta = shifted(params.theta(), &v, sign * config.omega);
                curvature_max = curvature_max.max(gap_at(&params, &theta, x)?);
            }
        }
    }
    Ok(GapReport {
        m,
        max_gap: random_max.max(curvature_max),
        random_max,
        curvature_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Points dropped for a non-positive error.
    pub excluded: usize,
}

/// OLS of `ln error` on `ln T`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, e)| *e > 0.0 && *t > 0.0 && e.is_finite())
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    let excluded = points.len() - kept.len();
    if kept.len() < 3 {
        return Err(Error::Diagnostics(format!(
            "rate fit needs 3 positive points, {} remain after dropping {excluded}",
            kept.len()
        )));
    }
    let (slope, intercept, r_squared) =
        least_squares(&kept).ok_or_else(|| Error::Diagnostics("rate fit needs distinct T values".into()))?;
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        excluded,
    })
}
