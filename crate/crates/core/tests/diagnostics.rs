use nalgebra::{DMatrix, DVector};
use ntd_core::diagnostics::*;
use ntd_core::env::{
    game_state_distribution, random_game, random_mdp, sample_trajectory, stationary_distribution, PolicyPair, StateChain, TabularMdp,
    TabularPolicy,
};
use ntd_core::features::{one_hot_features, random_unit_features, FeatureKind, FeatureMap};
use ntd_core::network::{init_params, Activation, Architecture, Linearization, NetworkParams};
use ntd_core::oracles::{matrix_game_value, MinimaxOrder};
use ntd_core::rng::seeded;
use rand::Rng;

fn outer_sum(rows: &[(f64, Vec<f64>)]) -> DMatrix<f64> {
    let n = rows[0].1.len();
    let mut m = DMatrix::zeros(n, n);
    for (w, g) in rows {
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * g[i] * g[j];
            }
        }
    }
    m
}

fn small_net(d: usize, seed: u64) -> NetworkParams {
    init_params(Architecture::new(2, 5, d, Activation::Elu), seed).unwrap().0
}

#[test]
fn single_pair_sigma_is_an_outer_product() {
    let p = small_net(2, 1);
    let f = FeatureMap::from_rows(vec![vec![0.6, 0.8]], FeatureKind::Custom).unwrap();
    let s = estimate_sigma(&p, &f, &[1.0]).unwrap();
    let g = p.grad_theta(&[0.6, 0.8]).unwrap();
    let gn2: f64 = g.iter().map(|x| x * x).sum();
    assert_eq!(s.rank, 1);
    assert!((s.lambda0() - gn2).abs() < 1e-12 * gn2);
    let diff = s.matrix() - outer_sum(&[(1.0, g.clone())]);
    assert!(diff.amax() < 1e-12);

    // Every vector orthogonal to g has zero inner product with g.
    let mut rng = seeded(1);
    let kernel = s.kernel_basis().unwrap();
    let gv = DVector::from_vec(g);
    for k in 0..kernel.ncols() {
        assert!(kernel.column(k).dot(&gv).abs() < 1e-8);
    }
    let v: Vec<f64> = (0..gv.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (par, perp) = subspace_decompose(&s, &v, &vec![0.0; v.len()]).unwrap();
    assert!(DVector::from_vec(perp).dot(&gv).abs() < 1e-10);
    assert!(par.iter().all(|x| x.is_finite()));
}

#[test]
fn orthogonal_gradients_split_the_spectrum() {
    // With L = 1 and one-hot inputs, gradients of distinct rows live on disjoint columns.
    let (p, _) = init_params(Architecture::new(1, 6, 2, Activation::Sigmoid), 2).unwrap();
    let f = one_hot_features(1, 2).unwrap();
    let s = estimate_sigma(&p, &f, &[0.5, 0.5]).unwrap();
    let n = |x: &[f64]| p.grad_theta(x).unwrap().iter().map(|g| g * g).sum::<f64>();
    let mut expected = [n(&[1.0, 0.0]) / 2.0, n(&[0.0, 1.0]) / 2.0];
    expected.sort_by(|a, b| b.total_cmp(a));
    let ev = s.eigenvalues();
    assert!((ev[0] - expected[0]).abs() < 1e-12 && (ev[1] - expected[1]).abs() < 1e-12);
}

#[test]
fn factored_sigma_matches_brute_force() {
    let mdp = random_mdp(3, 2, 0.9, 1.0, 4).unwrap();
    let pi = TabularPolicy::uniform(3, 2).unwrap();
    let f = random_unit_features(6, 3, 7, 0.2).unwrap();
    let p = small_net(3, 8);
    let d = stationary_distribution(&mdp, &pi).unwrap();
    let s = estimate_sigma(&p, &f, &d).unwrap();
    let rows: Vec<(f64, Vec<f64>)> = (0..6).map(|i| (d[i], p.grad_theta(f.row(i)).unwrap())).collect();
    let brute = outer_sum(&rows);
    let dense = s.matrix();
    assert!((&dense - &brute).amax() <= 1e-10);
    assert!((&dense - dense.transpose()).amax() <= 1e-10);
    let eig = nalgebra::SymmetricEigen::new(brute).eigenvalues;
    assert!(eig.iter().all(|&e| e >= -1e-10));

    // Range and kernel bases together are orthonormal and span R^n.
    let n = s.n_params();
    let kernel = s.kernel_basis().unwrap();
    let mut all = DMatrix::zeros(n, n);
    all.view_mut((0, 0), (n, s.rank)).copy_from(&s.range_basis);
    all.view_mut((0, s.rank), (n, n - s.rank)).copy_from(&kernel);
    assert!((all.transpose() * &all - DMatrix::identity(n, n)).amax() <= 1e-10);

    // Restricted to the range, Sigma is bounded below by lambda0.
    let mut rng = seeded(3);
    for _ in 0..100 {
        let c = DVector::from_iterator(s.rank, (0..s.rank).map(|_| rng.random_range(-1.0..1.0)));
        let v = &s.range_basis * c;
        let vv: Vec<f64> = v.iter().copied().collect();
        assert!(s.quad_form(&vv) >= (s.lambda0() - 1e-8) * v.norm_squared());
    }
}

#[test]
fn subspace_decomposition_is_pythagorean() {
    let f = random_unit_features(3, 3, 1, 0.2).unwrap();
    let p = small_net(3, 2);
    let s = estimate_sigma(&p, &f, &[0.2, 0.3, 0.5]).unwrap();
    let mut rng = seeded(9);
    for _ in 0..20 {
        let theta: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (par, perp) = subspace_decompose(&s, &theta, p.theta()).unwrap();
        let dot: f64 = par.iter().zip(&perp).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-10);
        let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let full: Vec<f64> = theta.iter().zip(p.theta()).map(|(a, b)| a - b).collect();
        assert!((n2(&par) + n2(&perp) - n2(&full)).abs() < 1e-9);
        for i in 0..full.len() {
            assert!((par[i] + perp[i] - full[i]).abs() < 1e-10);
        }
    }
    let (par, perp) = subspace_decompose(&s, p.theta(), p.theta()).unwrap();
    assert!(par.iter().chain(&perp).all(|&x| x == 0.0));
    // A range vector has no kernel part.
    let v: Vec<f64> = p.theta().iter().zip(s.range_basis.column(0).iter()).map(|(a, b)| a + 3.0 * b).collect();
    let (_, perp) = subspace_decompose(&s, &v, p.theta()).unwrap();
    assert!(perp.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-10);
}

#[test]
fn kernel_orthogonality_on_duplicated_rows() {
    let base = random_unit_features(3, 4, 2, 0.2).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| base.row(i % 3).to_vec()).collect();
    let f = FeatureMap::from_rows(rows, FeatureKind::Custom).unwrap();
    let p = small_net(4, 5);
    let w = vec![1.0 / 6.0; 6];
    let s = estimate_sigma(&p, &f, &w).unwrap();
    assert_eq!(s.rank, 3);
    let support: Vec<usize> = (0..6).collect();
    let v = kernel_orthogonality_check(&s, &p, &f, &support).unwrap();
    assert!(v <= 1e-6 * s.sigma_max().sqrt(), "violation {v}");
    // Against the explicit kernel basis as a second route.
    let kernel = s.kernel_basis().unwrap();
    for i in 0..6 {
        let g = DVector::from_vec(p.grad_theta(f.row(i)).unwrap());
        for k in 0..kernel.ncols() {
            assert!(kernel.column(k).dot(&g).abs() <= v + 1e-12);
        }
    }
}

#[test]
fn full_rank_kernel_check_is_vacuous() {
    let (p, _) = init_params(Architecture::new(1, 1, 2, Activation::Elu), 0).unwrap();
    let f = random_unit_features(2, 2, 0, 0.3).unwrap();
    let s = estimate_sigma(&p, &f, &[0.5, 0.5]).unwrap();
    assert_eq!(s.rank, 2);
    assert_eq!(kernel_orthogonality_check(&s, &p, &f, &[0, 1]).unwrap(), 0.0);
}

#[test]
fn monte_carlo_sigma_converges() {
    let mdp = random_mdp(3, 2, 0.9, 1.0, 5).unwrap();
    let pi = TabularPolicy::uniform(3, 2).unwrap();
    let f = one_hot_features(3, 2).unwrap();
    let p = small_net(6, 3);
    let d = stationary_distribution(&mdp, &pi).unwrap();
    let exact = estimate_sigma(&p, &f, &d).unwrap().matrix();
    let err = |n: usize| {
        let traj = sample_trajectory(&mdp, &pi, n, 17, 50).unwrap();
        let visited: Vec<usize> = traj.steps.iter().map(|t| t.s * 2 + t.a).collect();
        let w = empirical_weights(&visited, 6).unwrap();
        let mc = estimate_sigma(&p, &f, &w).unwrap().matrix();
        (mc - &exact).norm()
    };
    assert!(err(100_000) < err(1_000));
}

#[test]
fn spectrum_sweep_is_deterministic() {
    let f = one_hot_features(3, 2).unwrap();
    let w = vec![1.0 / 6.0; 6];
    let cfg = SpectrumSweepConfig { widths: vec![8], trials: 1, depth: 1, activation: Activation::Elu, seed: 4 };
    let a = spectrum_sweep(&cfg, &f, &w).unwrap();
    assert_eq!(a.len(), 1);
    assert!(a[0].mean_ratio >= 1.0);
    assert_eq!(a, spectrum_sweep(&cfg, &f, &w).unwrap());
}

#[test]
fn contraction_examples() {
    let chain = TabularMdp::symmetric_chain(0.9, [0.0, 1.0], 0.9).unwrap();
    let pi = TabularPolicy::uniform(2, 1).unwrap();
    assert!(contraction_check(&chain, &pi, 100, 1).unwrap() <= 0.9 + 1e-10);
    let tiny = chain.with_gamma(1e-300).unwrap();
    assert!(contraction_check(&tiny, &pi, 10, 1).unwrap() < 1e-200);
    let mdp = random_mdp(4, 3, 0.7, 1.0, 2).unwrap();
    let pi = TabularPolicy::uniform(4, 3).unwrap();
    assert!(contraction_check(&mdp, &pi, 100, 2).unwrap() <= 0.7 + 1e-10);
}

#[test]
fn gap_scan_examples() {
    let cfg = GapScanConfig {
        depth: 2,
        input_dim: 3,
        widths: vec![8, 16],
        omega: 0.5,
        n_theta: 3,
        n_x: 2,
        seed: 2,
        activation: Activation::Gelu,
        power_iters: 5,
    };
    let a = linearization_gap_scan(&cfg).unwrap();
    assert_eq!(a, linearization_gap_scan(&cfg).unwrap());
    assert!(a.iter().all(|r| r.max_gap > 0.0 && r.max_gap >= r.random_max));
    let (p, _) = init_params(Architecture::new(2, 8, 3, Activation::Gelu), 0).unwrap();
    let x = [0.0, 0.6, 0.8];
    let q = p.q_value(&x).unwrap();
    assert_eq!(ntd_core::network::linearized_q(&p, p.theta(), &x).unwrap() - q, 0.0);
}

/// Brute-force Sigma* for Q-learning: enumerate the maximizing action per
/// state by direct gradient inner products, sum outer products.
fn brute_sigma_star_q(p: &NetworkParams, f: &FeatureMap, na: usize, mu: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let mut rows = Vec::new();
    for (s, &m) in mu.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..na {
            let g = p.grad_theta(f.row(s * na + a)).unwrap();
            let score: f64 = g.iter().zip(theta).map(|(x, y)| x * y).sum::<f64>().abs();
            if score > best.0 {
                best = (score, a);
            }
        }
        rows.push((m, p.grad_theta(f.row(s * na + best.1)).unwrap()));
    }
    outer_sum(&rows)
}

#[test]
fn q_regularity_probe_examples() {
    let mdp = random_mdp(2, 2, 0.9, 1.0, 3).unwrap();
    let pi = TabularPolicy::uniform(2, 2).unwrap();
    let f = random_unit_features(4, 3, 3, 0.2).unwrap();
    let p = small_net(3, 4);
    let mut rng = seeded(2);
    let thetas: Vec<Vec<f64>> = (0..5).map(|_| (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

    // Factored Sigma* equals brute force.
    let lin = Linearization::new(&p, &f).unwrap();
    let mu = StateChain::from_mdp(&mdp, &pi).unwrap().stationary().unwrap();
    for th in &thetas {
        let fac = sigma_star_factor_q(&lin, 2, &mu, th);
        let brute = brute_sigma_star_q(&p, &f, 2, &mu, th);
        assert!((fac.transpose() * &fac - brute).amax() <= 1e-10);
    }

    // gamma -> 0: the probe is (1 - nu)^2 lambda0.
    let zero = mdp.with_gamma(1e-300).unwrap();
    let probe = regularity_probe_q(&p, &f, &zero, &pi, &thetas).unwrap();
    let d = stationary_distribution(&zero, &pi).unwrap();
    let lambda0 = estimate_sigma(&p, &f, &d).unwrap().lambda0();
    let v = probe.min_eigenvalue(0.5);
    assert!(v > 0.0);
    assert!((v - 0.25 * lambda0).abs() <= 1e-10 * lambda0.max(1.0), "{v} vs {}", 0.25 * lambda0);
    assert_eq!(probe.largest_feasible_nu(), Some(0.99));

    // Feasible nu, if any, satisfies the inequality on the grid.
    let probe = regularity_probe_q(&p, &f, &mdp, &pi, &thetas).unwrap();
    if let Some(nu) = probe.largest_feasible_nu() {
        assert!(probe.min_eigenvalue(nu) >= -1e-8);
        assert!(nu >= 0.99 || probe.min_eigenvalue(nu + 0.01) < -1e-8);
    }
}

#[test]
fn single_action_probe_uses_state_weights() {
    let mdp = random_mdp(3, 1, 0.9, 1.0, 1).unwrap();
    let pi = TabularPolicy::uniform(3, 1).unwrap();
    let f = random_unit_features(3, 3, 1, 0.2).unwrap();
    let p = small_net(3, 1);
    let lin = Linearization::new(&p, &f).unwrap();
    let mu = StateChain::from_mdp(&mdp, &pi).unwrap().stationary().unwrap();
    let fac = sigma_star_factor_q(&lin, 1, &mu, p.theta());
    let rows: Vec<(f64, Vec<f64>)> = (0..3).map(|s| (mu[s], p.grad_theta(f.row(s)).unwrap())).collect();
    assert!((fac.transpose() * &fac - outer_sum(&rows)).amax() <= 1e-10);
}

fn brute_sigma_star_minimax(
    p: &NetworkParams,
    f: &FeatureMap,
    mu: &[f64],
    t1: &[f64],
    t2: &[f64],
    order: MinimaxOrder,
) -> DMatrix<f64> {
    let score = |row: usize, th: &[f64]| -> f64 { p.grad_theta(f.row(row)).unwrap().iter().zip(th).map(|(a, b)| a * b).sum() };
    let mut rows = Vec::new();
    for (s, &m) in mu.iter().enumerate() {
        let mat = |th: &[f64]| -> Vec<f64> { (0..4).map(|k| score(s * 4 + k, th)).collect() };
        let (_, a1_1, a2_1) = matrix_game_value(&mat(t1), 2, 2, order);
        let (_, a1_2, a2_2) = matrix_game_value(&mat(t2), 2, 2, order);
        let diff: Vec<f64> = t1.iter().zip(t2).map(|(a, b)| a - b).collect();
        let c1 = s * 4 + a1_1 * 2 + a2_2;
        let c2 = s * 4 + a1_2 * 2 + a2_1;
        let pick = if score(c2, &diff).abs() > score(c1, &diff).abs() { c2 } else { c1 };
        rows.push((m, p.grad_theta(f.row(pick)).unwrap()));
    }
    outer_sum(&rows)
}

#[test]
fn minimax_probe_examples() {
    let game = random_game(2, 2, 2, 0.9, 1.0, 6).unwrap();
    let pp = PolicyPair::uniform(&game);
    let f = random_unit_features(8, 4, 6, 0.1).unwrap();
    let p = small_net(4, 6);
    let lin = Linearization::new(&p, &f).unwrap();
    let mu = game_state_distribution(&game, &pp).unwrap();
    let mut rng = seeded(8);
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let a: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..p.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        pairs.push((a, b));
    }
    for order in [MinimaxOrder::MaxMin, MinimaxOrder::MinMax] {
        for (a, b) in &pairs {
            let fac = sigma_star_factor_minimax(&lin, (2, 2), &mu, a, b, order);
            let brute = brute_sigma_star_minimax(&p, &f, &mu, a, b, order);
            assert!((fac.transpose() * &fac - brute).amax() <= 1e-10);
        }
    }
    // theta_1 = theta_2: both candidates score zero and the first is taken.
    let same = vec![(pairs[0].0.clone(), pairs[0].0.clone())];
    let probe = regularity_probe_minimax(&p, &f, &game, &pp, &same, MinimaxOrder::MaxMin).unwrap();
    assert!(probe.min_eigenvalue(0.5).is_finite());

    // gamma -> 0 with one action per player.
    let zero_mdp = random_mdp(2, 1, 0.9, 1.0, 0).unwrap().with_gamma(1e-300).unwrap();
    let g1 = zero_mdp.to_game();
    let pp1 = PolicyPair::uniform(&g1);
    let f1 = random_unit_features(2, 4, 1, 0.2).unwrap();
    let probe = regularity_probe_minimax(&p, &f1, &g1, &pp1, &pairs[..2], MinimaxOrder::MaxMin).unwrap();
    assert!(probe.min_eigenvalue(0.3) > 0.0);
}
