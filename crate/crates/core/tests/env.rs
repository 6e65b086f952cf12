use ntd_core::env::{
    fit_geometric, mixing_profile, random_mdp, sample_trajectory, stationary_distribution, StateChain, TabularMdp, TabularPolicy,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_chain(ns in 1usize..6, na in 1usize..4, seed in 0u64..10_000, burn in 0usize..20) {
        let mdp = random_mdp(ns, na, 0.9, 1.0, seed).unwrap();
        let pi = TabularPolicy::uniform(ns, na).unwrap();
        let traj = sample_trajectory(&mdp, &pi, 50, seed ^ 1, burn).unwrap();
        for w in traj.steps.windows(2) {
            prop_assert_eq!(w[0].s_next, w[1].s);
        }
        for tr in &traj.steps {
            prop_assert!(tr.s < ns && tr.a < na && tr.s_next < ns && tr.a_next < na);
        }
    }

    #[test]
    fn profile_is_monotone_and_stationary_is_fixed(ns in 1usize..7, na in 1usize..3, seed in 0u64..10_000) {
        let mdp = random_mdp(ns, na, 0.9, 1.0, seed).unwrap();
        let pi = TabularPolicy::uniform(ns, na).unwrap();
        let prof = mixing_profile(&mdp, &pi, 40).unwrap();
        for w in prof.windows(2) {
            prop_assert!(w[1].tv <= w[0].tv + 1e-12);
        }
        let chain = StateChain::from_mdp(&mdp, &pi).unwrap();
        let mu = chain.stationary().unwrap();
        for j in 0..ns {
            let next: f64 = (0..ns).map(|i| mu[i] * chain.matrix[(i, j)]).sum();
            prop_assert!((next - mu[j]).abs() < 1e-10);
        }
        let d = stationary_distribution(&mdp, &pi).unwrap();
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn two_state_profile_is_geometric(p in 0.05f64..0.95) {
        prop_assume!((p - 0.5).abs() > 0.02);
        let mdp = TabularMdp::symmetric_chain(p, [0.0, 1.0], 0.9).unwrap();
        let pi = TabularPolicy::uniform(2, 1).unwrap();
        let prof = mixing_profile(&mdp, &pi, 25).unwrap();
        let fit = fit_geometric(&prof).unwrap();
        prop_assert!(fit.r_squared >= 0.99);
        prop_assert!((fit.rho - (2.0 * p - 1.0).abs()).abs() < 1e-6);
    }
}

#[test]
fn burn_in_follows_mixing_time() {
    let mdp = TabularMdp::symmetric_chain(0.9, [0.0, 0.0], 0.9).unwrap();
    let pi = TabularPolicy::uniform(2, 1).unwrap();
    let chain = StateChain::from_mdp(&mdp, &pi).unwrap();
    // 0.5 * 0.8^t <= 1/4 first at t = 4.
    assert_eq!(ntd_core::env::default_burn_in(&chain), 40);
}
