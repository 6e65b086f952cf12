use ntd_core::network::{init_params, linearized_q, project_ball, Activation, Architecture, BallConstraint, NetworkParams};
use ntd_core::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Central differences over every coordinate of theta.
fn fd_gradient(p: &NetworkParams, x: &[f64], h: f64) -> Vec<f64> {
    let mut theta = p.theta().to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + h;
        let up = p.with_theta(theta.clone()).unwrap().q_value(x).unwrap();
        theta[k] = orig - h;
        let down = p.with_theta(theta.clone()).unwrap().q_value(x).unwrap();
        theta[k] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = seeded(1);
    for act in Activation::ALL {
        for depth in 1..=3 {
            for m in [4, 32] {
                for trial in 0..3 {
                    let arch = Architecture::new(depth, m, 3, act);
                    let (p, _) = init_params(arch, 1000 * depth as u64 + 10 * m as u64 + trial).unwrap();
                    let x = unit_vector(3, &mut rng);
                    let g = p.grad_theta(&x).unwrap();
                    let fd = fd_gradient(&p, &x, 1e-5);
                    let e = rel_err(&g, &fd);
                    assert!(e <= 1e-5, "{act:?} L={depth} m={m}: rel err {e}");
                }
            }
        }
    }
}

#[test]
fn gradient_norm_is_width_independent() {
    let mut rng = seeded(2);
    let mean_norm = |m: usize, rng: &mut ntd_core::rng::SeededRng| {
        let mut total = 0.0;
        for s in 0..100 {
            let (p, _) = init_params(Architecture::new(2, m, 4, Activation::Elu), 7000 + s).unwrap();
            let x = unit_vector(4, rng);
            total += p.grad_theta(&x).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
        }
        total / 100.0
    };
    let r = mean_norm(64, &mut rng) / mean_norm(256, &mut rng);
    assert!((0.5..=2.0).contains(&r), "ratio {r}");
}

#[test]
fn output_magnitude_does_not_grow_with_width() {
    let mut rng = seeded(3);
    let mut max_abs = |m: usize| {
        let mut best: f64 = 0.0;
        for s in 0..100 {
            let (p, _) = init_params(Architecture::new(1, m, 4, Activation::Elu), 500 + s).unwrap();
            for _ in 0..100 {
                let x = unit_vector(4, &mut rng);
                best = best.max(p.q_value(&x).unwrap().abs());
            }
        }
        best
    };
    let (small, large) = (max_abs(64), max_abs(1024));
    assert!(large / small <= 2.0, "max |Q| {small} at m=64 vs {large} at m=1024");
}

#[test]
fn linearization_gap_is_second_order() {
    let (p, _) = init_params(Architecture::new(2, 16, 3, Activation::Gelu), 4).unwrap();
    let mut rng = seeded(4);
    let x = unit_vector(3, &mut rng);
    let v = unit_vector(p.n_params(), &mut rng);
    let gap = |t: f64| {
        let th: Vec<f64> = p.theta().iter().zip(&v).map(|(a, b)| a + t * b).collect();
        (p.with_theta(th.clone()).unwrap().q_value(&x).unwrap() - linearized_q(&p, &th, &x).unwrap()).abs()
    };
    // Halving the displacement quarters the gap, up to third-order terms.
    let r = gap(0.02) / gap(0.01);
    assert!((r - 4.0).abs() < 0.2, "ratio {r}");
}

proptest! {
    #[test]
    fn projection_is_feasible_and_non_expansive(
        center in prop::collection::vec(-3.0f64..3.0, 6),
        u in prop::collection::vec(-20.0f64..20.0, 6),
        v in prop::collection::vec(-20.0f64..20.0, 6),
        radius in 0.0f64..5.0,
    ) {
        let ball = BallConstraint::new(center.clone(), radius).unwrap();
        let pu = project_ball(&ball, &u).unwrap();
        let pv = project_ball(&ball, &v).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&pu, &center) <= radius + 1e-12);
        prop_assert!(dist(&pu, &pv) <= dist(&u, &v) + 1e-12);
        prop_assert_eq!(project_ball(&ball, &pu).unwrap(), pu);
    }

    #[test]
    fn flatten_round_trips(depth in 1usize..4, m in 1usize..6, d in 1usize..5, seed in 0u64..1000) {
        let (p, _) = init_params(Architecture::new(depth, m, d, Activation::Sigmoid), seed).unwrap();
        let ws: Vec<_> = (0..depth).map(|l| p.weight(l)).collect();
        let q = NetworkParams::from_weights(*p.arch(), &ws, p.signs().to_vec()).unwrap();
        prop_assert_eq!(q.theta(), p.theta());
    }
}
