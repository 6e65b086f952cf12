//! The L-layer neural Q-function
//!
//! ```text
//! x^(0) = phi(s, a)
//! x^(l) = sigma(W_l x^(l-1)) / sqrt(m),   l = 1..L
//! Q     = scale * b^T x^(L)
//! ```
//!
//! with `W_1` of shape m x d, `W_l` of shape m x m and a frozen sign vector
//! `b`. The trainable vector is `theta = (vec W_1; ...; vec W_L)` where `vec`
//! stacks columns, so entry `(i, j)` of `W_l` sits at
//! `offset(l) + j * rows(l) + i`.

mod activation;
mod checkpoint;

pub use activation::Activation;
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::rng::seeded;

/// Multiplier applied to `b^T x^(L)`.
///
/// `Unit` is the standard wide-network scaling: with `x^(L)` already
/// carrying `1/sqrt(m)`, `b^T x^(L)` is `O(1)` and its gradient is
/// width-independent. `Literal` multiplies by one more `1/sqrt(m)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputScale {
    #[default]
    Unit,
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub output_scale: OutputScale,
}

impl Architecture {
    pub fn new(depth: usize, width: usize, input_dim: usize, activation: Activation) -> Self {
        Self {
            depth,
            width,
            input_dim,
            activation,
            output_scale: OutputScale::Unit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 {
            return Err(Error::config(format!(
                "network needs L, m, d >= 1 (got L={}, m={}, d={})",
                self.depth, self.width, self.input_dim
            )));
        }
        Ok(())
    }

    /// `n = m d + (L - 1) m^2`.
    pub fn n_params(&self) -> usize {
        self.width * self.input_dim + (self.depth - 1) * self.width * self.width
    }

    fn layer_cols(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.width
        }
    }

    fn layer_offset(&self, l: usize) -> usize {
        if l == 0 {
            0
        } else {
            self.width * self.input_dim + (l - 1) * self.width * self.width
        }
    }

    fn output_factor(&self) -> f64 {
        match self.output_scale {
            OutputScale::Unit => 1.0,
            OutputScale::Literal => 1.0 / (self.width as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    theta: Vec<f64>,
    b: Vec<f64>,
}

/// Pre-activations `W_l x^(l-1)` and post-activations `x^(l)` of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl NetworkParams {
    pub fn new(arch: Architecture, theta: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.n_params() {
            return Err(Error::Dimension {
                expected: arch.n_params(),
                got: theta.len(),
            });
        }
        if b.len() != arch.width {
            return Err(Error::Dimension {
                expected: arch.width,
                got: b.len(),
            });
        }
        if b.iter().any(|&x| x != 1.0 && x != -1.0) {
            return Err(Error::config("output signs must be exactly +-1"));
        }
        Ok(Self { arch, theta, b })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
    pub fn depth(&self) -> usize {
        self.arch.depth
    }
    pub fn width(&self) -> usize {
        self.arch.width
    }
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }
    pub fn n_params(&self) -> usize {
        self.theta.len()
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn signs(&self) -> &[f64] {
        &self.b
    }

    /// Same architecture and signs, different weights.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        Ok(Self {
            arch: self.arch,
            theta,
            b: self.b.clone(),
        })
    }

    pub(crate) fn set_theta(&mut self, theta: &[f64]) {
        self.theta.copy_from_slice(theta);
    }

    pub fn with_output_scale(mut self, scale: OutputScale) -> Self {
        self.arch.output_scale = scale;
        self
    }

    /// `W_l` (0-based `l`) as a matrix.
    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        let rows = self.arch.width;
        let cols = self.arch.layer_cols(l);
        let off = self.arch.layer_offset(l);
        DMatrix::from_column_slice(rows, cols, &self.theta[off..off + rows * cols])
    }

    /// Inverse of [`NetworkParams::weight`] over all layers.
    pub fn from_weights(arch: Architecture, weights: &[DMatrix<f64>], b: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.depth {
            return Err(Error::Dimension {
                expected: arch.depth,
                got: weights.len(),
            });
        }
        let mut theta = Vec::with_capacity(arch.n_params());
        for (l, w) in weights.iter().enumerate() {
            if w.nrows() != arch.width || w.ncols() != arch.layer_cols(l) {
                return Err(Error::config(format!("W_{} has shape {}x{}", l + 1, w.nrows(), w.ncols())));
            }
            theta.extend_from_slice(w.as_slice());
        }
        Self::new(arch, theta, b)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Dimension {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache)> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub fn q_value(&self, x: &[f64]) -> Result<f64> {
        self.forward(x).map(|(q, _)| q)
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> (f64, ForwardCache) {
        let m = self.arch.width;
        let inv_sqrt_m = 1.0 / (m as f64).sqrt();
        let act = self.arch.activation;
        let mut pre = Vec::with_capacity(self.arch.depth);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.arch.depth);
        for l in 0..self.arch.depth {
            let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
            let off = self.arch.layer_offset(l);
            let mut h = vec![0.0; m];
            for (j, &xj) in input.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                let col = &self.theta[off + j * m..off + (j + 1) * m];
                for (hi, &w) in h.iter_mut().zip(col) {
                    *hi += w * xj;
                }
            }
            let out = h.iter().map(|&y| act.value(y) * inv_sqrt_m).collect();
            pre.push(h);
            post.push(out);
        }
        let last = post.last().expect("depth >= 1");
        let q = self.arch.output_factor() * self.b.iter().zip(last).map(|(b, x)| b * x).sum::<f64>();
        (q, ForwardCache { pre, post })
    }

    /// Exact reverse-mode gradient of `Q(x; theta)` in the flattening order of theta.
    pub fn grad_theta(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.value_and_grad_unchecked(x).1)
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        Ok(self.value_and_grad_unchecked(x))
    }

    pub(crate) fn value_and_grad_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (q, cache) = self.forward_unchecked(x);
        let m = self.arch.width;
        let inv_sqrt_m = 1.0 / (m as f64).sqrt();
        let act = self.arch.activation;
        let mut grad = vec![0.0; self.theta.len()];
        // upstream = dQ/dx^(l)
        let c = self.arch.output_factor();
        let mut upstream: Vec<f64> = self.b.iter().map(|b| c * b).collect();
        for l in (0..self.arch.depth).rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre[l])
                .map(|(u, &h)| u * act.derivative(h) * inv_sqrt_m)
                .collect();
            let input: &[f64] = if l == 0 { x } else { &cache.post[l - 1] };
            let off = self.arch.layer_offset(l);
            for (j, &xj) in input.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                let g = &mut grad[off + j * m..off + (j + 1) * m];
                for (gi, &di) in g.iter_mut().zip(&delta) {
                    *gi = di * xj;
                }
            }
            if l > 0 {
                let cols = self.arch.layer_cols(l);
                upstream = (0..cols)
                    .map(|j| {
                        let col = &self.theta[off + j * m..off + (j + 1) * m];
                        col.iter().zip(&delta).map(|(w, d)| w * d).sum()
                    })
                    .collect();
            }
        }
        (q, grad)
    }

    /// Q values for every row of a feature table.
    pub fn q_values(&self, features: &FeatureMap) -> Result<Vec<f64>> {
        self.check_input(&vec![0.0; features.dim()])?;
        Ok(features.rows().iter().map(|x| self.forward_unchecked(x).0).collect())
    }
}

/// Draws `W_l` entries i.i.d. N(0,1) and `b` uniform on `{-1, +1}`.
/// Returns the parameters and the ball center (a copy of theta^0).
pub fn init_params(arch: Architecture, seed: u64) -> Result<(NetworkParams, Vec<f64>)> {
    arch.validate()?;
    let mut rng = seeded(seed);
    let theta: Vec<f64> = (0..arch.n_params()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let b = (0..arch.width)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let center = theta.clone();
    Ok((NetworkParams::new(arch, theta, b)?, center))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if d.is_finite() {
        return d;
    }
    // The squares overflowed; rescale by the largest coordinate gap.
    let scale = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if !scale.is_finite() {
        return scale;
    }
    scale * a.iter().zip(b).map(|(x, y)| ((x - y) / scale).powi(2)).sum::<f64>().sqrt()
}

/// `Q(x; theta^0) + <grad Q(x; theta^0), theta - theta^0>`.
pub fn linearized_q(params_at_init: &NetworkParams, theta: &[f64], x: &[f64]) -> Result<f64> {
    if theta.len() != params_at_init.n_params() {
        return Err(Error::Dimension {
            expected: params_at_init.n_params(),
            got: theta.len(),
        });
    }
    let (q0, g) = params_at_init.value_and_grad(x)?;
    let shift: f64 = g
        .iter()
        .zip(theta.iter().zip(params_at_init.theta()))
        .map(|(gi, (t, t0))| gi * (t - t0))
        .sum();
    Ok(q0 + shift)
}

/// Values and gradients at theta^0 over a whole feature table: the affine
/// class `q0 + J (theta - theta^0)` restricted to the table rows.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub theta0: Vec<f64>,
    /// `Q(x_i; theta^0)`
    pub q0: Vec<f64>,
    /// Row `i` is `grad Q(x_i; theta^0)`.
    pub jacobian: DMatrix<f64>,
}

impl Linearization {
    pub fn new(params_at_init: &NetworkParams, features: &FeatureMap) -> Result<Self> {
        let n = params_at_init.n_params();
        let p = features.n_rows();
        if features.dim() != params_at_init.input_dim() {
            return Err(Error::Dimension {
                expected: params_at_init.input_dim(),
                got: features.dim(),
            });
        }
        let mut jacobian = DMatrix::zeros(p, n);
        let mut q0 = Vec::with_capacity(p);
        for (i, x) in features.rows().iter().enumerate() {
            let (q, g) = params_at_init.value_and_grad_unchecked(x);
            q0.push(q);
            for (k, gk) in g.into_iter().enumerate() {
                jacobian[(i, k)] = gk;
            }
        }
        Ok(Self {
            theta0: params_at_init.theta().to_vec(),
            q0,
            jacobian,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.q0.len()
    }

    /// Linearized values on every row at `theta`.
    pub fn values(&self, theta: &[f64]) -> Vec<f64> {
        let delta = nalgebra::DVector::from_iterator(
            theta.len(),
            theta.iter().zip(&self.theta0).map(|(t, t0)| t - t0),
        );
        let shift = &self.jacobian * delta;
        self.q0.iter().zip(shift.iter()).map(|(q, s)| q + s).collect()
    }

    pub fn gradient(&self, row: usize) -> Vec<f64> {
        self.jacobian.row(row).iter().copied().collect()
    }
}

/// Euclidean ball `S_omega` around the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallConstraint {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallConstraint {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("ball radius must be finite and >= 0, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    /// Uses the same 1e-12 slack as [`Self::project_in_place`].
    pub fn contains(&self, theta: &[f64]) -> bool {
        distance(theta, &self.center) <= self.radius + 1e-12
    }

    /// Projects in place; returns whether the point was moved.
    /// Points within 1e-12 of the sphere count as inside, so a second
    /// projection never moves a projected point.
    pub fn project_in_place(&self, theta: &mut [f64]) -> bool {
        let dist = distance(theta, &self.center);
        if dist <= self.radius + 1e-12 {
            return false;
        }
        let s = self.radius / dist;
        for (t, c) in theta.iter_mut().zip(&self.center) {
            *t = c + s * (*t - c);
        }
        true
    }
}

/// `Pi_{S_omega}(theta)`: unchanged inside the ball, radially pulled onto the
/// sphere outside it.
pub fn project_ball(constraint: &BallConstraint, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != constraint.center.len() {
        return Err(Error::Dimension {
            expected: constraint.center.len(),
            got: theta.len(),
        });
    }
    let mut out = theta.to_vec();
    constraint.project_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(l: usize, m: usize, d: usize, act: Activation) -> Architecture {
        Architecture::new(l, m, d, act)
    }

    #[test]
    fn init_dimensions_and_determinism() {
        let (p, c) = init_params(arch(2, 4, 3, Activation::Elu), 0).unwrap();
        assert_eq!(p.n_params(), 28);
        assert_eq!(c, p.theta());
        let (q, _) = init_params(arch(2, 4, 3, Activation::Elu), 0).unwrap();
        assert_eq!(p, q);
        assert!(p.signs().iter().all(|&b| b == 1.0 || b == -1.0));
    }

    #[test]
    fn init_moments() {
        let (p, _) = init_params(arch(1, 1000, 100, Activation::Elu), 3).unwrap();
        let n = p.n_params() as f64;
        let mean = p.theta().iter().sum::<f64>() / n;
        let var = p.theta().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn flatten_is_column_major_and_round_trips() {
        let (p, _) = init_params(arch(3, 3, 2, Activation::Gelu), 5).unwrap();
        let w1 = p.weight(0);
        assert_eq!(w1[(2, 1)], p.theta()[3 + 2]);
        let ws: Vec<_> = (0..3).map(|l| p.weight(l)).collect();
        let q = NetworkParams::from_weights(*p.arch(), &ws, p.signs().to_vec()).unwrap();
        assert_eq!(q.theta(), p.theta());
    }

    #[test]
    fn forward_examples() {
        let a = arch(2, 3, 2, Activation::Elu);
        let zero = NetworkParams::new(a, vec![0.0; a.n_params()], vec![1.0, -1.0, 1.0]).unwrap();
        assert_eq!(zero.q_value(&[0.6, 0.8]).unwrap(), 0.0);

        let a = arch(1, 1, 2, Activation::Sigmoid);
        let p = NetworkParams::new(a, vec![0.5, -1.5], vec![1.0]).unwrap();
        let x = [0.6, 0.8];
        let expected = 1.0 / (1.0 + (-(0.5 * 0.6 - 1.5 * 0.8_f64)).exp());
        assert!((p.q_value(&x).unwrap() - expected).abs() < 1e-15);

        let (p, _) = init_params(arch(2, 8, 2, Activation::Gelu), 1).unwrap();
        let neg_b: Vec<f64> = p.signs().iter().map(|b| -b).collect();
        let n = NetworkParams::new(*p.arch(), p.theta().to_vec(), neg_b).unwrap();
        assert_eq!(n.q_value(&x).unwrap(), -p.q_value(&x).unwrap());
        assert!(p.q_value(&[1.0]).is_err());
    }

    #[test]
    fn zero_hidden_activations_kill_outer_gradient() {
        let a = arch(2, 4, 3, Activation::Elu);
        let p = NetworkParams::new(a, vec![0.0; a.n_params()], vec![1.0; 4]).unwrap();
        let g = p.grad_theta(&[1.0, 0.0, 0.0]).unwrap();
        assert!(g[12..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linearization_is_affine() {
        let (p, _) = init_params(arch(2, 6, 3, Activation::Elu), 2).unwrap();
        let x = [0.0, 0.6, 0.8];
        assert_eq!(linearized_q(&p, p.theta(), &x).unwrap(), p.q_value(&x).unwrap());
        let v: Vec<f64> = (0..p.n_params()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let at = |t: f64| {
            let th: Vec<f64> = p.theta().iter().zip(&v).map(|(a, b)| a + t * b).collect();
            linearized_q(&p, &th, &x).unwrap()
        };
        let (f0, f1, f2) = (at(0.0), at(1.0), at(2.0));
        assert!(((f2 - f1) - (f1 - f0)).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let ball = BallConstraint::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(project_ball(&ball, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        let out = project_ball(&ball, &[3.0, 4.0]).unwrap();
        assert!((norm(&out) - 1.0).abs() < 1e-12);
        assert_eq!(project_ball(&ball, &out).unwrap(), out);
    }
}
