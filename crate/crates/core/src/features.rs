//! Unit-norm feature maps `phi(s, a)` materialized as dense tables.
//!
//! Row `i` of a table is the feature of flattened pair `i` (see [`crate::env`]
//! for the flattening order).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// One degree, the default minimum angle between random feature rows.
pub const DEFAULT_MIN_ANGLE: f64 = std::f64::consts::PI / 180.0;

const NORM_TOL: f64 = 1e-12;
const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    OneHot,
    RandomUnit,
    Grid,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureDoc", into = "FeatureDoc")]
pub struct FeatureMap {
    dim: usize,
    rows: Vec<Vec<f64>>,
    kind: FeatureKind,
}

#[derive(Serialize, Deserialize)]
struct FeatureDoc {
    dim: usize,
    rows: Vec<Vec<f64>>,
    #[serde(default = "custom_kind")]
    kind: FeatureKind,
}

fn custom_kind() -> FeatureKind {
    FeatureKind::Custom
}

impl TryFrom<FeatureDoc> for FeatureMap {
    type Error = Error;
    fn try_from(doc: FeatureDoc) -> Result<Self> {
        let map = FeatureMap::from_rows(doc.rows, doc.kind)?;
        if map.dim != doc.dim {
            return Err(Error::config(format!(
                "declared dim {} but rows have length {}",
                doc.dim, map.dim
            )));
        }
        Ok(map)
    }
}

impl From<FeatureMap> for FeatureDoc {
    fn from(m: FeatureMap) -> Self {
        FeatureDoc {
            dim: m.dim,
            rows: m.rows,
            kind: m.kind,
        }
    }
}

impl FeatureMap {
    /// Validates rows: equal length `d >= 1`, finite, unit Euclidean norm.
    pub fn from_rows(rows: Vec<Vec<f64>>, kind: FeatureKind) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(Error::config("feature map needs at least one row of dim >= 1"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::config(format!("feature row {i} has length {}", row.len())));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::config(format!("feature row {i} has norm {norm}")));
            }
        }
        Ok(Self { dim, rows, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
    pub fn kind(&self) -> FeatureKind {
        self.kind
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// `phi(s, a) = e_{s * n_actions + a}`. For games pass `n_actions = n1 * n2`.
pub fn one_hot_features(n_states: usize, n_actions: usize) -> Result<FeatureMap> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::config("one-hot features need positive sizes"));
    }
    let d = n_states * n_actions;
    let rows = (0..d)
        .map(|i| {
            let mut r = vec![0.0; d];
            r[i] = 1.0;
            r
        })
        .collect();
    FeatureMap::from_rows(rows, FeatureKind::OneHot)
}

/// Normalized Gaussian rows, redrawn until every pairwise `|cos|` is below
/// `cos(min_angle)`. `min_angle` is in radians.
pub fn random_unit_features(n_pairs: usize, d: usize, seed: u64, min_angle: f64) -> Result<FeatureMap> {
    if d < 2 {
        return Err(Error::config("random unit features need d >= 2"));
    }
    if n_pairs == 0 {
        return Err(Error::config("random unit features need n_pairs >= 1"));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&min_angle) {
        return Err(Error::config("min_angle must lie in [0, pi/2]"));
    }
    let max_cos = min_angle.cos();
    let mut rng = seeded(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let ok = rows.iter().all(|r| {
                let c: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                c.abs() < max_cos
            });
            if ok {
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => rows.push(v),
            None => {
                return Err(Error::config(format!(
                    "could not place feature row {i} at angle >= {min_angle} rad after {MAX_REDRAWS} draws"
                )))
            }
        }
    }
    FeatureMap::from_rows(rows, FeatureKind::RandomUnit)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFeatures {
    pub map: FeatureMap,
    /// Row of the map for each input sample.
    pub assignment: Vec<usize>,
    /// Grid cell (per-dimension bin indices) of each row.
    pub cells: Vec<Vec<usize>>,
    /// Number of samples that fell outside `[lo, hi]` and were clamped.
    pub clamped: usize,
}

/// Discretizes raw vectors onto a fixed grid; each occupied cell becomes a
/// one-hot row, numbered in order of first occurrence.
pub fn grid_features(samples: &[Vec<f64>], bins_per_dim: &[usize], lo: &[f64], hi: &[f64]) -> Result<GridFeatures> {
    let k = lo.len();
    if samples.is_empty() {
        return Err(Error::config("grid features need at least one sample"));
    }
    if k == 0 || hi.len() != k || bins_per_dim.len() != k {
        return Err(Error::config("lo, hi and bins_per_dim must share one positive length"));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::config("grid bounds need lo < hi in every dimension"));
    }
    if bins_per_dim.contains(&0) {
        return Err(Error::config("bins_per_dim must be >= 1"));
    }
    let mut clamped = 0;
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut assignment = Vec::with_capacity(samples.len());
    for (i, x) in samples.iter().enumerate() {
        if x.len() != k {
            return Err(Error::config(format!("sample {i} has dimension {}, expected {k}", x.len())));
        }
        let mut outside = false;
        let cell: Vec<usize> = (0..k)
            .map(|j| {
                if !(lo[j]..=hi[j]).contains(&x[j]) {
                    outside = true;
                }
                let width = (hi[j] - lo[j]) / bins_per_dim[j] as f64;
                let b = ((x[j] - lo[j]) / width).floor();
                // NaN and negative bins land in cell 0.
                if b >= 0.0 {
                    (b as usize).min(bins_per_dim[j] - 1)
                } else {
                    0
                }
            })
            .collect();
        if outside {
            clamped += 1;
        }
        let next = cells.len();
        let row = *index.entry(cell.clone()).or_insert_with(|| {
            cells.push(cell);
            next
        });
        assignment.push(row);
    }
    let d = cells.len();
    let rows = (0..d)
        .map(|i| {
            let mut r = vec![0.0; d];
            r[i] = 1.0;
            r
        })
        .collect();
    Ok(GridFeatures {
        map: FeatureMap::from_rows(rows, FeatureKind::Grid)?,
        assignment,
        cells,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn one_hot_examples() {
        let f = one_hot_features(1, 1).unwrap();
        assert_eq!(f.rows(), &[vec![1.0]]);
        let f = one_hot_features(2, 2).unwrap();
        assert_eq!(f.row(2), &[0.0, 0.0, 1.0, 0.0]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(dot(f.row(i), f.row(j)), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn random_unit_examples() {
        let f = random_unit_features(1, 4, 0, DEFAULT_MIN_ANGLE).unwrap();
        assert!((dot(f.row(0), f.row(0)) - 1.0).abs() < 1e-12);
        let angle = 0.3;
        let f = random_unit_features(3, 8, 1, angle).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!(dot(f.row(i), f.row(j)).abs() < angle.cos());
            }
        }
        assert_eq!(f, random_unit_features(3, 8, 1, angle).unwrap());
        assert!(random_unit_features(2, 1, 0, 0.1).is_err());
    }

    #[test]
    fn impossible_angle_is_a_config_error() {
        // Three rows in R^2 cannot be pairwise 80 degrees apart.
        assert!(random_unit_features(3, 2, 0, 80f64.to_radians()).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = grid_features(&[vec![0.3]], &[4], &[0.0], &[1.0]).unwrap();
        assert_eq!(g.map.dim(), 1);
        assert_eq!(g.map.row(0), &[1.0]);

        let g = grid_features(&[vec![0.1], vec![0.2]], &[2], &[0.0], &[1.0]).unwrap();
        assert_eq!(g.assignment[0], g.assignment[1]);

        let g = grid_features(&[vec![0.1], vec![0.9]], &[2], &[0.0], &[1.0]).unwrap();
        assert_ne!(g.assignment[0], g.assignment[1]);
        assert_eq!(dot(g.map.row(0), g.map.row(1)), 0.0);
        assert_eq!(g.cells, vec![vec![0], vec![1]]);
    }

    #[test]
    fn grid_clamps_out_of_range() {
        let g = grid_features(&[vec![-5.0, 0.5], vec![0.0, 9.0], vec![1.0, 1.0]], &[2, 2], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(g.clamped, 2);
        assert_eq!(g.cells[g.assignment[0]], vec![0, 1]);
        assert_eq!(g.cells[g.assignment[1]], vec![0, 1]);
        assert_eq!(g.cells[g.assignment[2]], vec![1, 1]);
        assert!(grid_features(&[vec![0.0]], &[1], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn feature_json_shape() {
        let f = one_hot_features(1, 2).unwrap();
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["dim"], 2);
        let back: FeatureMap = serde_json::from_value(serde_json::json!({"dim": 2, "rows": [[1.0, 0.0]]})).unwrap();
        assert_eq!(back.kind(), FeatureKind::Custom);
        assert!(serde_json::from_value::<FeatureMap>(serde_json::json!({"dim": 2, "rows": [[1.0, 1.0]]})).is_err());
    }
}
