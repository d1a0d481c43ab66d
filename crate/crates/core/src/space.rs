use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point in the d-dimensional parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("point must have at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(InputPoint(coords))
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(!coords.is_empty() && coords.iter().all(|c| c.is_finite()));
        InputPoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &InputPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl std::ops::Index<usize> for InputPoint {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Axis-aligned feasible region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidInput("bounds must have at least one dimension".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "bounds dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// The unit box [0, 1]^d.
    pub fn unit(d: usize) -> Self {
        assert!(d >= 1, "unit box needs d >= 1");
        Bounds { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &InputPoint) -> bool {
        x.dim() == self.dim()
            && x.coords()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn midpoint(&self) -> InputPoint {
        InputPoint(self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect())
    }

    /// Maps a point of this box into [0, 1]^d.
    pub fn to_unit(&self, x: &InputPoint) -> Result<InputPoint> {
        check_dim(self.dim(), x.dim())?;
        Ok(InputPoint(
            x.coords()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - self.lower[i]) / self.width(i))
                .collect(),
        ))
    }

    /// Maps a point of [0, 1]^d into this box. The result is clamped so that
    /// round-off never pushes it outside.
    pub fn from_unit(&self, u: &InputPoint) -> Result<InputPoint> {
        check_dim(self.dim(), u.dim())?;
        Ok(InputPoint(
            u.coords()
                .iter()
                .enumerate()
                .map(|(i, v)| (self.lower[i] + v * self.width(i)).clamp(self.lower[i], self.upper[i]))
                .collect(),
        ))
    }

    /// `from_unit` for coordinates already known to have this dimension.
    pub(crate) fn map_unit(&self, u: &[f64]) -> InputPoint {
        debug_assert_eq!(u.len(), self.dim());
        InputPoint(
            u.iter()
                .enumerate()
                .map(|(i, v)| (self.lower[i] + v * self.width(i)).clamp(self.lower[i], self.upper[i]))
                .collect(),
        )
    }
}
