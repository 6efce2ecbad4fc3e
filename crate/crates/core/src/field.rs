use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;

/// Box bounds on the design variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds {
        lower: 0.0,
        upper: 1.0,
    };

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::UNIT
    }
}

/// Per-element design densities on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: GridSpec,
    values: Vec<f64>,
    volume_fraction: f64,
}

impl DensityField {
    pub fn uniform(grid: GridSpec, value: f64, volume_fraction: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_elements()],
            volume_fraction,
        }
    }

    /// Panics if `values.len()` does not match the grid.
    pub fn from_values(grid: GridSpec, values: Vec<f64>, volume_fraction: f64) -> Self {
        assert_eq!(
            values.len(),
            grid.n_elements(),
            "density field length does not match grid"
        );
        Self {
            grid,
            values,
            volume_fraction,
        }
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Target volume fraction `f`.
    #[inline]
    pub fn volume_fraction(&self) -> f64 {
        self.volume_fraction
    }

    /// Target material volume `f * n`.
    #[inline]
    pub fn target_volume(&self) -> f64 {
        self.volume_fraction * self.values.len() as f64
    }

    pub fn volume(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.volume() / self.values.len() as f64
    }

    pub fn within(&self, bounds: Bounds) -> bool {
        self.values.iter().all(|&v| bounds.contains(v))
    }

    pub fn max_abs_change(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Fraction of elements strictly between `lo` and `hi`.
    pub fn grey_fraction_between(&self, lo: f64, hi: f64) -> f64 {
        let grey = self.values.iter().filter(|&&v| v > lo && v < hi).count();
        grey as f64 / self.values.len() as f64
    }

    /// Fraction of elements with `0.05 < x < 0.95`.
    pub fn grey_fraction(&self) -> f64 {
        self.grey_fraction_between(0.05, 0.95)
    }
}
