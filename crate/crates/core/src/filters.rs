//! Neighbourhood filters on structured element grids: truncated Gaussian
//! smoothing, the 88-line cone filter, and grayscale morphological closing.

use thiserror::Error;

use crate::grid::GridSpec;
use crate::model::{DensityFilterKind, FilterConfig, SensitivityFilterKind};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("filter radius {0} must be finite and >= 0")]
    Radius(f64),
    #[error("field has {got} entries, grid has {expected} elements")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("morphological filtering needs values in [0, 1], found {0}")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `exp(-d^2 / (2 sigma^2))`, truncated at the radius.
    Gaussian { sigma: f64 },
    /// 88-line hat weights `max(0, r - d)`.
    Cone,
    /// Flat structuring element (discrete disk or ball).
    Disk,
}

/// Precomputed neighbour offsets and raw weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    kind: KernelKind,
    radius: f64,
    offsets: Vec<[i64; 3]>,
    weights: Vec<f64>,
}

fn check_radius(radius: f64) -> Result<(), FilterError> {
    if radius.is_finite() && radius >= 0.0 {
        Ok(())
    } else {
        Err(FilterError::Radius(radius))
    }
}

impl FilterKernel {
    fn build(kind: KernelKind, radius: f64, three_d: bool, weight: impl Fn(f64) -> f64) -> Self {
        let reach = radius.floor() as i64;
        let zr = if three_d { reach } else { 0 };
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for dz in -zr..=zr {
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    let d = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    let w = weight(d);
                    if d <= radius && w > 0.0 {
                        offsets.push([dx, dy, dz]);
                        weights.push(w);
                    }
                }
            }
        }
        Self {
            kind,
            radius,
            offsets,
            weights,
        }
    }

    /// Gaussian with `sigma = sigma_ratio * radius`, truncated at `radius`.
    /// A zero radius yields the identity.
    pub fn gaussian(radius: f64, sigma_ratio: f64, three_d: bool) -> Result<Self, FilterError> {
        check_radius(radius)?;
        let sigma = sigma_ratio * radius;
        Ok(Self::build(KernelKind::Gaussian { sigma }, radius, three_d, |d| {
            if d == 0.0 {
                1.0
            } else {
                (-d * d / (2.0 * sigma * sigma)).exp()
            }
        }))
    }

    /// Linear hat `max(0, r - d)` of the 88-line code.
    pub fn cone(radius: f64, three_d: bool) -> Result<Self, FilterError> {
        check_radius(radius)?;
        if radius == 0.0 {
            return Ok(Self::build(KernelKind::Cone, 0.0, three_d, |_| 1.0));
        }
        Ok(Self::build(KernelKind::Cone, radius, three_d, |d| (radius - d).max(0.0)))
    }

    /// Flat disk (2D) or ball (3D) of all offsets within `radius`.
    pub fn disk(radius: f64, three_d: bool) -> Result<Self, FilterError> {
        check_radius(radius)?;
        Ok(Self::build(KernelKind::Disk, radius, three_d, |_| 1.0))
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_identity(&self) -> bool {
        self.offsets.len() == 1
    }
}

#[inline]
fn neighbour(grid: &GridSpec, e: usize, off: [i64; 3]) -> Option<usize> {
    let (ix, iy, iz) = grid.element_coords(e);
    let x = ix as i64 + off[0];
    let y = iy as i64 + off[1];
    let z = iz as i64 + off[2];
    if x < 0 || y < 0 || z < 0 || x >= grid.nx as i64 || y >= grid.ny as i64 || z >= grid.nz as i64 {
        return None;
    }
    Some(grid.element_id(x as usize, y as usize, z as usize))
}

fn check_shape(grid: &GridSpec, field: &[f64]) -> Result<(), FilterError> {
    if field.len() != grid.n_elements() {
        Err(FilterError::ShapeMismatch {
            expected: grid.n_elements(),
            got: field.len(),
        })
    } else {
        Ok(())
    }
}

/// A weighted kernel bound to a grid, with per-element boundary normalization.
#[derive(Debug, Clone)]
pub struct GridFilter {
    grid: GridSpec,
    kernel: FilterKernel,
    /// Sum of in-domain weights of each element's neighbourhood.
    norm: Vec<f64>,
}

impl GridFilter {
    pub fn new(grid: GridSpec, kernel: FilterKernel) -> Self {
        let norm = (0..grid.n_elements())
            .map(|e| {
                kernel
                    .offsets
                    .iter()
                    .zip(&kernel.weights)
                    .filter(|(off, _)| neighbour(&grid, e, **off).is_some())
                    .map(|(_, w)| w)
                    .sum()
            })
            .collect();
        Self { grid, kernel, norm }
    }

    pub fn kernel(&self) -> &FilterKernel {
        &self.kernel
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// `y_e = sum_j w_ej x_j / sum_j w_ej`.
    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>, FilterError> {
        check_shape(&self.grid, field)?;
        if self.kernel.is_identity() {
            return Ok(field.to_vec());
        }
        Ok((0..field.len())
            .map(|e| {
                let mut acc = 0.0;
                for (off, w) in self.kernel.offsets.iter().zip(&self.kernel.weights) {
                    if let Some(j) = neighbour(&self.grid, e, *off) {
                        acc += w * field[j];
                    }
                }
                acc / self.norm[e]
            })
            .collect())
    }

    /// Adjoint of [`apply`](Self::apply): `g_j = sum_e w_ej g_e / sum_k w_ek`.
    pub fn apply_transpose(&self, grad: &[f64]) -> Result<Vec<f64>, FilterError> {
        check_shape(&self.grid, grad)?;
        if self.kernel.is_identity() {
            return Ok(grad.to_vec());
        }
        let scaled: Vec<f64> = grad.iter().zip(&self.norm).map(|(g, n)| g / n).collect();
        // symmetric offsets: w_ej = w_je
        Ok((0..grad.len())
            .map(|j| {
                let mut acc = 0.0;
                for (off, w) in self.kernel.offsets.iter().zip(&self.kernel.weights) {
                    if let Some(e) = neighbour(&self.grid, j, *off) {
                        acc += w * scaled[e];
                    }
                }
                acc
            })
            .collect())
    }

    /// 88-line sensitivity filter `H (x .* g) ./ Hs ./ max(1e-3, x)`.
    pub fn weighted_sensitivity(&self, x: &[f64], grad: &[f64]) -> Result<Vec<f64>, FilterError> {
        check_shape(&self.grid, x)?;
        let xg: Vec<f64> = x.iter().zip(grad).map(|(a, b)| a * b).collect();
        let mut out = self.apply(&xg)?;
        for (o, &xe) in out.iter_mut().zip(x) {
            *o /= xe.max(1e-3);
        }
        Ok(out)
    }
}

/// Truncated Gaussian smoothing with boundary renormalization.
pub fn gaussian_filter(field: &[f64], grid: GridSpec, kernel: &FilterKernel) -> Result<Vec<f64>, FilterError> {
    GridFilter::new(grid, kernel.clone()).apply(field)
}

/// Max (`dilate == true`) or min over the structuring element, also
/// returning the index that attained it (first in offset order on ties).
fn morph_pass(grid: &GridSpec, kernel: &FilterKernel, field: &[f64], dilate: bool) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(field.len());
    let mut arg = Vec::with_capacity(field.len());
    for e in 0..field.len() {
        let mut best = field[e];
        let mut best_idx = e;
        for off in &kernel.offsets {
            if let Some(j) = neighbour(grid, e, *off) {
                let v = field[j];
                if (dilate && v > best) || (!dilate && v < best) {
                    best = v;
                    best_idx = j;
                }
            }
        }
        out.push(best);
        arg.push(best_idx);
    }
    (out, arg)
}

/// Grayscale closing: dilation (max) followed by erosion (min) with the same
/// structuring element.
pub fn morph_close(field: &[f64], grid: GridSpec, kernel: &FilterKernel) -> Result<Vec<f64>, FilterError> {
    check_shape(&grid, field)?;
    if let Some(&v) = field.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(FilterError::OutOfRange(v));
    }
    Ok(close_tracked(&grid, kernel, field).0)
}

/// Closing without the range check, with `source[e]` = input index selected for `e`.
fn close_tracked(grid: &GridSpec, kernel: &FilterKernel, field: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (dilated, arg_max) = morph_pass(grid, kernel, field, true);
    let (closed, arg_min) = morph_pass(grid, kernel, &dilated, false);
    let source = arg_min.iter().map(|&k| arg_max[k]).collect();
    (closed, source)
}

/// Density filter mapping design variables to physical densities.
#[derive(Debug, Clone)]
pub enum DensityFilter {
    Gaussian(GridFilter),
    Close { grid: GridSpec, kernel: FilterKernel },
}

/// Forward state of a density filter needed for the chain rule.
#[derive(Debug, Clone)]
pub struct FilteredDensity {
    pub physical: Vec<f64>,
    /// Selected input index per element (closing only).
    source: Option<Vec<usize>>,
}

impl DensityFilter {
    pub fn forward(&self, x: &[f64]) -> Result<FilteredDensity, FilterError> {
        match self {
            DensityFilter::Gaussian(f) => Ok(FilteredDensity {
                physical: f.apply(x)?,
                source: None,
            }),
            DensityFilter::Close { grid, kernel } => {
                check_shape(grid, x)?;
                let (physical, source) = close_tracked(grid, kernel, x);
                Ok(FilteredDensity {
                    physical,
                    source: Some(source),
                })
            }
        }
    }

    /// Pulls a gradient with respect to physical densities back to the design variables.
    pub fn chain(&self, state: &FilteredDensity, grad: &[f64]) -> Result<Vec<f64>, FilterError> {
        match self {
            DensityFilter::Gaussian(f) => f.apply_transpose(grad),
            DensityFilter::Close { grid, .. } => {
                check_shape(grid, grad)?;
                let source = state.source.as_ref().expect("closing state carries sources");
                let mut out = vec![0.0; grad.len()];
                for (e, &j) in source.iter().enumerate() {
                    out[j] += grad[e];
                }
                Ok(out)
            }
        }
    }
}

/// Smoothing applied to design sensitivities.
#[derive(Debug, Clone)]
pub enum SensitivityFilter {
    Gaussian(GridFilter),
    /// Closing with a disk of radius `floor(r)`, then a Gaussian of radius `r - floor(r)`.
    CloseThenGaussian {
        grid: GridSpec,
        disk: FilterKernel,
        residual: GridFilter,
    },
}

impl SensitivityFilter {
    pub fn apply(&self, grad: &[f64]) -> Result<Vec<f64>, FilterError> {
        match self {
            SensitivityFilter::Gaussian(f) => f.apply(grad),
            SensitivityFilter::CloseThenGaussian { grid, disk, residual } => {
                check_shape(grid, grad)?;
                let closed = close_tracked(grid, disk, grad).0;
                residual.apply(&closed)
            }
        }
    }
}

/// The density and sensitivity filters of one EGP run.
#[derive(Debug, Clone)]
pub struct DesignFilters {
    pub density: DensityFilter,
    pub sensitivity: SensitivityFilter,
}

impl DesignFilters {
    pub fn new(grid: GridSpec, config: &FilterConfig) -> Result<Self, FilterError> {
        let three_d = grid.is_3d();
        let density = match config.density_kind {
            DensityFilterKind::Gaussian => DensityFilter::Gaussian(GridFilter::new(
                grid,
                FilterKernel::gaussian(config.density_radius, config.sigma_ratio, three_d)?,
            )),
            DensityFilterKind::MorphClose => DensityFilter::Close {
                grid,
                kernel: FilterKernel::disk(config.density_radius, three_d)?,
            },
        };
        let r = config.sensitivity_radius;
        let sensitivity = match config.sensitivity_kind {
            SensitivityFilterKind::Gaussian => SensitivityFilter::Gaussian(GridFilter::new(
                grid,
                FilterKernel::gaussian(r, config.sigma_ratio, three_d)?,
            )),
            SensitivityFilterKind::CloseThenGaussian => {
                check_radius(r)?;
                SensitivityFilter::CloseThenGaussian {
                    grid,
                    disk: FilterKernel::disk(r.floor(), three_d)?,
                    residual: GridFilter::new(
                        grid,
                        FilterKernel::gaussian(r - r.floor(), config.sigma_ratio, three_d)?,
                    ),
                }
            }
        };
        Ok(Self { density, sensitivity })
    }
}

/// Chain rule through the density filter, then sensitivity smoothing.
pub fn filter_sensitivity(
    raw: &[f64],
    density: Option<(&DensityFilter, &FilteredDensity)>,
    sensitivity: &SensitivityFilter,
) -> Result<Vec<f64>, FilterError> {
    let design = match density {
        Some((filter, state)) => filter.chain(state, raw)?,
        None => raw.to_vec(),
    };
    sensitivity.apply(&design)
}
