//! Problem definitions and the three benchmark presets (MBB beam, force
//! inverter, 3D cantilever).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Bounds;
use crate::grid::GridSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("degenerate grid {nx}x{ny}x{nz}")]
    DegenerateGrid { nx: usize, ny: usize, nz: usize },
    #[error("{preset} preset needs at least {min} elements along {axis}, got {got}")]
    TooSmall {
        preset: &'static str,
        axis: &'static str,
        min: usize,
        got: usize,
    },
    #[error("invalid material: {0}")]
    Material(String),
    #[error("invalid load case {index}: {reason}")]
    LoadCase { index: usize, reason: String },
    #[error("invalid problem: {0}")]
    Problem(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Isotropic linear material with SIMP interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSpec {
    pub young_modulus_solid: f64,
    pub young_modulus_void: f64,
    pub poisson_ratio: f64,
    pub penalization: f64,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self {
            young_modulus_solid: 1.0,
            young_modulus_void: 1e-9,
            poisson_ratio: 0.3,
            penalization: 3.0,
        }
    }
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let Self {
            young_modulus_solid: e0,
            young_modulus_void: emin,
            poisson_ratio: nu,
            penalization: r,
        } = *self;
        if !(e0 > emin && emin > 0.0) {
            return Err(ModelError::Material(format!(
                "need E0 > E_min > 0, got E0 = {e0}, E_min = {emin}"
            )));
        }
        if !(nu > 0.0 && nu < 0.5) {
            return Err(ModelError::Material(format!(
                "poisson ratio {nu} outside (0, 0.5)"
            )));
        }
        if !(r >= 1.0) {
            return Err(ModelError::Material(format!("penalization {r} < 1")));
        }
        Ok(())
    }

    /// `E0 - E_min`, the range scaled by `x^r`.
    #[inline]
    pub fn modulus_range(&self) -> f64 {
        self.young_modulus_solid - self.young_modulus_void
    }
}

/// One right-hand side with its Dirichlet set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    /// Sparse nodal forces as `(dof, magnitude)`.
    pub forces: Vec<(usize, f64)>,
    /// Constrained dofs, sorted and deduplicated.
    pub fixed_dofs: Vec<usize>,
}

impl LoadCase {
    pub fn new(forces: Vec<(usize, f64)>, mut fixed_dofs: Vec<usize>) -> Self {
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        Self { forces, fixed_dofs }
    }

    /// Dense force vector of length `n_dofs`; repeated dofs accumulate.
    pub fn force_vector(&self, n_dofs: usize) -> Vec<f64> {
        let mut f = vec![0.0; n_dofs];
        for &(dof, v) in &self.forces {
            f[dof] += v;
        }
        f
    }

    fn validate(&self, index: usize, n_dofs: usize, allow_zero_load: bool) -> Result<(), ModelError> {
        let err = |reason: String| ModelError::LoadCase { index, reason };
        if self.fixed_dofs.is_empty() {
            return Err(err("no fixed dofs, rigid-body modes remain".into()));
        }
        if self.fixed_dofs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err("fixed dofs not sorted/unique".into()));
        }
        if let Some(&d) = self.fixed_dofs.last().filter(|&&d| d >= n_dofs) {
            return Err(err(format!("fixed dof {d} out of range")));
        }
        let mut loaded_free = false;
        for &(dof, v) in &self.forces {
            if dof >= n_dofs {
                return Err(err(format!("force dof {dof} out of range")));
            }
            if v != 0.0 && self.fixed_dofs.binary_search(&dof).is_err() {
                loaded_free = true;
            }
        }
        if !loaded_free && !allow_zero_load {
            return Err(err("no nonzero force on a free dof".into()));
        }
        Ok(())
    }
}

/// Linear spring from a dof to ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringAttachment {
    pub dof: usize,
    pub stiffness: f64,
}

/// Input/output ports of a compliant mechanism.
///
/// The output spring `k_o` enters the geometric advantage analytically and is
/// *not* assembled into the stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismPorts {
    pub input_dof: usize,
    pub output_dof: usize,
    /// Magnitude `F_i` of the actuating force.
    pub input_force: f64,
    /// Magnitude `F_o` of the dummy output load.
    pub output_force: f64,
    /// Output spring stiffness `k_o`.
    pub output_spring: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    MinCompliance,
    MaxGeometricAdvantage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityFilterKind {
    Gaussian,
    MorphClose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityFilterKind {
    Gaussian,
    /// Disk close of radius `floor(r)` followed by a Gaussian of radius `r - floor(r)`.
    CloseThenGaussian,
}

/// Which 88-line filter the OC baseline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcFilterKind {
    Sensitivity,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub density_kind: DensityFilterKind,
    pub density_radius: f64,
    pub sensitivity_kind: SensitivityFilterKind,
    pub sensitivity_radius: f64,
    /// Gaussian `sigma = sigma_ratio * r_min`; the kernel is truncated at `r_min`.
    pub sigma_ratio: f64,
    /// Cone filter radius of the OC baseline.
    pub oc_radius: f64,
    pub oc_kind: OcFilterKind,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            density_kind: DensityFilterKind::Gaussian,
            density_radius: 1.1,
            sensitivity_kind: SensitivityFilterKind::Gaussian,
            sensitivity_radius: 0.55,
            sigma_ratio: 0.5,
            oc_radius: 2.4,
            oc_kind: OcFilterKind::Sensitivity,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, r) in [
            ("density_radius", self.density_radius),
            ("sensitivity_radius", self.sensitivity_radius),
            ("oc_radius", self.oc_radius),
        ] {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(ModelError::Config(format!("{name} = {r} must be >= 0")));
            }
        }
        if !(self.sigma_ratio > 0.0) {
            return Err(ModelError::Config(format!(
                "sigma_ratio = {} must be > 0",
                self.sigma_ratio
            )));
        }
        Ok(())
    }
}

/// Order of sensitivity filtering and clipping in the EGP pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineOrder {
    FilterThenClip,
    ClipThenFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Clip threshold multiplier `kappa` (`T = kappa * mean|g|`).
    pub clip_multiplier: f64,
    /// Upper snap width `Delta1`: `x >= x_max - Delta1` snaps to `x_max`.
    pub upper_threshold: f64,
    /// Lower snap width `Delta2`: `x <= x_min + Delta2` snaps to `x_min`.
    pub lower_threshold: f64,
    pub max_iterations: usize,
    /// Stop once `max |x_{k+1} - x_k|` drops below this.
    pub stop_tolerance: f64,
    pub pipeline_order: PipelineOrder,
    pub oc_move_limit: f64,
    pub oc_damping: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            clip_multiplier: 5.0,
            upper_threshold: 0.3,
            lower_threshold: 0.3,
            max_iterations: 200,
            stop_tolerance: 0.01,
            pipeline_order: PipelineOrder::FilterThenClip,
            oc_move_limit: 0.2,
            oc_damping: 0.5,
        }
    }
}

impl OptimizerConfig {
    /// Largest admissible snap width for volume fraction `f`: `min(0.3, 0.75 f)`.
    pub fn threshold_cap(volume_fraction: f64) -> f64 {
        0.3_f64.min(0.75 * volume_fraction)
    }

    pub fn validate(&self, volume_fraction: f64) -> Result<(), ModelError> {
        if !(self.clip_multiplier > 0.0) {
            return Err(ModelError::Config(format!(
                "clip_multiplier = {} must be > 0",
                self.clip_multiplier
            )));
        }
        let cap = Self::threshold_cap(volume_fraction);
        for (name, v) in [
            ("upper_threshold", self.upper_threshold),
            ("lower_threshold", self.lower_threshold),
        ] {
            // small slack so that 0.75 * 0.2 = 0.15 passes despite rounding
            if !(v >= 0.0) || v > cap + 1e-12 {
                return Err(ModelError::Config(format!(
                    "{name} = {v} outside [0, {cap}] for volume fraction {volume_fraction}"
                )));
            }
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(ModelError::Config("stop_tolerance must be >= 0".into()));
        }
        if !(self.oc_move_limit > 0.0) || !(self.oc_damping > 0.0) {
            return Err(ModelError::Config(
                "oc_move_limit and oc_damping must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A complete optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDefinition {
    pub name: String,
    pub grid: GridSpec,
    pub material: MaterialSpec,
    pub load_cases: Vec<LoadCase>,
    /// Springs assembled into the global stiffness matrix.
    pub springs: Vec<SpringAttachment>,
    pub volume_fraction: f64,
    pub bounds: Bounds,
    pub objective: ObjectiveKind,
    pub ports: Option<MechanismPorts>,
    pub filters: FilterConfig,
    pub optimizer: OptimizerConfig,
}

impl ProblemDefinition {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.material.validate()?;
        self.filters.validate()?;
        self.optimizer.validate(self.volume_fraction)?;
        let f = self.volume_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(ModelError::Problem(format!("volume fraction {f} outside (0, 1)")));
        }
        if self.bounds != Bounds::UNIT {
            return Err(ModelError::Problem("design bounds must be [0, 1]".into()));
        }
        let n_dofs = self.grid.n_dofs();
        for s in &self.springs {
            if s.dof >= n_dofs || !(s.stiffness >= 0.0) {
                return Err(ModelError::Problem(format!("invalid spring {s:?}")));
            }
        }
        match self.objective {
            ObjectiveKind::MinCompliance => {
                if self.load_cases.len() != 1 {
                    return Err(ModelError::Problem(format!(
                        "minimum compliance needs exactly 1 load case, got {}",
                        self.load_cases.len()
                    )));
                }
            }
            ObjectiveKind::MaxGeometricAdvantage => {
                if self.load_cases.len() != 2 {
                    return Err(ModelError::Problem(format!(
                        "geometric advantage needs exactly 2 load cases, got {}",
                        self.load_cases.len()
                    )));
                }
                let ports = self.ports.ok_or_else(|| {
                    ModelError::Problem("geometric advantage needs input/output ports".into())
                })?;
                if ports.input_dof >= n_dofs || ports.output_dof >= n_dofs {
                    return Err(ModelError::Problem("port dof out of range".into()));
                }
                if !(ports.input_force > 0.0 && ports.output_force > 0.0 && ports.output_spring >= 0.0)
                {
                    return Err(ModelError::Problem(format!("invalid port values {ports:?}")));
                }
            }
        }
        for (i, lc) in self.load_cases.iter().enumerate() {
            lc.validate(i, n_dofs, false)?;
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.grid.n_elements()
    }
}

fn require(preset: &'static str, axis: &'static str, min: usize, got: usize) -> Result<(), ModelError> {
    if got < min {
        Err(ModelError::TooSmall {
            preset,
            axis,
            min,
            got,
        })
    } else {
        Ok(())
    }
}

/// Half MBB beam: symmetry on the left edge, roller at the bottom-right
/// corner, unit downward load at the top-left corner.
pub fn make_mbb_problem(nx: usize, ny: usize) -> Result<ProblemDefinition, ModelError> {
    require("mbb", "x", 4, nx)?;
    require("mbb", "y", 2, ny)?;
    let grid = GridSpec::new_2d(nx, ny)?;
    let mut fixed: Vec<usize> = (0..=ny).map(|iy| grid.dof(0, iy, 0, 0)).collect();
    fixed.push(grid.dof(nx, ny, 0, 1));
    let load = LoadCase::new(vec![(grid.dof(0, 0, 0, 1), -1.0)], fixed);
    let problem = ProblemDefinition {
        name: "mbb".into(),
        grid,
        material: MaterialSpec::default(),
        load_cases: vec![load],
        springs: Vec::new(),
        volume_fraction: 0.5,
        bounds: Bounds::UNIT,
        objective: ObjectiveKind::MinCompliance,
        ports: None,
        filters: FilterConfig::default(),
        optimizer: OptimizerConfig::default(),
    };
    problem.validate()?;
    Ok(problem)
}

/// Nodes per left-edge corner whose dofs are clamped in the inverter preset.
pub const INVERTER_CORNER_NODES: usize = 2;

/// Full-domain force inverter: input force pushing right at the left-edge
/// midpoint, output port (spring `k_o`, dummy load pointing left) at the
/// right-edge midpoint, clamped corner regions on the left edge.
pub fn make_inverter_problem(nx: usize, ny: usize) -> Result<ProblemDefinition, ModelError> {
    require("inverter", "x", 4, nx)?;
    require("inverter", "y", 4, ny)?;
    let grid = GridSpec::new_2d(nx, ny)?;
    let mid = ny / 2;
    let input_dof = grid.dof(0, mid, 0, 0);
    let output_dof = grid.dof(nx, mid, 0, 0);
    let mut fixed = Vec::new();
    for k in 0..INVERTER_CORNER_NODES {
        for iy in [k, ny - k] {
            fixed.push(grid.dof(0, iy, 0, 0));
            fixed.push(grid.dof(0, iy, 0, 1));
        }
    }
    let ports = MechanismPorts {
        input_dof,
        output_dof,
        input_force: 1.0,
        output_force: 1.0,
        output_spring: 0.1,
    };
    let input_case = LoadCase::new(vec![(input_dof, ports.input_force)], fixed.clone());
    // the desired output motion is to the left
    let dummy_case = LoadCase::new(vec![(output_dof, -ports.output_force)], fixed);
    let problem = ProblemDefinition {
        name: "inverter".into(),
        grid,
        material: MaterialSpec::default(),
        load_cases: vec![input_case, dummy_case],
        springs: Vec::new(),
        volume_fraction: 0.2,
        bounds: Bounds::UNIT,
        objective: ObjectiveKind::MaxGeometricAdvantage,
        ports: Some(ports),
        filters: FilterConfig {
            // a one-element density radius lets the first clipped steps cut
            // the input port loose
            density_kind: DensityFilterKind::Gaussian,
            density_radius: 2.0,
            sensitivity_kind: SensitivityFilterKind::Gaussian,
            sensitivity_radius: 1.84,
            ..FilterConfig::default()
        },
        optimizer: OptimizerConfig {
            upper_threshold: 0.15,
            lower_threshold: 0.15,
            ..OptimizerConfig::default()
        },
    };
    problem.validate()?;
    Ok(problem)
}

/// 3D cantilever clamped on the `x = 0` face with a unit total downward load
/// spread over the lower edge of the free end.
pub fn make_cantilever3d_problem(
    nx: usize,
    ny: usize,
    nz: usize,
) -> Result<ProblemDefinition, ModelError> {
    require("cantilever3d", "x", 2, nx)?;
    require("cantilever3d", "y", 2, ny)?;
    require("cantilever3d", "z", 2, nz)?;
    let grid = GridSpec::new_3d(nx, ny, nz)?;
    let mut fixed = Vec::with_capacity(3 * (ny + 1) * (nz + 1));
    for iz in 0..=nz {
        for iy in 0..=ny {
            for axis in 0..3 {
                fixed.push(grid.dof(0, iy, iz, axis));
            }
        }
    }
    let per_node = -1.0 / (nz + 1) as f64;
    let forces = (0..=nz).map(|iz| (grid.dof(nx, ny, iz, 1), per_node)).collect();
    let problem = ProblemDefinition {
        name: "cantilever3d".into(),
        grid,
        material: MaterialSpec::default(),
        load_cases: vec![LoadCase::new(forces, fixed)],
        springs: Vec::new(),
        volume_fraction: 0.3,
        bounds: Bounds::UNIT,
        objective: ObjectiveKind::MinCompliance,
        ports: None,
        // the baseline uses the density-filtered 3D optimality-criteria code
        filters: FilterConfig {
            density_radius: 1.0,
            sensitivity_radius: 1.0,
            oc_radius: 1.5,
            oc_kind: OcFilterKind::Density,
            ..FilterConfig::default()
        },
        // wider snap bands cut thin members on coarse meshes
        optimizer: OptimizerConfig {
            upper_threshold: 0.05,
            lower_threshold: 0.05,
            ..OptimizerConfig::default()
        },
    };
    problem.validate()?;
    Ok(problem)
}
