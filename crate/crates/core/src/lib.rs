//! Density-based topology optimization by gradient projection.
//!
//! The crate provides structured-grid finite element analysis (Q4 and H8
//! elements), compliance and geometric-advantage objectives with analytic
//! sensitivities, neighbourhood filters, the active-set projection onto the
//! cone of volume-preserving directions, and two optimizers: the projected
//! gradient method with clipping and grey-element suppression, and the
//! optimality-criteria baseline.

// `!(v > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fea;
pub mod field;
pub mod filters;
pub mod grid;
pub mod model;
pub mod objectives;
pub mod optimizer;
pub mod projection;

pub use fea::{assemble, solve_equilibrium, FeaError, FeaSolution, FeaSystem, GlobalStiffness};
pub use field::{Bounds, DensityField};
pub use filters::{gaussian_filter, morph_close, DesignFilters, FilterError, FilterKernel, FilteredDensity};
pub use grid::GridSpec;
pub use model::{
    make_cantilever3d_problem, make_inverter_problem, make_mbb_problem, DensityFilterKind, FilterConfig,
    LoadCase, MaterialSpec, MechanismPorts, ModelError, ObjectiveKind, OcFilterKind, OptimizerConfig,
    PipelineOrder, ProblemDefinition, SensitivityFilterKind, SpringAttachment,
};
pub use objectives::{evaluate, GaIntermediates, ObjectiveError, ObjectiveEvaluation, ObjectiveSense};
pub use optimizer::{
    clip_gradient, grey_suppress, oc_update, run_egp, run_oc, ClipConfig, ConvergenceRecord, EgpOptimizer,
    IterationRecord, OcOptimizer, OcSettings, OptimizerError, RunResult, StepDiagnostics, StepOutcome,
    SuppressionConfig, SuppressionError, SuppressionStatus,
};
pub use projection::{
    build_m1, expand_active_set, max_step, project_active, project_dense, redundancy_fraction, ActiveSet, MaxStep,
    ProjectionError, SearchDirection,
};
