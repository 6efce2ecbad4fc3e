//! Optimization loops: the gradient-projection method with clipping and grey
//! suppression, and the optimality-criteria baseline.

mod egp;
mod oc;

use std::time::Duration;

use thiserror::Error;

use crate::fea::FeaError;
use crate::field::DensityField;
use crate::filters::FilterError;
use crate::model::ModelError;
use crate::objectives::ObjectiveError;
use crate::projection::ProjectionError;

pub use egp::{
    clip_gradient, grey_suppress, run_egp, ClipConfig, EgpOptimizer, StepDiagnostics, StepOutcome,
    SuppressionConfig, SuppressionError, SuppressionStatus,
};
pub use oc::{oc_update, run_oc, OcOptimizer, OcSettings};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("iteration {iteration}: {source}")]
    Fea {
        iteration: usize,
        #[source]
        source: ObjectiveError,
    },
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("optimality criteria update needs a nonpositive gradient, element {index} has {value}")]
    PositiveGradient { index: usize, value: f64 },
    #[error("optimality criteria multiplier could not be bracketed")]
    Bracket,
    #[error("optimality criteria baseline supports compliance problems only")]
    OcObjective,
}

impl From<FeaError> for OptimizerError {
    fn from(e: FeaError) -> Self {
        OptimizerError::Objective(e.into())
    }
}

/// One row of the convergence history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Objective of the design entering this iteration, in its natural sense.
    pub objective: f64,
    /// Volume fraction of the design leaving this iteration.
    pub volume_fraction: f64,
    pub max_change: f64,
    pub clip_threshold: f64,
    /// Pinned bound constraints (excluding the volume row).
    pub active_set_size: usize,
    pub alg1_expansions: usize,
    /// Wall time of the design update, FEA excluded.
    pub update_ms: f64,
    /// Wall time of assembly, solve and sensitivity evaluation.
    pub fea_ms: f64,
}

/// Append-only history of an optimization run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    rows: Vec<IterationRecord>,
}

impl ConvergenceRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// If `row.iter` does not exceed the last recorded iteration.
    pub fn push(&mut self, row: IterationRecord) {
        if let Some(last) = self.rows.last() {
            assert!(row.iter > last.iter, "iterations must increase");
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[IterationRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// First iteration whose objective lies within `rel` of `target`.
    pub fn iterations_to_within(&self, target: f64, rel: f64) -> Option<usize> {
        self.rows
            .iter()
            .position(|r| (r.objective - target).abs() <= rel * target.abs())
            .map(|i| self.rows[i].iter)
    }

    pub fn total_update_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.update_ms).sum()
    }

    pub fn total_fea_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.fea_ms).sum()
    }
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Design variables.
    pub design: DensityField,
    /// Densities seen by the finite element model.
    pub physical: Vec<f64>,
    pub record: ConvergenceRecord,
    pub converged: bool,
    /// Objective of the final design in its natural sense (`None` for an empty run).
    pub final_objective: Option<f64>,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.record.len()
    }
}

pub(crate) fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}
