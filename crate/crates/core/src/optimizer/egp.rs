use std::time::Instant;

use thiserror::Error;

use super::{millis, ConvergenceRecord, IterationRecord, OptimizerError, RunResult};
use crate::fea::FeaSystem;
use crate::field::{Bounds, DensityField};
use crate::filters::{filter_sensitivity, DesignFilters, FilteredDensity};
use crate::model::{PipelineOrder, ProblemDefinition};
use crate::objectives::{evaluate, ObjectiveEvaluation};
use crate::projection::{expand_active_set, max_step, ProjectionError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub multiplier: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { multiplier: 5.0 }
    }
}

/// Clamps every component to `[-T, T]` with `T = multiplier * mean(|g|)`.
pub fn clip_gradient(g: &[f64], config: ClipConfig) -> (Vec<f64>, f64) {
    if g.is_empty() {
        return (Vec::new(), 0.0);
    }
    let mean = g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64;
    let t = config.multiplier * mean;
    (g.iter().map(|v| v.clamp(-t, t)).collect(), t)
}

/// Snap widths below the upper bound and above the lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionConfig {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SuppressionError {
    #[error("no intermediate elements left to absorb a volume residual of {residual:e}")]
    NoIntermediates { residual: f64 },
    #[error("volume redistribution did not settle")]
    NotSettled,
}

/// Snaps near-bound values onto the bounds, then shifts the remaining
/// intermediate values uniformly so the volume returns to target. An element
/// the shift would carry past a snap threshold is held at that threshold and
/// the remainder is spread over the others.
pub fn grey_suppress(
    x: &DensityField,
    bounds: Bounds,
    config: SuppressionConfig,
) -> Result<DensityField, SuppressionError> {
    let hi = bounds.upper - config.upper;
    let lo = bounds.lower + config.lower;
    let mut v = x.values().to_vec();
    let mut open = Vec::new();
    for (i, xi) in v.iter_mut().enumerate() {
        if *xi >= hi {
            *xi = bounds.upper;
        } else if *xi <= lo {
            *xi = bounds.lower;
        } else {
            open.push(i);
        }
    }
    let n = v.len();
    let target = x.target_volume();
    let tol = 1e-12 * n as f64 * bounds.width();
    for _ in 0..=n {
        let residual = target - v.iter().sum::<f64>();
        if open.is_empty() {
            if residual.abs() <= tol {
                break;
            }
            return Err(SuppressionError::NoIntermediates { residual });
        }
        let shift = residual / open.len() as f64;
        let mut clamped = false;
        open.retain(|&i| {
            let t = v[i] + shift;
            if t >= hi {
                v[i] = hi;
                clamped = true;
                false
            } else if t <= lo {
                v[i] = lo;
                clamped = true;
                false
            } else {
                v[i] = t;
                true
            }
        });
        if !clamped {
            return Ok(DensityField::from_values(x.grid(), v, x.volume_fraction()));
        }
    }
    let residual = target - v.iter().sum::<f64>();
    if residual.abs() <= tol {
        Ok(DensityField::from_values(x.grid(), v, x.volume_fraction()))
    } else {
        Err(SuppressionError::NotSettled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuppressionStatus {
    Applied,
    /// Suppression failed at the full step and succeeded at half of it.
    AppliedAtHalfStep,
    /// Suppression failed twice; the half step was taken unsuppressed.
    Skipped,
    /// No step was taken.
    NotRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub clip_threshold: f64,
    pub active_set_size: usize,
    pub expansions: usize,
    pub alpha: f64,
    pub suppression: SuppressionStatus,
    /// The projected direction vanished.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: DensityField,
    pub diagnostics: StepDiagnostics,
}

/// `x + alpha d` clamped to the bounds, with the blocking component placed
/// exactly on its bound.
fn take_step(x: &DensityField, d: &[f64], alpha: f64, blocking: Option<usize>, bounds: Bounds) -> DensityField {
    let mut v: Vec<f64> = x
        .values()
        .iter()
        .zip(d)
        .map(|(xi, di)| (xi + alpha * di).clamp(bounds.lower, bounds.upper))
        .collect();
    if let Some(j) = blocking {
        v[j] = if d[j] > 0.0 { bounds.upper } else { bounds.lower };
    }
    DensityField::from_values(x.grid(), v, x.volume_fraction())
}

/// Holds the per-problem state of a gradient-projection run.
pub struct EgpOptimizer<'a> {
    problem: &'a ProblemDefinition,
    system: FeaSystem,
    filters: DesignFilters,
    clip: ClipConfig,
    suppression: SuppressionConfig,
}

impl<'a> EgpOptimizer<'a> {
    pub fn new(problem: &'a ProblemDefinition) -> Result<Self, OptimizerError> {
        problem.validate()?;
        let system = FeaSystem::new(problem)?;
        let filters = DesignFilters::new(problem.grid, &problem.filters)?;
        let opt = &problem.optimizer;
        Ok(Self {
            problem,
            system,
            filters,
            clip: ClipConfig {
                multiplier: opt.clip_multiplier,
            },
            suppression: SuppressionConfig {
                upper: opt.upper_threshold,
                lower: opt.lower_threshold,
            },
        })
    }

    pub fn filters(&self) -> &DesignFilters {
        &self.filters
    }

    pub fn system(&self) -> &FeaSystem {
        &self.system
    }

    /// Physical densities of a design.
    pub fn filter_density(&self, x: &DensityField) -> Result<FilteredDensity, OptimizerError> {
        Ok(self.filters.density.forward(x.values())?)
    }

    /// FEA and objective on already filtered densities.
    pub fn evaluate_physical(
        &self,
        filtered: &FilteredDensity,
        iteration: usize,
    ) -> Result<ObjectiveEvaluation, OptimizerError> {
        let context = |source| OptimizerError::Fea { iteration, source };
        let sol = self
            .system
            .analyze(self.problem, &filtered.physical)
            .map_err(|e| context(e.into()))?;
        evaluate(self.problem, &self.system, &filtered.physical, &sol).map_err(context)
    }

    pub fn evaluate(&self, x: &DensityField) -> Result<(FilteredDensity, ObjectiveEvaluation), OptimizerError> {
        let filtered = self.filter_density(x)?;
        let eval = self.evaluate_physical(&filtered, 0)?;
        Ok((filtered, eval))
    }

    /// Design-space descent gradient after filtering and clipping, and the clip threshold.
    pub fn processed_gradient(
        &self,
        filtered: &FilteredDensity,
        eval: &ObjectiveEvaluation,
    ) -> Result<(Vec<f64>, f64), OptimizerError> {
        let raw = eval.descent_gradient();
        let density = Some((&self.filters.density, filtered));
        Ok(match self.problem.optimizer.pipeline_order {
            PipelineOrder::FilterThenClip => {
                let smooth = filter_sensitivity(&raw, density, &self.filters.sensitivity)?;
                clip_gradient(&smooth, self.clip)
            }
            PipelineOrder::ClipThenFilter => {
                let design = self.filters.density.chain(filtered, &raw)?;
                let (clipped, t) = clip_gradient(&design, self.clip);
                (self.filters.sensitivity.apply(&clipped)?, t)
            }
        })
    }

    /// One update: filter, clip, project, step to the bound, suppress grey values.
    pub fn step(
        &self,
        x: &DensityField,
        filtered: &FilteredDensity,
        eval: &ObjectiveEvaluation,
    ) -> Result<StepOutcome, OptimizerError> {
        let bounds = self.problem.bounds;
        let (g, clip_threshold) = self.processed_gradient(filtered, eval)?;
        // unit max-norm keeps the expansion tolerance relative; alpha absorbs the scale
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d: Vec<f64> = if scale > 0.0 {
            g.iter().map(|v| -v / scale).collect()
        } else {
            vec![0.0; g.len()]
        };
        let stationary = |expansions| StepOutcome {
            field: x.clone(),
            diagnostics: StepDiagnostics {
                clip_threshold,
                active_set_size: 0,
                expansions,
                alpha: 0.0,
                suppression: SuppressionStatus::NotRun,
                converged: true,
            },
        };
        let (active, dir) = match expand_active_set(&d, x.values(), bounds) {
            Ok(found) => found,
            Err(ProjectionError::Stationary { expansions }) => return Ok(stationary(expansions)),
            Err(e) => return Err(e.into()),
        };
        let step = match max_step(x.values(), &dir.d, bounds) {
            Ok(s) => s,
            Err(ProjectionError::Stationary { .. }) => return Ok(stationary(dir.iterations_used)),
            Err(e) => return Err(e.into()),
        };
        let full = take_step(x, &dir.d, step.alpha, Some(step.blocking), bounds);
        let (field, suppression) = match grey_suppress(&full, bounds, self.suppression) {
            Ok(f) => (f, SuppressionStatus::Applied),
            Err(_) => {
                let half = take_step(x, &dir.d, 0.5 * step.alpha, None, bounds);
                match grey_suppress(&half, bounds, self.suppression) {
                    Ok(f) => (f, SuppressionStatus::AppliedAtHalfStep),
                    Err(_) => (half, SuppressionStatus::Skipped),
                }
            }
        };
        Ok(StepOutcome {
            field,
            diagnostics: StepDiagnostics {
                clip_threshold,
                active_set_size: active.n_bound(),
                expansions: dir.iterations_used,
                alpha: step.alpha,
                suppression,
                converged: false,
            },
        })
    }

    /// Runs from the uniform design `x = f`.
    pub fn run(&self) -> Result<RunResult, OptimizerError> {
        let f = self.problem.volume_fraction;
        let x0 = DensityField::uniform(self.problem.grid, f, f);
        self.run_from(x0, self.problem.optimizer.max_iterations)
    }

    pub fn run_from(&self, mut x: DensityField, max_iterations: usize) -> Result<RunResult, OptimizerError> {
        let tol = self.problem.optimizer.stop_tolerance;
        let mut record = ConvergenceRecord::new();
        let mut converged = false;
        for iter in 0..max_iterations {
            let t = Instant::now();
            let filtered = self.filter_density(&x)?;
            let mut update = t.elapsed();

            let t = Instant::now();
            let eval = self.evaluate_physical(&filtered, iter)?;
            let fea = t.elapsed();

            let t = Instant::now();
            let outcome = self.step(&x, &filtered, &eval)?;
            update += t.elapsed();

            let change = x.max_abs_change(&outcome.field);
            let diag = &outcome.diagnostics;
            record.push(IterationRecord {
                iter,
                objective: eval.value,
                volume_fraction: outcome.field.volume() / outcome.field.len() as f64,
                max_change: change,
                clip_threshold: diag.clip_threshold,
                active_set_size: diag.active_set_size,
                alg1_expansions: diag.expansions,
                update_ms: millis(update),
                fea_ms: millis(fea),
            });
            let stop = diag.converged || change < tol;
            x = outcome.field;
            if stop {
                converged = true;
                break;
            }
        }
        let filtered = self.filter_density(&x)?;
        let final_objective = if record.is_empty() {
            None
        } else {
            Some(self.evaluate_physical(&filtered, record.len())?.value)
        };
        Ok(RunResult {
            design: x,
            physical: filtered.physical,
            record,
            converged,
            final_objective,
        })
    }
}

/// Gradient-projection optimization of `problem` from the uniform design.
pub fn run_egp(problem: &ProblemDefinition) -> Result<RunResult, OptimizerError> {
    EgpOptimizer::new(problem)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::make_mbb_problem;
    use proptest::prelude::*;

    fn field(values: &[f64], target: f64) -> DensityField {
        let grid = GridSpec::new_2d(values.len(), 1).unwrap();
        DensityField::from_values(grid, values.to_vec(), target / values.len() as f64)
    }

    const DELTA: SuppressionConfig = SuppressionConfig { upper: 0.3, lower: 0.3 };

    #[test]
    fn clip_examples() {
        let (c, t) = clip_gradient(&[-1.0, -1.0, -1.0, -1.0, -1.0, -45.0], ClipConfig::default());
        assert!((t - 5.0 * 50.0 / 6.0).abs() < 1e-12);
        assert!((c[5] + t).abs() < 1e-12);
        assert!(c[..5].iter().all(|&v| v == -1.0));
        let (u, _) = clip_gradient(&[2.5; 4], ClipConfig::default());
        assert_eq!(u, vec![2.5; 4]);
        assert_eq!(clip_gradient(&[0.0; 3], ClipConfig::default()), (vec![0.0; 3], 0.0));
    }

    #[test]
    fn suppression_examples() {
        let out = grey_suppress(&field(&[0.8, 0.5, 0.2], 1.5), Bounds::UNIT, DELTA).unwrap();
        assert_eq!(out.values(), &[1.0, 0.5, 0.0]);
        let out = grey_suppress(&field(&[0.95, 0.5, 0.1], 1.55), Bounds::UNIT, DELTA).unwrap();
        assert_eq!(out.values()[0], 1.0);
        assert!((out.values()[1] - 0.55).abs() < 1e-15);
        assert_eq!(out.values()[2], 0.0);
        let same = field(&[0.4, 0.5, 0.6], 1.5);
        assert_eq!(grey_suppress(&same, Bounds::UNIT, DELTA).unwrap().values(), same.values());
    }

    #[test]
    fn suppression_clamps_then_redistributes() {
        // shift of 0.15 would carry 0.6 past 0.7; it stops there and 0.4 takes the rest
        let out = grey_suppress(&field(&[0.6, 0.4, 0.0], 1.3), Bounds::UNIT, DELTA).unwrap();
        assert_eq!(out.values()[0], 0.7);
        assert!((out.values()[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn suppression_failure_without_intermediates() {
        let err = grey_suppress(&field(&[0.9, 0.1], 1.5), Bounds::UNIT, DELTA).unwrap_err();
        assert!(matches!(err, SuppressionError::NoIntermediates { .. }));
    }

    #[test]
    fn first_mbb_step_lowers_compliance() {
        let problem = make_mbb_problem(10, 4).unwrap();
        let opt = EgpOptimizer::new(&problem).unwrap();
        let x0 = DensityField::uniform(problem.grid, 0.5, 0.5);
        let (filtered, eval) = opt.evaluate(&x0).unwrap();
        let out = opt.step(&x0, &filtered, &eval).unwrap();
        assert!(!out.diagnostics.converged);
        assert!((out.field.volume() - 20.0).abs() < 1e-9 * 40.0);
        let (_, next) = opt.evaluate(&out.field).unwrap();
        assert!(next.value < eval.value, "{} !< {}", next.value, eval.value);
    }

    #[test]
    fn zero_budget_returns_uniform() {
        let problem = make_mbb_problem(6, 2).unwrap();
        let opt = EgpOptimizer::new(&problem).unwrap();
        let x0 = DensityField::uniform(problem.grid, 0.5, 0.5);
        let res = opt.run_from(x0.clone(), 0).unwrap();
        assert!(res.record.is_empty());
        assert_eq!(res.design.values(), x0.values());
        assert!(res.final_objective.is_none());
    }

    proptest! {
        #[test]
        fn clipping_is_positively_homogeneous(g in prop::collection::vec(-10.0f64..10.0, 1..40), c in 0.01f64..100.0) {
            let (a, ta) = clip_gradient(&g, ClipConfig::default());
            let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
            let (b, tb) = clip_gradient(&scaled, ClipConfig::default());
            prop_assert!((tb - c * ta).abs() <= 1e-12 * tb.abs().max(1.0));
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((q - c * p).abs() <= 1e-12 * q.abs().max(1.0));
            }
        }

        #[test]
        fn suppression_restores_volume(v in prop::collection::vec(0.0f64..=1.0, 2..40), frac in 0.2f64..0.8) {
            let n = v.len();
            let x = field(&v, frac * n as f64);
            if let Ok(out) = grey_suppress(&x, Bounds::UNIT, SuppressionConfig { upper: 0.2, lower: 0.2 }) {
                prop_assert!((out.volume() - frac * n as f64).abs() <= 1e-9 * n as f64);
                prop_assert!(out.within(Bounds::UNIT));
            }
        }
    }
}
