use std::time::Instant;

use super::{millis, ConvergenceRecord, IterationRecord, OptimizerError, RunResult};
use crate::fea::FeaSystem;
use crate::field::{Bounds, DensityField};
use crate::filters::{FilterKernel, GridFilter};
use crate::model::{ObjectiveKind, OcFilterKind, ProblemDefinition};
use crate::objectives::compliance_with_sensitivity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcSettings {
    pub move_limit: f64,
    /// Exponent applied to the optimality ratio.
    pub damping: f64,
    pub bounds: Bounds,
    /// Accepted `|volume - target|`, absolute.
    pub volume_tolerance: f64,
}

const MAX_BISECTIONS: usize = 400;

/// Optimality-criteria update `x_e B_e^eta` within the move limit, with the
/// multiplier found by bisection so that `sum(dv .* x_new)` hits `target_volume`.
pub fn oc_update(
    x: &[f64],
    dc: &[f64],
    dv: &[f64],
    target_volume: f64,
    settings: &OcSettings,
) -> Result<Vec<f64>, OptimizerError> {
    if let Some((index, &value)) = dc.iter().enumerate().find(|(_, v)| **v > 0.0) {
        return Err(OptimizerError::PositiveGradient { index, value });
    }
    let b = settings.bounds;
    let m = settings.move_limit;
    let candidate = |lambda: f64, out: &mut Vec<f64>| -> f64 {
        out.clear();
        let mut vol = 0.0;
        for ((&xe, &ce), &ve) in x.iter().zip(dc).zip(dv) {
            let ratio = (-ce / ve / lambda).powf(settings.damping);
            let v = (xe * ratio).min(xe + m).min(b.upper).max(xe - m).max(b.lower);
            vol += ve * v;
            out.push(v);
        }
        vol
    };
    let mut buf = Vec::with_capacity(x.len());
    if candidate(f64::INFINITY, &mut buf) > target_volume + settings.volume_tolerance
        || candidate(0.0, &mut buf) < target_volume - settings.volume_tolerance
    {
        return Err(OptimizerError::Bracket);
    }
    let (mut l1, mut l2) = (0.0, 1e9);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (l1 + l2);
        let vol = candidate(mid, &mut buf);
        if (vol - target_volume).abs() <= settings.volume_tolerance {
            return Ok(buf);
        }
        if vol > target_volume {
            l1 = mid;
        } else {
            l2 = mid;
        }
    }
    Err(OptimizerError::Bracket)
}

/// The 88-line optimality-criteria loop with its cone filter.
pub struct OcOptimizer<'a> {
    problem: &'a ProblemDefinition,
    system: FeaSystem,
    filter: GridFilter,
    settings: OcSettings,
}

impl<'a> OcOptimizer<'a> {
    pub fn new(problem: &'a ProblemDefinition) -> Result<Self, OptimizerError> {
        problem.validate()?;
        if problem.objective != ObjectiveKind::MinCompliance {
            return Err(OptimizerError::OcObjective);
        }
        let system = FeaSystem::new(problem)?;
        let kernel = FilterKernel::cone(problem.filters.oc_radius, problem.grid.is_3d())?;
        let filter = GridFilter::new(problem.grid, kernel);
        let n = problem.n_elements() as f64;
        Ok(Self {
            problem,
            system,
            filter,
            settings: OcSettings {
                move_limit: problem.optimizer.oc_move_limit,
                damping: problem.optimizer.oc_damping,
                bounds: problem.bounds,
                volume_tolerance: 1e-10 * n,
            },
        })
    }

    fn physical(&self, x: &DensityField) -> Result<Vec<f64>, OptimizerError> {
        Ok(match self.problem.filters.oc_kind {
            OcFilterKind::Sensitivity => x.values().to_vec(),
            OcFilterKind::Density => self.filter.apply(x.values())?,
        })
    }

    fn compliance(&self, phys: &[f64], iteration: usize) -> Result<(f64, Vec<f64>), OptimizerError> {
        let context = |source| OptimizerError::Fea { iteration, source };
        let sol = self
            .system
            .analyze(self.problem, phys)
            .map_err(|e| context(e.into()))?;
        let eval = compliance_with_sensitivity(self.problem, &self.system, phys, &sol).map_err(context)?;
        Ok((eval.value, eval.gradient))
    }

    pub fn run(&self) -> Result<RunResult, OptimizerError> {
        let f = self.problem.volume_fraction;
        let mut x = DensityField::uniform(self.problem.grid, f, f);
        let tol = self.problem.optimizer.stop_tolerance;
        let target = x.target_volume();
        let mut record = ConvergenceRecord::new();
        let mut converged = false;
        for iter in 0..self.problem.optimizer.max_iterations {
            let t = Instant::now();
            let phys = self.physical(&x)?;
            let mut update = t.elapsed();

            let t = Instant::now();
            let (c, dc) = self.compliance(&phys, iter)?;
            let fea = t.elapsed();

            let t = Instant::now();
            let (dc, dv) = match self.problem.filters.oc_kind {
                OcFilterKind::Sensitivity => (
                    self.filter.weighted_sensitivity(x.values(), &dc)?,
                    vec![1.0; x.len()],
                ),
                OcFilterKind::Density => (
                    self.filter.apply_transpose(&dc)?,
                    self.filter.apply_transpose(&vec![1.0; x.len()])?,
                ),
            };
            let xnew = oc_update(x.values(), &dc, &dv, target, &self.settings)?;
            let next = DensityField::from_values(x.grid(), xnew, f);
            update += t.elapsed();

            let change = x.max_abs_change(&next);
            let next_phys_volume = match self.problem.filters.oc_kind {
                OcFilterKind::Sensitivity => next.volume(),
                OcFilterKind::Density => next.values().iter().zip(&dv).map(|(a, b)| a * b).sum(),
            };
            record.push(IterationRecord {
                iter,
                objective: c,
                volume_fraction: next_phys_volume / next.len() as f64,
                max_change: change,
                clip_threshold: 0.0,
                active_set_size: 0,
                alg1_expansions: 0,
                update_ms: millis(update),
                fea_ms: millis(fea),
            });
            x = next;
            if change < tol {
                converged = true;
                break;
            }
        }
        let physical = self.physical(&x)?;
        let final_objective = if record.is_empty() {
            None
        } else {
            Some(self.compliance(&physical, record.len())?.0)
        };
        Ok(RunResult {
            design: x,
            physical,
            record,
            converged,
            final_objective,
        })
    }
}

/// Optimality-criteria baseline from the uniform design.
pub fn run_oc(problem: &ProblemDefinition) -> Result<RunResult, OptimizerError> {
    OcOptimizer::new(problem)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(n: usize) -> OcSettings {
        OcSettings {
            move_limit: 0.2,
            damping: 0.5,
            bounds: Bounds::UNIT,
            volume_tolerance: 1e-9 * n as f64,
        }
    }

    #[test]
    fn uniform_gradient_keeps_uniform_design() {
        let x = vec![0.4; 10];
        let out = oc_update(&x, &[-3.0; 10], &[1.0; 10], 4.0, &settings(10)).unwrap();
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-9));
    }

    #[test]
    fn volume_hits_target() {
        let x: Vec<f64> = (0..20).map(|i| 0.2 + 0.03 * i as f64).collect();
        let dc: Vec<f64> = (0..20).map(|i| -1.0 - ((i * 7) % 5) as f64).collect();
        let target: f64 = x.iter().sum();
        let out = oc_update(&x, &dc, &[1.0; 20], target, &settings(20)).unwrap();
        assert!((out.iter().sum::<f64>() - target).abs() <= 1e-9 * 20.0);
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() <= 0.2 + 1e-15);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn rejects_positive_gradient() {
        let err = oc_update(&[0.5; 2], &[-1.0, 2.0], &[1.0; 2], 1.0, &settings(2)).unwrap_err();
        assert!(matches!(err, OptimizerError::PositiveGradient { index: 1, .. }));
    }

    #[test]
    fn unreachable_volume_is_not_bracketed() {
        // the move limit caps growth at 0.3 per element
        let err = oc_update(&[0.1; 4], &[-1.0; 4], &[1.0; 4], 3.0, &settings(4)).unwrap_err();
        assert!(matches!(err, OptimizerError::Bracket));
    }

    #[test]
    fn oc_rejects_mechanisms() {
        let p = crate::model::make_inverter_problem(8, 8).unwrap();
        assert!(matches!(OcOptimizer::new(&p), Err(OptimizerError::OcObjective)));
    }
}
