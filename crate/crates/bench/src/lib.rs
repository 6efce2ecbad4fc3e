//! Fixtures shared by the benchmarks.

use egp_core::{DensityField, EgpOptimizer, ProblemDefinition};

/// Design after `iterations` gradient-projection updates from the uniform
/// start, so that benchmarks see a realistic mix of pinned and free elements.
pub fn design_after(problem: &ProblemDefinition, iterations: usize) -> DensityField {
    let opt = EgpOptimizer::new(problem).expect("valid problem");
    let f = problem.volume_fraction;
    let mut x = DensityField::uniform(problem.grid, f, f);
    for _ in 0..iterations {
        let (filtered, eval) = opt.evaluate(&x).expect("analysis succeeds");
        let out = opt.step(&x, &filtered, &eval).expect("step succeeds");
        if out.diagnostics.converged {
            break;
        }
        x = out.field;
    }
    x
}
