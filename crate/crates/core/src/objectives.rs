//! Objective values and design sensitivities: SIMP compliance, the
//! geometric advantage of a compliant mechanism, and a central finite
//! difference gradient check.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fea::{density_fingerprint, FeaError, FeaSolution, FeaSystem};
use crate::model::{MaterialSpec, ObjectiveKind, ProblemDefinition};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("density {0} outside [0, 1]")]
    DensityOutOfRange(f64),
    #[error("solution was computed for a different density field")]
    StaleSolution,
    #[error("problem has {got} solved load cases, objective needs {needed}")]
    MissingLoadCase { needed: usize, got: usize },
    #[error("problem has no mechanism ports")]
    MissingPorts,
    #[error("geometric advantage denominator vanished (degenerate structure)")]
    DegenerateMechanism,
    #[error("finite difference step {h:e} lost precision to cancellation")]
    Cancellation { h: f64 },
    #[error("design point is closer than 2h to a bound")]
    NotInterior,
    #[error(transparent)]
    Fea(#[from] FeaError),
}

/// SIMP modulus `E_min + x^r (E0 - E_min)`.
pub fn simp_modulus(x: f64, material: &MaterialSpec) -> Result<f64, ObjectiveError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(ObjectiveError::DensityOutOfRange(x));
    }
    Ok(simp_modulus_unchecked(x, material))
}

#[inline]
pub(crate) fn simp_modulus_unchecked(x: f64, material: &MaterialSpec) -> f64 {
    material.young_modulus_void + x.powf(material.penalization) * material.modulus_range()
}

/// `dE/dx = r x^(r-1) (E0 - E_min)`.
#[inline]
fn simp_modulus_derivative(x: f64, material: &MaterialSpec) -> f64 {
    let r = material.penalization;
    r * x.powf(r - 1.0) * material.modulus_range()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSense {
    Minimize,
    Maximize,
}

/// Objective value with its gradient with respect to the analysed densities.
#[derive(Debug, Clone)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Per-element `u_e^T K_e u_e` (first load case) for diagnostics.
    pub element_energies: Vec<f64>,
    pub sense: ObjectiveSense,
    pub mechanism: Option<GaIntermediates>,
}

impl ObjectiveEvaluation {
    /// Gradient of the quantity to *minimize*.
    pub fn descent_gradient(&self) -> Vec<f64> {
        match self.sense {
            ObjectiveSense::Minimize => self.gradient.clone(),
            ObjectiveSense::Maximize => self.gradient.iter().map(|g| -g).collect(),
        }
    }

    /// Value of the quantity to minimize.
    pub fn minimized_value(&self) -> f64 {
        match self.sense {
            ObjectiveSense::Minimize => self.value,
            ObjectiveSense::Maximize => -self.value,
        }
    }
}

/// Mutual energy ratios `Delta_ij = u_i^T K u_j / F_i` of the mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaIntermediates {
    pub d11: f64,
    pub d12: f64,
    pub d21: f64,
    pub d22: f64,
    pub output_spring: f64,
    pub output_force: f64,
    pub input_force: f64,
}

impl GaIntermediates {
    fn denominator(&self) -> f64 {
        let k = self.output_spring;
        self.output_force * self.d11 + self.d11 * self.d22 * k - self.d21 * self.d12 * k
    }

    pub fn geometric_advantage(&self) -> f64 {
        self.output_force * self.d21 / self.denominator()
    }
}

fn element_local(u: &[f64], dofs: &[usize], out: &mut [f64]) {
    for (o, &d) in out.iter_mut().zip(dofs) {
        *o = u[d];
    }
}

fn check_solution(x: &[f64], sol: &FeaSolution, needed: usize) -> Result<(), ObjectiveError> {
    if sol.density_fingerprint != density_fingerprint(x) {
        return Err(ObjectiveError::StaleSolution);
    }
    if sol.displacements.len() < needed {
        return Err(ObjectiveError::MissingLoadCase {
            needed,
            got: sol.displacements.len(),
        });
    }
    Ok(())
}

/// Compliance `F . U` and `dC/dx_e = -E'(x_e) u_e^T K_e u_e`.
pub fn compliance_with_sensitivity(
    problem: &ProblemDefinition,
    system: &FeaSystem,
    x: &[f64],
    sol: &FeaSolution,
) -> Result<ObjectiveEvaluation, ObjectiveError> {
    check_solution(x, sol, 1)?;
    let grid = problem.grid;
    let u = &sol.displacements[0];
    let f = problem.load_cases[0].force_vector(grid.n_dofs());
    let value: f64 = f.iter().zip(u).map(|(a, b)| a * b).sum();

    let per = grid.dofs_per_element();
    let ke = system.element();
    let mut ue = vec![0.0; per];
    let mut energies = Vec::with_capacity(x.len());
    let mut gradient = Vec::with_capacity(x.len());
    for (dofs, &xe) in system.connectivity().chunks_exact(per).zip(x) {
        element_local(u, dofs, &mut ue);
        let energy = ke.bilinear(&ue, &ue);
        energies.push(energy);
        gradient.push(-simp_modulus_derivative(xe, &problem.material) * energy);
    }
    Ok(ObjectiveEvaluation {
        value,
        gradient,
        element_energies: energies,
        sense: ObjectiveSense::Minimize,
        mechanism: None,
    })
}

/// Geometric advantage `G_A = F_o D21 / (F_o D11 + k_o (D11 D22 - D21 D12))`
/// and its gradient by the quotient rule.
///
/// `u1` is the response to the input force alone, `u2` to the dummy output
/// load alone; the output spring enters only through `k_o`.
pub fn geometric_advantage_with_sensitivity(
    problem: &ProblemDefinition,
    system: &FeaSystem,
    x: &[f64],
    sol: &FeaSolution,
) -> Result<ObjectiveEvaluation, ObjectiveError> {
    check_solution(x, sol, 2)?;
    let ports = problem.ports.ok_or(ObjectiveError::MissingPorts)?;
    let grid = problem.grid;
    let n_dofs = grid.n_dofs();
    let (u1, u2) = (&sol.displacements[0], &sol.displacements[1]);
    let f1 = problem.load_cases[0].force_vector(n_dofs);
    let f2 = problem.load_cases[1].force_vector(n_dofs);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let (fi, fo) = (ports.input_force, ports.output_force);
    // u_i^T K u_j = u_i^T f_j, normalised by the load of case i
    let ga = GaIntermediates {
        d11: dot(u1, &f1) / fi,
        d12: dot(u1, &f2) / fi,
        d21: dot(u2, &f1) / fo,
        d22: dot(u2, &f2) / fo,
        output_spring: ports.output_spring,
        output_force: ports.output_force,
        input_force: fi,
    };
    let den = ga.denominator();
    if den.abs() <= f64::EPSILON * (ga.output_force * ga.d11).abs() || !den.is_finite() {
        return Err(ObjectiveError::DegenerateMechanism);
    }
    let num = ga.output_force * ga.d21;
    let value = num / den;

    let per = grid.dofs_per_element();
    let ke = system.element();
    let (mut a, mut b) = (vec![0.0; per], vec![0.0; per]);
    let k = ga.output_spring;
    let mut gradient = Vec::with_capacity(x.len());
    let mut energies = Vec::with_capacity(x.len());
    for (dofs, &xe) in system.connectivity().chunks_exact(per).zip(x) {
        element_local(u1, dofs, &mut a);
        element_local(u2, dofs, &mut b);
        let e11 = ke.bilinear(&a, &a);
        let e12 = ke.bilinear(&a, &b);
        let e22 = ke.bilinear(&b, &b);
        energies.push(e11);
        let de = -simp_modulus_derivative(xe, &problem.material);
        let (dd11, dd12) = (de * e11 / fi, de * e12 / fi);
        let (dd21, dd22) = (de * e12 / fo, de * e22 / fo);
        let dnum = fo * dd21;
        let dden = fo * dd11 + k * (dd11 * ga.d22 + ga.d11 * dd22 - dd21 * ga.d12 - ga.d21 * dd12);
        gradient.push((dnum * den - num * dden) / (den * den));
    }
    Ok(ObjectiveEvaluation {
        value,
        gradient,
        element_energies: energies,
        sense: ObjectiveSense::Maximize,
        mechanism: Some(ga),
    })
}

/// Dispatch on the problem's objective kind.
pub fn evaluate(
    problem: &ProblemDefinition,
    system: &FeaSystem,
    x: &[f64],
    sol: &FeaSolution,
) -> Result<ObjectiveEvaluation, ObjectiveError> {
    match problem.objective {
        ObjectiveKind::MinCompliance => compliance_with_sensitivity(problem, system, x, sol),
        ObjectiveKind::MaxGeometricAdvantage => {
            geometric_advantage_with_sensitivity(problem, system, x, sol)
        }
    }
}

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone)]
pub struct FiniteDifferenceReport {
    pub max_relative_error: f64,
    pub checked_elements: Vec<usize>,
}

/// Number of sampled elements (all of them when the grid is smaller).
pub const FD_SAMPLE: usize = 24;

/// Compares the analytic gradient with central differences on a random
/// subset of elements and returns the worst relative discrepancy.
///
/// The error of element `e` is `|fd - an| / max(|an|, 1e-3 max_j |an_j|)` so
/// that entries near zero are judged against the gradient scale. A step that
/// is too small is rejected when the objective difference retains fewer than
/// four significant digits or the `h` and `2h` estimates disagree by more than
/// one percent.
pub fn finite_difference_check(
    problem: &ProblemDefinition,
    x: &[f64],
    kind: ObjectiveKind,
    h: f64,
    seed: u64,
) -> Result<FiniteDifferenceReport, ObjectiveError> {
    let mut problem = problem.clone();
    problem.objective = kind;
    let system = FeaSystem::new(&problem)?;
    if x.iter().any(|&v| v < 2.0 * h || v > 1.0 - 2.0 * h) {
        return Err(ObjectiveError::NotInterior);
    }
    let eval_at = |xs: &[f64]| -> Result<ObjectiveEvaluation, ObjectiveError> {
        let sol = system.analyze(&problem, xs)?;
        evaluate(&problem, &system, xs, &sol)
    };
    let base = eval_at(x)?;
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, n, FD_SAMPLE.min(n)).into_vec();
    picked.sort_unstable();
    let scale = picked
        .iter()
        .map(|&e| base.gradient[e].abs())
        .fold(0.0, f64::max);

    let mut xs = x.to_vec();
    let mut value_at = |e: usize, delta: f64| -> Result<f64, ObjectiveError> {
        xs[e] = x[e] + delta;
        let v = eval_at(&xs)?.value;
        xs[e] = x[e];
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    for &e in &picked {
        let (p1, m1) = (value_at(e, h)?, value_at(e, -h)?);
        let (p2, m2) = (value_at(e, 2.0 * h)?, value_at(e, -2.0 * h)?);
        let diff = p1 - m1;
        let noise = f64::EPSILON * base.value.abs().max(f64::MIN_POSITIVE);
        let d1 = diff / (2.0 * h);
        let d2 = (p2 - m2) / (4.0 * h);
        let digits = (diff.abs() / noise).log10();
        let spread = (d1 - d2).abs();
        if digits < 4.0 || spread > 1e-2 * d1.abs().max(d2.abs()).max(1e-3 * scale) {
            return Err(ObjectiveError::Cancellation { h });
        }
        let an = base.gradient[e];
        let err = (d1 - an).abs() / an.abs().max(1e-3 * scale);
        worst = worst.max(err);
    }
    Ok(FiniteDifferenceReport {
        max_relative_error: worst,
        checked_elements: picked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_inverter_problem, make_mbb_problem, MaterialSpec};

    #[test]
    fn simp_modulus_values() {
        let m = MaterialSpec::default();
        assert_eq!(simp_modulus(1.0, &m).unwrap(), 1.0);
        assert_eq!(simp_modulus(0.0, &m).unwrap(), 1e-9);
        let m0 = MaterialSpec {
            young_modulus_void: 0.0,
            ..m
        };
        assert_eq!(simp_modulus(0.5, &m0).unwrap(), 0.125);
        assert!(simp_modulus(1.2, &m).is_err());
        assert!(simp_modulus(-0.1, &m).is_err());
    }

    fn compliance_at(p: &crate::model::ProblemDefinition, x: &[f64]) -> ObjectiveEvaluation {
        let sys = FeaSystem::new(p).unwrap();
        let sol = sys.analyze(p, x).unwrap();
        compliance_with_sensitivity(p, &sys, x, &sol).unwrap()
    }

    #[test]
    fn zero_load_gives_zero_objective() {
        let mut p = make_mbb_problem(6, 2).unwrap();
        p.load_cases[0].forces = vec![(1, 0.0)];
        let ev = compliance_at(&p, &[0.5; 12]);
        assert_eq!(ev.value, 0.0);
        assert!(ev.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_solution_is_rejected() {
        let p = make_mbb_problem(6, 2).unwrap();
        let sys = FeaSystem::new(&p).unwrap();
        let sol = sys.analyze(&p, &[0.5; 12]).unwrap();
        let r = compliance_with_sensitivity(&p, &sys, &[0.6; 12], &sol);
        assert!(matches!(r, Err(ObjectiveError::StaleSolution)));
    }

    #[test]
    fn compliance_scaling_law() {
        let mut p = make_mbb_problem(8, 4).unwrap();
        p.material.young_modulus_void = 1e-300;
        let full = compliance_at(&p, &vec![1.0; 32]).value;
        for c in [0.3, 0.5, 0.8] {
            let v = compliance_at(&p, &vec![c; 32]).value;
            let expected = full / c.powi(3);
            assert!((v - expected).abs() <= 1e-8 * expected, "c = {c}");
        }
    }

    #[test]
    fn compliance_gradient_is_nonpositive() {
        let mut p = make_mbb_problem(8, 4).unwrap();
        p.material.young_modulus_void = 1e-300;
        let x: Vec<f64> = (0..32).map(|i| 0.2 + 0.02 * i as f64).collect();
        assert!(compliance_at(&p, &x).gradient.iter().all(|&g| g <= 0.0));
    }

    #[test]
    fn compliance_matches_finite_differences() {
        let p = make_mbb_problem(6, 2).unwrap();
        let r = finite_difference_check(&p, &[0.5; 12], ObjectiveKind::MinCompliance, 1e-6, 1)
            .unwrap();
        assert!(r.max_relative_error < 1e-4, "{}", r.max_relative_error);
        assert_eq!(r.checked_elements.len(), 12);
    }

    #[test]
    fn ga_matches_finite_differences() {
        let p = make_inverter_problem(8, 8).unwrap();
        let r = finite_difference_check(
            &p,
            &vec![0.2; 64],
            ObjectiveKind::MaxGeometricAdvantage,
            1e-6,
            7,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{}", r.max_relative_error);
        assert!(r.checked_elements.len() >= 20);
    }

    #[test]
    fn tiny_step_is_flagged() {
        let p = make_mbb_problem(6, 2).unwrap();
        let r = finite_difference_check(&p, &[0.5; 12], ObjectiveKind::MinCompliance, 1e-15, 1);
        assert!(matches!(r, Err(ObjectiveError::Cancellation { .. })));
    }

    fn ga_eval(p: &crate::model::ProblemDefinition, x: &[f64]) -> ObjectiveEvaluation {
        let sys = FeaSystem::new(p).unwrap();
        let sol = sys.analyze(p, x).unwrap();
        geometric_advantage_with_sensitivity(p, &sys, x, &sol).unwrap()
    }

    #[test]
    fn spring_free_ga_is_delta_ratio() {
        let mut p = make_inverter_problem(8, 8).unwrap();
        p.ports.as_mut().unwrap().output_spring = 0.0;
        let ev = ga_eval(&p, &vec![0.3; 64]);
        let m = ev.mechanism.unwrap();
        assert_eq!(ev.value, m.d21 / m.d11);
    }

    #[test]
    fn mutual_energies_are_reciprocal() {
        let p = make_inverter_problem(8, 8).unwrap();
        let x: Vec<f64> = (0..64).map(|i| 0.2 + 0.01 * (i % 7) as f64).collect();
        let m = ga_eval(&p, &x).mechanism.unwrap();
        // u1^T K u2 = u2^T K u1 with equal port magnitudes
        assert!((m.d12 - m.d21).abs() <= 1e-10 * m.d12.abs());
        assert!(m.d11 > 0.0 && m.d22 > 0.0);
    }

    #[test]
    fn spring_free_ga_invariant_under_dummy_load_scaling() {
        let mut p = make_inverter_problem(8, 8).unwrap();
        p.ports.as_mut().unwrap().output_spring = 0.0;
        let x = vec![0.25; 64];
        let a = ga_eval(&p, &x).value;
        p.ports.as_mut().unwrap().output_force = 3.0;
        p.load_cases[1].forces[0].1 = -3.0;
        let b = ga_eval(&p, &x).value;
        assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn eq18_with_analytic_spring_equals_sprung_solve() {
        // G_A from the spring-free analysis must equal u_out / u_in of the
        // structure with the output spring actually attached.
        let p = make_inverter_problem(8, 8).unwrap();
        let x: Vec<f64> = (0..64).map(|i| 0.15 + 0.01 * (i % 11) as f64).collect();
        let ga = ga_eval(&p, &x).value;
        let ports = p.ports.unwrap();
        let mut sprung = p.clone();
        sprung.load_cases.truncate(1);
        sprung.objective = ObjectiveKind::MinCompliance;
        sprung.springs.push(crate::model::SpringAttachment {
            dof: ports.output_dof,
            stiffness: ports.output_spring,
        });
        let sys = FeaSystem::new(&sprung).unwrap();
        let u = &sys.analyze(&sprung, &x).unwrap().displacements[0];
        // output measured along the dummy load direction (-x)
        let ratio = -u[ports.output_dof] / u[ports.input_dof];
        assert!((ga - ratio).abs() <= 1e-9 * ratio.abs(), "{ga} vs {ratio}");
    }
}
