//! Linear elastic finite element analysis on structured grids.
//!
//! [`FeaSystem`] precomputes the connectivity, the sparsity pattern of the
//! global stiffness matrix and the symbolic Cholesky factorization of every
//! Dirichlet-reduced system, so that an optimization loop only pays for
//! numeric assembly, numeric factorization and triangular solves.

mod element;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Mat, Side};
use thiserror::Error;

pub use element::{element_stiffness_h8, element_stiffness_q4, ElementStiffness};

use crate::grid::GridSpec;
use crate::model::{MaterialSpec, ProblemDefinition};
use crate::objectives::simp_modulus_unchecked;

/// Required residual `|K U - F|` on the free dofs, relative to `max(|F|, | |K| |U| |)`.
pub const SOLVER_TOLERANCE: f64 = 1e-8;
const REFINEMENT_STEPS: usize = 4;

#[derive(Debug, Error)]
pub enum FeaError {
    #[error("poisson ratio {0} outside (0, 0.5)")]
    PoissonRatio(f64),
    #[error("density field has {got} entries, grid has {expected} elements")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("density {value} of element {index} outside [0, 1]")]
    DensityOutOfRange { index: usize, value: f64 },
    #[error("reduced stiffness matrix is singular or indefinite: {0}")]
    Singular(String),
    #[error("load case {case}: relative residual {residual:e} exceeds {SOLVER_TOLERANCE:e}")]
    Residual { case: usize, residual: f64 },
    #[error("sparse matrix construction failed: {0}")]
    Sparse(String),
}

/// Sparse symmetric global stiffness matrix over all dofs (both triangles stored).
#[derive(Debug, Clone)]
pub struct GlobalStiffness {
    grid: GridSpec,
    matrix: SparseColMat<usize, f64>,
    connectivity: std::sync::Arc<Vec<usize>>,
}

impl GlobalStiffness {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn n_dofs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.val().len()
    }

    pub fn matrix(&self) -> &SparseColMat<usize, f64> {
        &self.matrix
    }

    /// Element-to-dof map, `grid.dofs_per_element()` entries per element.
    pub fn connectivity(&self) -> &[usize] {
        &self.connectivity
    }

    /// Entry `K[row, col]`, zero outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let sym = self.matrix.symbolic();
        let start = sym.col_ptr()[col];
        let end = sym.col_ptr()[col + 1];
        match sym.row_idx()[start..end].binary_search(&row) {
            Ok(k) => self.matrix.val()[start + k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        self.matrix.val()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.product(x, |v| v)
    }

    /// `|K| |x|`, the magnitude scale of the terms summed in `K x`.
    pub fn mul_vec_abs(&self, x: &[f64]) -> Vec<f64> {
        self.product(x, f64::abs)
    }

    fn product(&self, x: &[f64], map: impl Fn(f64) -> f64) -> Vec<f64> {
        let sym = self.matrix.symbolic();
        let (cp, ri, val) = (sym.col_ptr(), sym.row_idx(), self.matrix.val());
        let mut y = vec![0.0; self.n_dofs()];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in cp[j]..cp[j + 1] {
                y[ri[k]] += map(val[k]) * map(xj);
            }
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n_dofs();
        let sym = self.matrix.symbolic();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            for k in sym.col_ptr()[j]..sym.col_ptr()[j + 1] {
                m[(sym.row_idx()[k], j)] = self.matrix.val()[k];
            }
        }
        m
    }
}

/// Displacements and diagnostics of one equilibrium solve.
#[derive(Debug, Clone)]
pub struct FeaSolution {
    /// One full-length displacement vector per load case (zero on fixed dofs).
    pub displacements: Vec<Vec<f64>>,
    pub relative_residuals: Vec<f64>,
    pub solve_time: Duration,
    /// Fingerprint of the density field the system was assembled for.
    pub density_fingerprint: u64,
}

/// Hash of the exact bit patterns of a density field.
pub fn density_fingerprint(x: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    x.len().hash(&mut h);
    for v in x {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Upper triangle of `K` restricted to the free dofs, with its cached symbolic factorization.
#[derive(Debug)]
struct ReducedSystem {
    fixed_dofs: Vec<usize>,
    free_dofs: Vec<usize>,
    pattern: SymbolicSparseColMat<usize>,
    /// Index into the full matrix values for every reduced entry.
    source: Vec<usize>,
    symbolic: SymbolicLlt<usize>,
}

impl ReducedSystem {
    fn new(full: &SymbolicSparseColMat<usize>, fixed_dofs: &[usize]) -> Result<Self, FeaError> {
        let n = full.nrows();
        const FIXED: usize = usize::MAX;
        let mut reduced_index = vec![0usize; n];
        let mut free_dofs = Vec::with_capacity(n - fixed_dofs.len());
        for (dof, slot) in reduced_index.iter_mut().enumerate() {
            if fixed_dofs.binary_search(&dof).is_ok() {
                *slot = FIXED;
            } else {
                *slot = free_dofs.len();
                free_dofs.push(dof);
            }
        }
        let m = free_dofs.len();
        let mut col_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::new();
        let mut source = Vec::new();
        col_ptr.push(0);
        let (cp, ri) = (full.col_ptr(), full.row_idx());
        for &j in &free_dofs {
            let rj = reduced_index[j];
            for k in cp[j]..cp[j + 1] {
                let r = reduced_index[ri[k]];
                // rows are sorted and the map is monotone, so the reduced column stays sorted
                if r != FIXED && r <= rj {
                    row_idx.push(r);
                    source.push(k);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let pattern = SymbolicSparseColMat::new_checked(m, m, col_ptr, None, row_idx);
        let symbolic = SymbolicLlt::try_new(pattern.as_ref(), Side::Upper)
            .map_err(|e| FeaError::Sparse(format!("{e:?}")))?;
        Ok(Self {
            fixed_dofs: fixed_dofs.to_vec(),
            free_dofs,
            pattern,
            source,
            symbolic,
        })
    }

    /// Position of the diagonal entry of reduced column `j` (always the last stored row).
    fn diagonal_slot(&self, j: usize) -> usize {
        self.pattern.col_ptr()[j + 1] - 1
    }
}

/// Cached structure for repeated assembly and solves on one problem.
#[derive(Debug)]
pub struct FeaSystem {
    grid: GridSpec,
    material: MaterialSpec,
    element: ElementStiffness,
    connectivity: std::sync::Arc<Vec<usize>>,
    pattern: SymbolicSparseColMat<usize>,
    /// Full-matrix value slot for every `(element, i, j)` local entry.
    slots: Vec<u32>,
    reduced: Vec<ReducedSystem>,
}

impl FeaSystem {
    pub fn new(problem: &ProblemDefinition) -> Result<Self, FeaError> {
        let grid = problem.grid;
        let element = if grid.is_3d() {
            element_stiffness_h8(problem.material.poisson_ratio)?
        } else {
            element_stiffness_q4(problem.material.poisson_ratio)?
        };
        let connectivity = grid.connectivity();
        let per = grid.dofs_per_element();
        let n = grid.n_dofs();

        // column pattern: union of element dofs touching each column
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for edofs in connectivity.chunks_exact(per) {
            for &c in edofs {
                cols[c].extend_from_slice(edofs);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        drop(cols);
        if row_idx.len() > u32::MAX as usize {
            return Err(FeaError::Sparse("stiffness pattern too large".into()));
        }
        let mut slots = Vec::with_capacity(connectivity.len() * per);
        for edofs in connectivity.chunks_exact(per) {
            // column-major over the local matrix, matching ElementStiffness::as_slice
            for &c in edofs {
                let col = &row_idx[col_ptr[c]..col_ptr[c + 1]];
                for &r in edofs {
                    let k = col.binary_search(&r).expect("row in pattern");
                    slots.push((col_ptr[c] + k) as u32);
                }
            }
        }
        let pattern = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);

        let mut reduced: Vec<ReducedSystem> = Vec::new();
        for lc in &problem.load_cases {
            if lc.fixed_dofs.is_empty() {
                return Err(FeaError::Singular(
                    "no fixed dofs, rigid-body modes remain".into(),
                ));
            }
            if !reduced.iter().any(|r| r.fixed_dofs == lc.fixed_dofs) {
                reduced.push(ReducedSystem::new(&pattern, &lc.fixed_dofs)?);
            }
        }
        Ok(Self {
            grid,
            material: problem.material,
            element,
            connectivity: std::sync::Arc::new(connectivity),
            pattern,
            slots,
            reduced,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn element(&self) -> &ElementStiffness {
        &self.element
    }

    pub fn connectivity(&self) -> &[usize] {
        &self.connectivity
    }

    fn check_densities(&self, x: &[f64]) -> Result<(), FeaError> {
        if x.len() != self.grid.n_elements() {
            return Err(FeaError::DimensionMismatch {
                expected: self.grid.n_elements(),
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(FeaError::DensityOutOfRange { index, value });
        }
        Ok(())
    }

    /// `K = sum_e E(x_e) K_e`, with SIMP moduli.
    pub fn assemble(&self, x: &[f64]) -> Result<GlobalStiffness, FeaError> {
        self.check_densities(x)?;
        let moduli: Vec<f64> = x.iter().map(|&xe| simp_modulus_unchecked(xe, &self.material)).collect();
        Ok(self.assemble_moduli(&moduli))
    }

    /// Assembly with explicit per-element moduli (no bounds check).
    pub fn assemble_moduli(&self, moduli: &[f64]) -> GlobalStiffness {
        assert_eq!(moduli.len(), self.grid.n_elements());
        let ke = self.element.as_slice();
        let local = ke.len();
        let mut values = vec![0.0; self.pattern.row_idx().len()];
        for (e, &modulus) in moduli.iter().enumerate() {
            let slots = &self.slots[e * local..(e + 1) * local];
            for (&slot, &k) in slots.iter().zip(ke) {
                values[slot as usize] += modulus * k;
            }
        }
        GlobalStiffness {
            grid: self.grid,
            matrix: SparseColMat::new(self.pattern.clone(), values),
            connectivity: self.connectivity.clone(),
        }
    }

    /// Solves `K U = F` for every load case of `problem`; springs are added to
    /// the diagonal and fixed dofs are eliminated.
    pub fn solve(
        &self,
        k: &GlobalStiffness,
        problem: &ProblemDefinition,
    ) -> Result<FeaSolution, FeaError> {
        let start = Instant::now();
        let n = self.grid.n_dofs();
        let mut displacements = vec![Vec::new(); problem.load_cases.len()];
        let mut residuals = vec![0.0; problem.load_cases.len()];

        for system in &self.reduced {
            let cases: Vec<usize> = problem
                .load_cases
                .iter()
                .enumerate()
                .filter(|(_, lc)| lc.fixed_dofs == system.fixed_dofs)
                .map(|(i, _)| i)
                .collect();
            if cases.is_empty() {
                continue;
            }
            let full_vals = k.values();
            let mut values: Vec<f64> = system.source.iter().map(|&s| full_vals[s]).collect();
            let mut spring_diag = vec![0.0; n];
            for s in &problem.springs {
                spring_diag[s.dof] += s.stiffness;
                if let Ok(j) = system.free_dofs.binary_search(&s.dof) {
                    values[system.diagonal_slot(j)] += s.stiffness;
                }
            }
            let reduced = SparseColMat::new(system.pattern.clone(), values);
            let llt = Llt::try_new_with_symbolic(system.symbolic.clone(), reduced.as_ref(), Side::Upper)
                .map_err(|e| FeaError::Singular(format!("{e:?}")))?;

            let m = system.free_dofs.len();
            let forces: Vec<Vec<f64>> = cases
                .iter()
                .map(|&c| problem.load_cases[c].force_vector(n))
                .collect();
            let mut sol = Mat::<f64>::from_fn(m, cases.len(), |i, c| forces[c][system.free_dofs[i]]);
            llt.solve_in_place(sol.as_mut());

            // residual on the free dofs of every case, relative to the larger of
            // |F| and | |K| |U| | (void regions carry huge, cancelling terms)
            let residual = |sol: &Mat<f64>, r: &mut Mat<f64>| -> Vec<f64> {
                let mut u = vec![0.0; n];
                (0..cases.len())
                    .map(|c| {
                        for (i, &dof) in system.free_dofs.iter().enumerate() {
                            u[dof] = sol[(i, c)];
                        }
                        let ku = k.mul_vec(&u);
                        let scale = k.mul_vec_abs(&u);
                        let f = &forces[c];
                        let (mut res2, mut f2, mut s2) = (0.0, 0.0, 0.0);
                        for (i, &dof) in system.free_dofs.iter().enumerate() {
                            let spring = spring_diag[dof] * u[dof];
                            let ri = f[dof] - ku[dof] - spring;
                            r[(i, c)] = ri;
                            res2 += ri * ri;
                            f2 += f[dof] * f[dof];
                            let si = scale[dof] + spring.abs();
                            s2 += si * si;
                        }
                        let denom = f2.max(s2);
                        if denom > 0.0 {
                            (res2 / denom).sqrt()
                        } else {
                            res2.sqrt()
                        }
                    })
                    .collect()
            };
            let mut r = Mat::<f64>::zeros(m, cases.len());
            let mut rel = residual(&sol, &mut r);
            // high stiffness contrast leaves round-off in the first solve
            for _ in 0..REFINEMENT_STEPS {
                if rel.iter().all(|&v| v <= 0.01 * SOLVER_TOLERANCE) {
                    break;
                }
                llt.solve_in_place(r.as_mut());
                sol += &r;
                rel = residual(&sol, &mut r);
            }

            for (c_local, &case) in cases.iter().enumerate() {
                if !(rel[c_local] <= SOLVER_TOLERANCE) {
                    return Err(FeaError::Residual {
                        case,
                        residual: rel[c_local],
                    });
                }
                let mut u = vec![0.0; n];
                for (i, &dof) in system.free_dofs.iter().enumerate() {
                    u[dof] = sol[(i, c_local)];
                }
                residuals[case] = rel[c_local];
                displacements[case] = u;
            }
        }
        Ok(FeaSolution {
            displacements,
            relative_residuals: residuals,
            solve_time: start.elapsed(),
            density_fingerprint: 0,
        })
    }

    /// Assemble for `x` and solve every load case.
    pub fn analyze(&self, problem: &ProblemDefinition, x: &[f64]) -> Result<FeaSolution, FeaError> {
        let start = Instant::now();
        let k = self.assemble(x)?;
        let mut sol = self.solve(&k, problem)?;
        sol.density_fingerprint = density_fingerprint(x);
        sol.solve_time = start.elapsed();
        Ok(sol)
    }
}

/// One-shot assembly of the global stiffness matrix for `x`.
pub fn assemble(problem: &ProblemDefinition, x: &[f64]) -> Result<GlobalStiffness, FeaError> {
    FeaSystem::new(problem)?.assemble(x)
}

/// One-shot equilibrium solve. The returned solution carries no density
/// fingerprint; use [`FeaSystem::analyze`] when the result feeds a sensitivity.
pub fn solve_equilibrium(
    k: &GlobalStiffness,
    problem: &ProblemDefinition,
) -> Result<FeaSolution, FeaError> {
    if k.grid() != problem.grid {
        return Err(FeaError::DimensionMismatch {
            expected: problem.grid.n_dofs(),
            got: k.n_dofs(),
        });
    }
    FeaSystem::new(problem)?.solve(k, problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_mbb_problem, LoadCase, SpringAttachment};

    #[test]
    fn assembly_at_full_density_uses_e0() {
        let p = make_mbb_problem(5, 3).unwrap();
        let sys = FeaSystem::new(&p).unwrap();
        let k = sys.assemble(&[1.0; 15]).unwrap();
        let direct = sys.assemble_moduli(&[1.0; 15]);
        assert_eq!(k.values(), direct.values());
    }

    #[test]
    fn assembly_scales_with_simp_modulus() {
        let p = make_mbb_problem(5, 3).unwrap();
        let sys = FeaSystem::new(&p).unwrap();
        let k = sys.assemble(&[0.5; 15]).unwrap();
        let e = 1e-9 + 0.125 * (1.0 - 1e-9);
        let direct = sys.assemble_moduli(&[e; 15]);
        for (a, b) in k.values().iter().zip(direct.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn assembly_rejects_bad_fields() {
        let p = make_mbb_problem(5, 3).unwrap();
        let sys = FeaSystem::new(&p).unwrap();
        assert!(matches!(
            sys.assemble(&[0.5; 14]),
            Err(FeaError::DimensionMismatch { .. })
        ));
        let mut x = vec![0.5; 15];
        x[3] = 1.5;
        assert!(matches!(sys.assemble(&x), Err(FeaError::DensityOutOfRange { .. })));
    }

    #[test]
    fn global_matrix_is_symmetric() {
        let p = make_mbb_problem(4, 2).unwrap();
        let x: Vec<f64> = (0..8).map(|i| 0.1 + 0.1 * i as f64).collect();
        let k = assemble(&p, &x).unwrap().to_dense();
        assert!((&k - k.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn zero_load_gives_zero_displacement() {
        let mut p = make_mbb_problem(6, 2).unwrap();
        p.load_cases[0].forces = vec![(1, 0.0)];
        let sys = FeaSystem::new(&p).unwrap();
        let sol = sys.analyze(&p, &[0.5; 12]).unwrap();
        assert!(sol.displacements[0].iter().all(|&u| u == 0.0));
        assert_eq!(sol.relative_residuals[0], 0.0);
    }

    fn single_element_cantilever() -> ProblemDefinition {
        let mut p = make_mbb_problem(6, 2).unwrap();
        p.grid = GridSpec::new_2d(1, 1).unwrap();
        // left edge clamped, unit downward load at the top-right node
        let g = p.grid;
        let fixed = vec![g.dof(0, 0, 0, 0), g.dof(0, 0, 0, 1), g.dof(0, 1, 0, 0), g.dof(0, 1, 0, 1)];
        p.load_cases = vec![LoadCase::new(vec![(g.dof(1, 0, 0, 1), -1.0)], fixed)];
        p
    }

    #[test]
    fn single_element_matches_dense_solve() {
        let p = single_element_cantilever();
        let sol = solve_equilibrium(&assemble(&p, &[1.0]).unwrap(), &p).unwrap();
        // dense oracle: eliminate the fixed dofs of the 8x8 element matrix
        let ke = element_stiffness_q4(0.3).unwrap();
        let g = p.grid;
        let mut dofs = [0; 8];
        g.element_dofs(0, &mut dofs);
        let fixed = &p.load_cases[0].fixed_dofs;
        let free: Vec<usize> = (0..8).filter(|&l| !fixed.contains(&dofs[l])).collect();
        let kff = nalgebra::DMatrix::from_fn(free.len(), free.len(), |i, j| ke.matrix()[(free[i], free[j])]);
        let f = p.load_cases[0].force_vector(8);
        let ff = nalgebra::DVector::from_fn(free.len(), |i, _| f[dofs[free[i]]]);
        let uf = kff.lu().solve(&ff).unwrap();
        for (i, &l) in free.iter().enumerate() {
            assert!((sol.displacements[0][dofs[l]] - uf[i]).abs() < 1e-10);
        }
        for &d in fixed {
            assert_eq!(sol.displacements[0][d], 0.0);
        }
    }

    #[test]
    fn no_fixed_dofs_is_singular() {
        let mut p = single_element_cantilever();
        p.load_cases[0].fixed_dofs.clear();
        assert!(matches!(FeaSystem::new(&p), Err(FeaError::Singular(_))));
    }

    #[test]
    fn springs_add_to_the_diagonal() {
        let mut p = single_element_cantilever();
        let load_dof = p.load_cases[0].forces[0].0;
        let free = FeaSystem::new(&p).unwrap().analyze(&p, &[1.0]).unwrap();
        p.springs.push(SpringAttachment {
            dof: load_dof,
            stiffness: 10.0,
        });
        let sprung = FeaSystem::new(&p).unwrap().analyze(&p, &[1.0]).unwrap();
        let (a, b) = (free.displacements[0][load_dof], sprung.displacements[0][load_dof]);
        assert!(a < 0.0 && b < 0.0 && b.abs() < a.abs());
        assert!(sprung.relative_residuals[0] <= SOLVER_TOLERANCE);
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = density_fingerprint(&[0.5, 0.25]);
        assert_eq!(a, density_fingerprint(&[0.5, 0.25]));
        assert_ne!(a, density_fingerprint(&[0.5, 0.250_000_000_001]));
    }
}
