//! Projection of a search direction onto the cone of volume-preserving,
//! bound-respecting directions, the active-set expansion that identifies the
//! binding bounds, and the largest feasible step along the result.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::field::Bounds;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("null basis needs at least two free variables, got {0}")]
    TooFewFree(usize),
    #[error("no free variables remain")]
    NoFreeVariables,
    #[error("index {0} is both lower- and upper-active")]
    Overlap(usize),
    #[error("index {index} out of range for {len} variables")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("projected direction vanished after {expansions} expansions")]
    Stationary { expansions: usize },
    #[error("nonzero direction admits an unbounded step")]
    UnboundedStep,
}

/// Which bound, if any, a variable is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Free,
    Lower,
    Upper,
}

/// Rows of the constraint matrix: the all-ones volume row plus one unit row
/// per pinned variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    state: Vec<Activity>,
    n_free: usize,
}

impl ActiveSet {
    /// Only the volume row.
    pub fn volume_only(n: usize) -> Self {
        Self {
            state: vec![Activity::Free; n],
            n_free: n,
        }
    }

    pub fn with_bounds(n: usize, lower: &[usize], upper: &[usize]) -> Result<Self, ProjectionError> {
        let mut set = Self::volume_only(n);
        for &i in lower {
            set.pin(i, Activity::Lower)?;
        }
        for &i in upper {
            if i < n && set.state[i] == Activity::Lower {
                return Err(ProjectionError::Overlap(i));
            }
            set.pin(i, Activity::Upper)?;
        }
        if set.n_free == 0 {
            return Err(ProjectionError::NoFreeVariables);
        }
        Ok(set)
    }

    fn pin(&mut self, i: usize, bound: Activity) -> Result<(), ProjectionError> {
        let len = self.state.len();
        let slot = self
            .state
            .get_mut(i)
            .ok_or(ProjectionError::IndexOutOfRange { index: i, len })?;
        if *slot == Activity::Free {
            self.n_free -= 1;
        }
        *slot = bound;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }

    pub fn activity(&self, i: usize) -> Activity {
        self.state[i]
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.state[i] == Activity::Free
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Number of pinned bound rows (excludes the volume row).
    pub fn n_bound(&self) -> usize {
        self.state.len() - self.n_free
    }

    pub fn lower_active(&self) -> Vec<usize> {
        self.indices(Activity::Lower)
    }

    pub fn upper_active(&self) -> Vec<usize> {
        self.indices(Activity::Upper)
    }

    fn indices(&self, which: Activity) -> Vec<usize> {
        self.state
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect()
    }

    /// Explicit constraint matrix with the volume row first.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let pinned: Vec<usize> = (0..self.len()).filter(|&i| !self.is_free(i)).collect();
        let mut n = DMatrix::zeros(pinned.len() + 1, self.len());
        n.row_mut(0).fill(1.0);
        for (r, &i) in pinned.iter().enumerate() {
            n[(r + 1, i)] = 1.0;
        }
        n
    }
}

/// Direction produced by the active-set expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDirection {
    pub d: Vec<f64>,
    pub feasible: bool,
    /// Expansion rounds that added at least one bound row.
    pub iterations_used: usize,
}

/// Orthonormal basis of the vectors orthogonal to all-ones in `n1` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasisM1 {
    matrix: DMatrix<f64>,
}

impl NullBasisM1 {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n1(&self) -> usize {
        self.matrix.nrows()
    }
}

/// First row `m = -1/sqrt(n1)`, below it `I + s` with `s = (-1 + 1/sqrt(n1)) / (n1 - 1)`.
pub fn build_m1(n1: usize) -> Result<NullBasisM1, ProjectionError> {
    if n1 < 2 {
        return Err(ProjectionError::TooFewFree(n1));
    }
    let root = (n1 as f64).sqrt();
    let m = -1.0 / root;
    let s = (-1.0 + 1.0 / root) / (n1 - 1) as f64;
    let matrix = DMatrix::from_fn(n1, n1 - 1, |i, j| match i {
        0 => m,
        _ if i - 1 == j => 1.0 + s,
        _ => s,
    });
    Ok(NullBasisM1 { matrix })
}

fn check_len(expected: usize, got: usize) -> Result<(), ProjectionError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProjectionError::LengthMismatch { expected, got })
    }
}

/// Zeroes pinned entries and subtracts the free mean from the rest.
pub fn project_active_in_place(d: &mut [f64], active: &ActiveSet) -> Result<(), ProjectionError> {
    check_len(active.len(), d.len())?;
    if active.n_free() == 0 {
        return Err(ProjectionError::NoFreeVariables);
    }
    let mut sum = 0.0;
    for (v, s) in d.iter().zip(&active.state) {
        if *s == Activity::Free {
            sum += v;
        }
    }
    let mean = sum / active.n_free() as f64;
    for (v, s) in d.iter_mut().zip(&active.state) {
        *v = if *s == Activity::Free { *v - mean } else { 0.0 };
    }
    Ok(())
}

/// Orthogonal projection onto the null space of the active constraint rows.
pub fn project_active(d: &[f64], active: &ActiveSet) -> Result<Vec<f64>, ProjectionError> {
    let mut out = d.to_vec();
    project_active_in_place(&mut out, active)?;
    Ok(out)
}

/// The same projection formed as `d M M^T`, with `M` the free-variable basis
/// scattered into the full index space.
pub fn project_dense(d: &[f64], active: &ActiveSet) -> Result<Vec<f64>, ProjectionError> {
    check_len(active.len(), d.len())?;
    let free: Vec<usize> = (0..d.len()).filter(|&i| active.is_free(i)).collect();
    let basis = build_m1(free.len())?;
    let mut m = DMatrix::zeros(d.len(), free.len() - 1);
    for (r, &i) in free.iter().enumerate() {
        m.row_mut(i).copy_from(&basis.matrix.row(r));
    }
    let row = DMatrix::from_row_slice(1, d.len(), d);
    let p = row * &m * m.transpose();
    Ok(p.iter().copied().collect())
}

/// Grows the active set from the volume row alone, pinning every bound the
/// current projection would violate, until the projection is feasible.
pub fn expand_active_set(
    d: &[f64],
    x: &[f64],
    bounds: Bounds,
) -> Result<(ActiveSet, SearchDirection), ProjectionError> {
    check_len(x.len(), d.len())?;
    let tol = 1e-12 * d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut active = ActiveSet::volume_only(d.len());
    let mut expansions = 0;
    let mut p = d.to_vec();
    loop {
        if active.n_free() == 0 {
            return Err(ProjectionError::Stationary { expansions });
        }
        p.copy_from_slice(d);
        project_active_in_place(&mut p, &active)?;
        let mut added = false;
        for i in 0..d.len() {
            if !active.is_free(i) {
                continue;
            }
            if x[i] == bounds.lower && p[i] < -tol {
                active.pin(i, Activity::Lower)?;
                added = true;
            } else if x[i] == bounds.upper && p[i] > tol {
                active.pin(i, Activity::Upper)?;
                added = true;
            }
        }
        if !added {
            break;
        }
        expansions += 1;
    }
    if p.iter().all(|v| v.abs() <= tol) {
        return Err(ProjectionError::Stationary { expansions });
    }
    Ok((
        active,
        SearchDirection {
            d: p,
            feasible: true,
            iterations_used: expansions,
        },
    ))
}

/// Fraction of pinned bound rows that can be dropped without changing the
/// projection of `d`. Each row is checked by re-projecting without it.
pub fn redundancy_fraction(d: &[f64], active: &ActiveSet) -> Result<f64, ProjectionError> {
    check_len(active.len(), d.len())?;
    let pinned: Vec<usize> = (0..d.len()).filter(|&i| !active.is_free(i)).collect();
    if pinned.is_empty() {
        return Ok(0.0);
    }
    let reference = project_active(d, active)?;
    let tol = 1e-12 * d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut trial = active.clone();
    let mut buf = vec![0.0; d.len()];
    let mut redundant = 0;
    for &i in &pinned {
        let saved = trial.state[i];
        trial.state[i] = Activity::Free;
        trial.n_free += 1;
        buf.copy_from_slice(d);
        project_active_in_place(&mut buf, &trial)?;
        if buf.iter().zip(&reference).all(|(a, b)| (a - b).abs() <= tol) {
            redundant += 1;
        }
        trial.state[i] = saved;
        trial.n_free -= 1;
    }
    Ok(redundant as f64 / pinned.len() as f64)
}

/// Largest step keeping `x + alpha d` within bounds, and the component that
/// reaches its bound first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxStep {
    pub alpha: f64,
    pub blocking: usize,
}

pub fn max_step(x: &[f64], d: &[f64], bounds: Bounds) -> Result<MaxStep, ProjectionError> {
    check_len(x.len(), d.len())?;
    if d.iter().all(|&v| v == 0.0) {
        return Err(ProjectionError::Stationary { expansions: 0 });
    }
    let mut best = MaxStep {
        alpha: f64::INFINITY,
        blocking: usize::MAX,
    };
    for (j, (&xj, &dj)) in x.iter().zip(d).enumerate() {
        let a = if dj > 0.0 {
            (bounds.upper - xj) / dj
        } else if dj < 0.0 {
            (xj - bounds.lower) / -dj
        } else {
            continue;
        };
        if a < best.alpha {
            best = MaxStep { alpha: a, blocking: j };
        }
    }
    if best.alpha.is_infinite() {
        return Err(ProjectionError::UnboundedStep);
    }
    Ok(best)
}
