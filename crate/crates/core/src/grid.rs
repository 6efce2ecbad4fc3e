//! Structured element grids and their node/dof numbering.
//!
//! Nodes and elements are numbered column-major with the vertical index
//! running fastest, top to bottom, as in the 88-line and top3d codes:
//!
//! * 2D: node `(ix, iy)` has id `ix * (ny + 1) + iy`, element `(ix, iy)` has
//!   id `ix * ny + iy`.
//! * 3D: node `(ix, iy, iz)` has id `iz * (nx + 1) * (ny + 1) + ix * (ny + 1) + iy`,
//!   element id `iz * nx * ny + ix * ny + iy`.
//!
//! `iy = 0` is the top row. Each node carries 2 (2D) or 3 (3D) dofs ordered
//! x, y(, z) with positive y pointing up.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// Element counts per axis. `nz == 1` denotes a plane (2D) problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridSpec {
    pub fn new_2d(nx: usize, ny: usize) -> Result<Self, ModelError> {
        Self::new_3d_unchecked(nx, ny, 1).validated()
    }

    pub fn new_3d(nx: usize, ny: usize, nz: usize) -> Result<Self, ModelError> {
        Self::new_3d_unchecked(nx, ny, nz).validated()
    }

    const fn new_3d_unchecked(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    fn validated(self) -> Result<Self, ModelError> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(ModelError::DegenerateGrid {
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            });
        }
        Ok(self)
    }

    #[inline]
    pub fn is_3d(&self) -> bool {
        self.nz > 1
    }

    /// Edge length of every (square or cubic) element.
    #[inline]
    pub fn element_size(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        if self.is_3d() {
            (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
        } else {
            (self.nx + 1) * (self.ny + 1)
        }
    }

    #[inline]
    pub fn dofs_per_node(&self) -> usize {
        if self.is_3d() {
            3
        } else {
            2
        }
    }

    #[inline]
    pub fn n_dofs(&self) -> usize {
        self.n_nodes() * self.dofs_per_node()
    }

    /// Number of dofs of one element: 8 for Q4, 24 for H8.
    #[inline]
    pub fn dofs_per_element(&self) -> usize {
        if self.is_3d() {
            24
        } else {
            8
        }
    }

    #[inline]
    pub fn node_id(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix <= self.nx && iy <= self.ny);
        if self.is_3d() {
            iz * (self.nx + 1) * (self.ny + 1) + ix * (self.ny + 1) + iy
        } else {
            ix * (self.ny + 1) + iy
        }
    }

    /// Global dof index of component `axis` (0 = x, 1 = y, 2 = z) at a node.
    #[inline]
    pub fn dof(&self, ix: usize, iy: usize, iz: usize, axis: usize) -> usize {
        debug_assert!(axis < self.dofs_per_node());
        self.node_id(ix, iy, iz) * self.dofs_per_node() + axis
    }

    #[inline]
    pub fn element_id(&self, ix: usize, iy: usize, iz: usize) -> usize {
        iz * self.nx * self.ny + ix * self.ny + iy
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> (usize, usize, usize) {
        let layer = self.nx * self.ny;
        let iz = e / layer;
        let rem = e % layer;
        (rem / self.ny, rem % self.ny, iz)
    }

    /// Writes the global dofs of element `e` into `out` in local element order.
    ///
    /// Local nodes run counter-clockwise from the lower-left corner
    /// (`(-1,-1)`, `(1,-1)`, `(1,1)`, `(-1,1)` in natural coordinates), then
    /// repeat on the back face (`+z`) in 3D.
    pub fn element_dofs(&self, e: usize, out: &mut [usize]) {
        let (ix, iy, iz) = self.element_coords(e);
        // natural eta = -1 is the lower row, i.e. iy + 1
        let corners = [(ix, iy + 1), (ix + 1, iy + 1), (ix + 1, iy), (ix, iy)];
        let dpn = self.dofs_per_node();
        if self.is_3d() {
            debug_assert_eq!(out.len(), 24);
            for (layer, z) in [iz, iz + 1].into_iter().enumerate() {
                for (k, &(cx, cy)) in corners.iter().enumerate() {
                    let base = self.node_id(cx, cy, z) * dpn;
                    let slot = (layer * 4 + k) * 3;
                    out[slot] = base;
                    out[slot + 1] = base + 1;
                    out[slot + 2] = base + 2;
                }
            }
        } else {
            debug_assert_eq!(out.len(), 8);
            for (k, &(cx, cy)) in corners.iter().enumerate() {
                let base = self.node_id(cx, cy, 0) * dpn;
                out[2 * k] = base;
                out[2 * k + 1] = base + 1;
            }
        }
    }

    /// Flattened connectivity, `dofs_per_element()` entries per element.
    pub fn connectivity(&self) -> Vec<usize> {
        let per = self.dofs_per_element();
        let mut out = vec![0; self.n_elements() * per];
        for (e, chunk) in out.chunks_exact_mut(per).enumerate() {
            self.element_dofs(e, chunk);
        }
        out
    }

    /// Element centroid in element-size units, origin at the top-left(-front) corner.
    pub fn element_center(&self, e: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.element_coords(e);
        [ix as f64 + 0.5, iy as f64 + 0.5, iz as f64 + 0.5]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_axes() {
        assert!(GridSpec::new_2d(0, 3).is_err());
        assert!(GridSpec::new_3d(2, 2, 0).is_err());
        assert_eq!(GridSpec::new_2d(60, 20).unwrap().n_elements(), 1200);
        assert_eq!(GridSpec::new_3d(60, 20, 10).unwrap().n_elements(), 12000);
    }

    #[test]
    fn element_coords_roundtrip() {
        let g = GridSpec::new_3d(5, 3, 4).unwrap();
        for e in 0..g.n_elements() {
            let (ix, iy, iz) = g.element_coords(e);
            assert_eq!(g.element_id(ix, iy, iz), e);
        }
    }

    #[test]
    fn q4_dofs_match_88_line_layout() {
        // 88-line: edofMat row for element 1 of a nely=2 mesh is
        // [3 4 9 10 7 8 1 2] (1-based).
        let g = GridSpec::new_2d(3, 2).unwrap();
        let mut dofs = [0; 8];
        g.element_dofs(0, &mut dofs);
        assert_eq!(dofs, [2, 3, 8, 9, 6, 7, 0, 1]);
    }

    #[test]
    fn every_dof_is_covered() {
        for g in [GridSpec::new_2d(4, 3).unwrap(), GridSpec::new_3d(3, 2, 2).unwrap()] {
            let mut seen = vec![false; g.n_dofs()];
            for d in g.connectivity() {
                seen[d] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }
}
