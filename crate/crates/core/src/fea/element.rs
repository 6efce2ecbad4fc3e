//! Unit-modulus element stiffness matrices for square (Q4, plane stress) and
//! cubic (H8) elements of unit edge length.

use nalgebra::DMatrix;

use super::FeaError;

/// Dense symmetric element matrix for `E = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementStiffness {
    matrix: DMatrix<f64>,
}

impl ElementStiffness {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square());
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Column-major entries (equal to row-major by symmetry).
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        self.matrix.as_slice()
    }

    /// `a^T K b` for element-local vectors.
    #[inline]
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.size();
        let k = self.matrix.as_slice();
        let mut acc = 0.0;
        for j in 0..n {
            let col = &k[j * n..(j + 1) * n];
            let kb: f64 = col.iter().zip(a).map(|(kij, ai)| kij * ai).sum();
            acc += kb * b[j];
        }
        acc
    }
}

fn check_poisson(nu: f64) -> Result<(), FeaError> {
    if nu > 0.0 && nu < 0.5 {
        Ok(())
    } else {
        Err(FeaError::PoissonRatio(nu))
    }
}

/// Plane-stress bilinear quadrilateral, nodes counter-clockwise from the
/// lower-left corner, dofs `(u, v)` per node.
///
/// Closed form of the 88-line code.
pub fn element_stiffness_q4(nu: f64) -> Result<ElementStiffness, FeaError> {
    check_poisson(nu)?;
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const PATTERN: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = 1.0 / (1.0 - nu * nu);
    let m = DMatrix::from_fn(8, 8, |i, j| scale * k[PATTERN[i][j]]);
    Ok(ElementStiffness::from_matrix(m))
}

/// Natural coordinates of the H8 corner nodes.
pub(crate) const H8_NODES: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Trilinear hexahedron on the unit cube, dofs `(u, v, w)` per node.
///
/// Every entry of `K_ab` is a sum of products of one-dimensional integrals of
/// the linear shape factors `(1 + s_a s) / 2`, which are evaluated in closed form.
pub fn element_stiffness_h8(nu: f64) -> Result<ElementStiffness, FeaError> {
    check_poisson(nu)?;
    let lambda = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = 1.0 / (2.0 * (1.0 + nu));

    // grad_int(a, b, k, l) = \int dN_a/dx_k dN_b/dx_l dV over the unit cube
    let grad_int = |a: usize, b: usize, k: usize, l: usize| -> f64 {
        let (sa, sb) = (H8_NODES[a], H8_NODES[b]);
        let mut prod = 1.0;
        for c in 0..3 {
            prod *= match (c == k, c == l) {
                (true, true) => sa[c] * sb[c] / 2.0,
                (true, false) => sa[c] / 2.0,
                (false, true) => sb[c] / 2.0,
                (false, false) => (1.0 + sa[c] * sb[c] / 3.0) / 2.0,
            };
        }
        // d/dx = 2 d/dxi per factor, dV = dxi / 8
        prod * 0.5
    };

    let mut m = DMatrix::zeros(24, 24);
    for a in 0..8 {
        for b in 0..8 {
            let trace: f64 = (0..3).map(|k| grad_int(a, b, k, k)).sum();
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = lambda * grad_int(a, b, i, j) + mu * grad_int(a, b, j, i);
                    if i == j {
                        v += mu * trace;
                    }
                    m[(3 * a + i, 3 * b + j)] = v;
                }
            }
        }
    }
    Ok(ElementStiffness::from_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SMatrix, SymmetricEigen};

    const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

    /// 2x2 Gauss quadrature of B^T D B for the plane-stress unit square.
    fn q4_quadrature(nu: f64) -> DMatrix<f64> {
        let d = SMatrix::<f64, 3, 3>::new(1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, (1.0 - nu) / 2.0)
            / (1.0 - nu * nu);
        let nodes = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
        let mut k = DMatrix::zeros(8, 8);
        for &xi in &GAUSS {
            for &eta in &GAUSS {
                let mut b = SMatrix::<f64, 3, 8>::zeros();
                for (a, n) in nodes.iter().enumerate() {
                    // physical = 2 * natural derivative on a unit square
                    let dx = 2.0 * 0.25 * n[0] * (1.0 + n[1] * eta);
                    let dy = 2.0 * 0.25 * n[1] * (1.0 + n[0] * xi);
                    b[(0, 2 * a)] = dx;
                    b[(1, 2 * a + 1)] = dy;
                    b[(2, 2 * a)] = dy;
                    b[(2, 2 * a + 1)] = dx;
                }
                let contrib = b.transpose() * d * b * 0.25; // det J = 1/4, weights 1
                for i in 0..8 {
                    for j in 0..8 {
                        k[(i, j)] += contrib[(i, j)];
                    }
                }
            }
        }
        k
    }

    /// 2x2x2 Gauss quadrature of B^T D B for the unit cube.
    fn h8_quadrature(nu: f64) -> DMatrix<f64> {
        let c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mut d = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = c * if i == j { 1.0 - nu } else { nu };
            }
            d[(i + 3, i + 3)] = c * (1.0 - 2.0 * nu) / 2.0;
        }
        let mut k = DMatrix::zeros(24, 24);
        for &xi in &GAUSS {
            for &eta in &GAUSS {
                for &zeta in &GAUSS {
                    let p = [xi, eta, zeta];
                    let mut b = SMatrix::<f64, 6, 24>::zeros();
                    for (a, n) in H8_NODES.iter().enumerate() {
                        let f = |c: usize| 1.0 + n[c] * p[c];
                        let g = [
                            2.0 * 0.125 * n[0] * f(1) * f(2),
                            2.0 * 0.125 * n[1] * f(0) * f(2),
                            2.0 * 0.125 * n[2] * f(0) * f(1),
                        ];
                        b[(0, 3 * a)] = g[0];
                        b[(1, 3 * a + 1)] = g[1];
                        b[(2, 3 * a + 2)] = g[2];
                        b[(3, 3 * a)] = g[1];
                        b[(3, 3 * a + 1)] = g[0];
                        b[(4, 3 * a + 1)] = g[2];
                        b[(4, 3 * a + 2)] = g[1];
                        b[(5, 3 * a)] = g[2];
                        b[(5, 3 * a + 2)] = g[0];
                    }
                    let contrib = b.transpose() * d * b * 0.125;
                    for i in 0..24 {
                        for j in 0..24 {
                            k[(i, j)] += contrib[(i, j)];
                        }
                    }
                }
            }
        }
        k
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn q4_matches_quadrature() {
        for nu in [0.3, 0.1, 0.45] {
            let ke = element_stiffness_q4(nu).unwrap();
            assert!(max_abs_diff(ke.matrix(), &q4_quadrature(nu)) < 1e-12, "nu = {nu}");
        }
    }

    #[test]
    fn h8_matches_quadrature() {
        for nu in [0.3, 0.2, 0.49] {
            let ke = element_stiffness_h8(nu).unwrap();
            assert!(max_abs_diff(ke.matrix(), &h8_quadrature(nu)) < 1e-12, "nu = {nu}");
        }
    }

    fn check_rigid_modes(ke: &ElementStiffness, dim: usize, expected_zero: usize) {
        let m = ke.matrix();
        assert!(max_abs_diff(m, &m.transpose()) < 1e-12 * m.abs().max());
        for axis in 0..dim {
            let t: Vec<f64> = (0..ke.size()).map(|i| if i % dim == axis { 1.0 } else { 0.0 }).collect();
            let kt = m * nalgebra::DVector::from_vec(t);
            assert!(kt.amax() < 1e-13, "translation {axis} not free");
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let zero = eig.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zero, expected_zero);
        assert!(eig.iter().all(|&v| v > -1e-10));
    }

    #[test]
    fn q4_rigid_body_modes() {
        check_rigid_modes(&element_stiffness_q4(0.3).unwrap(), 2, 3);
        check_rigid_modes(&element_stiffness_q4(0.05).unwrap(), 2, 3);
    }

    #[test]
    fn h8_rigid_body_modes() {
        check_rigid_modes(&element_stiffness_h8(0.3).unwrap(), 3, 6);
    }

    #[test]
    fn poisson_out_of_range() {
        assert!(matches!(element_stiffness_q4(0.6), Err(FeaError::PoissonRatio(_))));
        assert!(matches!(element_stiffness_h8(-0.1), Err(FeaError::PoissonRatio(_))));
        assert!(element_stiffness_q4(0.0).is_err());
    }

    #[test]
    fn bilinear_matches_dense_product() {
        let ke = element_stiffness_q4(0.3).unwrap();
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
        let dense = (nalgebra::DVector::from_vec(a.clone()).transpose()
            * ke.matrix()
            * nalgebra::DVector::from_vec(b.clone()))[(0, 0)];
        assert!((ke.bilinear(&a, &b) - dense).abs() < 1e-14);
    }
}
