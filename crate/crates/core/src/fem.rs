//! Piecewise-linear finite-element matrices on a triangulated mesh.
//!
//! With hat functions `zeta_j` attached to mesh vertices, the assembly
//! produces the lumped mass matrix `D` (diagonal, `D_jj = <zeta_j, 1>`), the
//! stiffness matrix `G1` (`G1[j1,j2] = <grad zeta_j1, grad zeta_j2>`), and
//! `G2 = G1 D^{-1} G1`. Mass lumping keeps `D` diagonal so that `G2`, and
//! hence the precision matrix built from these pieces, stays sparse.

use crate::error::Result;
use crate::mesh::TriMesh;
use crate::sparse::{CsrMatrix, Triplets};

/// Assembled finite-element matrices.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Diagonal of the lumped mass matrix.
    pub d: Vec<f64>,
    /// Stiffness matrix.
    pub g1: CsrMatrix,
    /// `G1 D^{-1} G1`.
    pub g2: CsrMatrix,
}

/// Assemble the finite-element matrices for a valid mesh.
pub fn fem_matrices(mesh: &TriMesh) -> Result<FemMatrices> {
    let n = mesh.n_vertices();
    let mut d = vec![0.0f64; n];
    let mut g1_t = Triplets::new(n, n);

    for t in 0..mesh.n_triangles() {
        let [ia, ib, ic] = mesh.triangles()[t];
        let verts = [ia, ib, ic];
        let p = [
            mesh.vertices()[ia],
            mesh.vertices()[ib],
            mesh.vertices()[ic],
        ];
        let area = mesh.triangle_area(t);
        // Hat-function gradients: grad zeta_i = (b_i, c_i) / (2 area), with
        // b_i = y_j - y_k and c_i = x_k - x_j for (i, j, k) cyclic.
        let mut b = [0.0f64; 3];
        let mut c = [0.0f64; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            b[i] = p[j].y - p[k].y;
            c[i] = p[k].x - p[j].x;
        }
        for i in 0..3 {
            d[verts[i]] += area / 3.0;
            for j in 0..3 {
                let val = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                g1_t.push(verts[i], verts[j], val);
            }
        }
    }

    let g1 = g1_t.to_csr();

    // G2 = G1 D^{-1} G1 by explicit triple product; rows of G1 are short.
    let mut g2_t = Triplets::new(n, n);
    for i in 0..n {
        let (cols_i, vals_i) = g1.row(i);
        for (k, v_ik) in cols_i.iter().zip(vals_i) {
            let w = v_ik / d[*k];
            let (cols_k, vals_k) = g1.row(*k);
            for (j, v_kj) in cols_k.iter().zip(vals_k) {
                g2_t.push(i, *j, w * v_kj);
            }
        }
    }
    let g2 = g2_t.to_csr();

    Ok(FemMatrices { d, g1, g2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Point, Rect, TriMesh};
    use approx::assert_relative_eq;

    #[test]
    fn lumped_mass_sums_to_mesh_area() {
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 2.0, 1.5), 0.3, 0.2).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let trace: f64 = fem.d.iter().sum();
        assert_relative_eq!(trace, mesh.total_area(), epsilon = 1e-10);
        assert!(fem.d.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = build_rect_mesh(Rect::new(-1.0, 0.0, 1.0, 1.0), 0.4, 0.0).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let g1_ones = fem.g1.mul_vec(&ones);
        for v in g1_ones {
            assert!(v.abs() < 1e-12, "row sum {v}");
        }
    }

    #[test]
    fn unit_right_triangle_lumped_mass() {
        let verts = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        let mesh = TriMesh::new(verts, vec![[0, 1, 2]], 0.0).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        for j in 0..3 {
            assert_relative_eq!(fem.d[j], 1.0 / 6.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn g2_is_symmetric_positive_semidefinite() {
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.25, 0.0).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        assert!(fem.g2.max_symmetry_violation() < 1e-12);
        // x' G2 x = |D^{-1/2} G1 x|^2 >= 0 for a few probe vectors.
        let n = mesh.n_vertices();
        for probe in 0..5 {
            let x: Vec<f64> = (0..n).map(|i| ((i * 31 + probe * 7) as f64).sin()).collect();
            assert!(fem.g2.quad_form(&x) >= -1e-10);
        }
    }

    #[test]
    fn g2_equals_triple_product_on_small_mesh() {
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.5, 0.0).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let n = mesh.n_vertices();
        // Dense check of G2 = G1 D^{-1} G1.
        for i in 0..n {
            for j in 0..n {
                let mut expect = 0.0;
                for k in 0..n {
                    expect += fem.g1.get(i, k) * fem.g1.get(k, j) / fem.d[k];
                }
                assert_relative_eq!(fem.g2.get(i, j), expect, epsilon = 1e-12);
            }
        }
    }
}
