//! Sparse SPDE precision operator and site projection.
//!
//! The Gaussian field component is a Markov random field over the mesh nodes
//! with precision
//!
//! ```text
//! Q_psi = (psi^2 / 4 pi) [ psi^-4 D + 2 psi^-2 G1 + G2 ],
//! ```
//!
//! whose inverse approximates a unit-variance Matern(nu = 1) covariance with
//! range `psi`. Observation sites are tied to the mesh through the projection
//! matrix `A` of hat-function values (barycentric coordinates), and a nugget
//! with variance share `1 - r` completes the field:
//! `cov = r A Q^{-1} A' + (1 - r) I`.

use std::f64::consts::PI;

use crate::error::{Result, ShotError};
use crate::fem::FemMatrices;
use crate::mesh::{Point, TriLocator, TriMesh};
use crate::sparse::{CsrMatrix, DenseMatrix, LdlFactor, Ordering, Triplets};

/// Guard for dense covariance output.
pub const DENSE_COVARIANCE_GUARD: usize = 2000;

/// Precision matrix `Q_psi` of the GMRF weights.
pub fn precision_matrix(fem: &FemMatrices, psi: f64) -> Result<CsrMatrix> {
    if !(psi > 0.0) {
        return Err(ShotError::Parameter(format!(
            "correlation range psi must be positive, got {psi}"
        )));
    }
    let d = CsrMatrix::from_diagonal(&fem.d);
    let mut q = d
        .add_scaled(&fem.g1, 2.0 * psi * psi)
        .add_scaled(&fem.g2, psi.powi(4));
    // The D + 2 psi^2 G1 + psi^4 G2 combination above is psi^4 [psi^-4 D + ...].
    q.scale(psi * psi / (4.0 * PI) / psi.powi(4));
    Ok(q)
}

/// Projection matrix `A` with row `i` holding the barycentric coordinates of
/// site `i` inside its containing triangle.
pub fn projection_matrix(mesh: &TriMesh, sites: &[Point]) -> Result<CsrMatrix> {
    let locator = TriLocator::new(mesh);
    let mut t = Triplets::new(sites.len(), mesh.n_vertices());
    for (i, site) in sites.iter().enumerate() {
        let (tri, w) = locator.locate(site).ok_or(ShotError::OutOfDomain {
            index: i,
            x: site.x,
            y: site.y,
        })?;
        let [va, vb, vc] = mesh.triangles()[tri];
        // Clamp the tiny negatives allowed by the locator tolerance.
        t.push(i, va, w[0].max(0.0));
        t.push(i, vb, w[1].max(0.0));
        t.push(i, vc, w[2].max(0.0));
    }
    Ok(t.to_csr())
}

/// The assembled SPDE operator: sparse precision, cached factorization and
/// site projection. Immutable after construction and shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct SpdeOperator {
    q: CsrMatrix,
    chol: LdlFactor,
    a: CsrMatrix,
    psi: f64,
    r: f64,
}

impl SpdeOperator {
    /// Assemble the operator for given range and variance ratio.
    pub fn assemble(
        mesh: &TriMesh,
        fem: &FemMatrices,
        sites: &[Point],
        psi: f64,
        r: f64,
    ) -> Result<SpdeOperator> {
        if !(0.0..=1.0).contains(&r) {
            return Err(ShotError::Parameter(format!(
                "variance ratio r must lie in [0,1], got {r}"
            )));
        }
        let q = precision_matrix(fem, psi)?;
        let chol = LdlFactor::factor(&q, Ordering::Rcm)?;
        let a = projection_matrix(mesh, sites)?;
        Ok(SpdeOperator { q, chol, a, psi, r })
    }

    /// Rebuild with a new range, reusing the projection. Used by the sampler
    /// when proposing `psi`.
    pub fn with_psi(&self, fem: &FemMatrices, psi: f64) -> Result<SpdeOperator> {
        let q = precision_matrix(fem, psi)?;
        let chol = LdlFactor::factor(&q, Ordering::Rcm)?;
        Ok(SpdeOperator {
            q,
            chol,
            a: self.a.clone(),
            psi,
            r: self.r,
        })
    }

    /// Same operator with a different nugget share (`Q` unchanged).
    pub fn with_r(&self, r: f64) -> Result<SpdeOperator> {
        if !(0.0..=1.0).contains(&r) {
            return Err(ShotError::Parameter(format!(
                "variance ratio r must lie in [0,1], got {r}"
            )));
        }
        let mut op = self.clone();
        op.r = r;
        Ok(op)
    }

    pub fn q(&self) -> &CsrMatrix {
        &self.q
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn chol(&self) -> &LdlFactor {
        &self.chol
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Smoothness is fixed at one throughout.
    pub fn nu(&self) -> f64 {
        1.0
    }

    pub fn n_nodes(&self) -> usize {
        self.q.n_rows()
    }

    pub fn n_sites(&self) -> usize {
        self.a.n_rows()
    }

    /// Log-determinant of `Q`.
    pub fn ln_det_q(&self) -> f64 {
        self.chol.ln_det()
    }

    /// Dense covariance `r A Q^{-1} A' + (1 - r) I` of the projected field.
    /// Validation-scale only.
    pub fn implied_covariance(&self) -> Result<DenseMatrix> {
        let n = self.n_sites();
        if n > DENSE_COVARIANCE_GUARD {
            return Err(ShotError::Dimension(format!(
                "implied_covariance guard: {n} sites exceeds {DENSE_COVARIANCE_GUARD}"
            )));
        }
        let n_star = self.n_nodes();
        let mut cov = DenseMatrix::zeros(n, n);
        // One sparse solve per site: column j of Q^{-1} A'.
        for j in 0..n {
            let mut rhs = vec![0.0; n_star];
            let (cols, vals) = self.a.row(j);
            for (c, v) in cols.iter().zip(vals) {
                rhs[*c] = *v;
            }
            let x = self.chol.solve(&rhs);
            let col = self.a.mul_vec(&x);
            for i in 0..n {
                *cov.at_mut(i, j) += self.r * col[i];
            }
            *cov.at_mut(j, j) += 1.0 - self.r;
        }
        Ok(cov)
    }

    /// Marginal variances `diag(A Q^{-1} A')` of the mesh-projected field
    /// (without nugget), one sparse solve per site.
    pub fn projected_marginal_variances(&self) -> Vec<f64> {
        let n_star = self.n_nodes();
        (0..self.n_sites())
            .map(|i| {
                let mut rhs = vec![0.0; n_star];
                let (cols, vals) = self.a.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    rhs[*c] = *v;
                }
                let x = self.chol.solve(&rhs);
                cols.iter().zip(vals).map(|(c, v)| v * x[*c]).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::fem_matrices;
    use crate::mesh::{build_rect_mesh, Rect};
    use crate::model::matern_rho;
    use crate::sparse::Triplets;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn small_setup() -> (TriMesh, FemMatrices) {
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.12, 0.3).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        (mesh, fem)
    }

    #[test]
    fn identity_reduction() {
        // With G1 = G2 = 0 and D = I the formula collapses to Q = I / (4 pi).
        let fem = FemMatrices {
            d: vec![1.0; 4],
            g1: Triplets::new(4, 4).to_csr(),
            g2: Triplets::new(4, 4).to_csr(),
        };
        let q = precision_matrix(&fem, 1.0).unwrap();
        for i in 0..4 {
            assert_relative_eq!(q.get(i, i), 1.0 / (4.0 * PI), epsilon = 1e-15);
        }
        assert_eq!(q.nnz(), 4);
    }

    #[test]
    fn nonpositive_psi_is_rejected() {
        let (_, fem) = small_setup();
        assert!(precision_matrix(&fem, 0.0).is_err());
        assert!(precision_matrix(&fem, -1.0).is_err());
    }

    #[test]
    fn q_is_symmetric_and_choleskyable() {
        let (_, fem) = small_setup();
        for psi in [0.05, 0.2, 1.0] {
            let q = precision_matrix(&fem, psi).unwrap();
            assert!(q.max_symmetry_violation() < 1e-11);
            assert!(LdlFactor::factor(&q, Ordering::Rcm).is_ok());
        }
    }

    #[test]
    fn projection_row_at_node_is_unit_vector() {
        let (mesh, _) = small_setup();
        let node = mesh.vertices()[17];
        let a = projection_matrix(&mesh, &[node]).unwrap();
        let (cols, vals) = a.row(0);
        let sum: f64 = vals.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        let max = vals.iter().cloned().fold(0.0f64, f64::max);
        assert_relative_eq!(max, 1.0, epsilon = 1e-12);
        assert!(cols.contains(&17));
    }

    #[test]
    fn projection_row_at_centroid_is_third_each() {
        let (mesh, _) = small_setup();
        let [a_idx, b_idx, c_idx] = mesh.triangles()[5];
        let (pa, pb, pc) = (
            mesh.vertices()[a_idx],
            mesh.vertices()[b_idx],
            mesh.vertices()[c_idx],
        );
        let centroid = Point::new((pa.x + pb.x + pc.x) / 3.0, (pa.y + pb.y + pc.y) / 3.0);
        let a = projection_matrix(&mesh, &[centroid]).unwrap();
        let (_, vals) = a.row(0);
        assert_eq!(vals.len(), 3);
        for v in vals {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn projection_rows_sum_to_one_for_interior_sites() {
        let (mesh, _) = small_setup();
        let sites: Vec<Point> = (0..50)
            .map(|i| {
                Point::new(
                    0.05 + 0.9 * ((i * 37 % 101) as f64 / 101.0),
                    0.05 + 0.9 * ((i * 59 % 103) as f64 / 103.0),
                )
            })
            .collect();
        let a = projection_matrix(&mesh, &sites).unwrap();
        for i in 0..sites.len() {
            let (_, vals) = a.row(i);
            assert!(vals.len() <= 3);
            assert!(vals.iter().all(|&v| v >= 0.0));
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn site_outside_hull_names_the_site() {
        let (mesh, _) = small_setup();
        let err = projection_matrix(&mesh, &[Point::new(0.5, 0.5), Point::new(9.0, 9.0)])
            .unwrap_err();
        match err {
            ShotError::OutOfDomain { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sparse_covariance_matches_dense_inverse() {
        // Oracle on a <= 200-node mesh: dense inversion of Q.
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.1, 0.0).unwrap();
        assert!(mesh.n_vertices() <= 200, "mesh has {}", mesh.n_vertices());
        let fem = fem_matrices(&mesh).unwrap();
        let sites: Vec<Point> = (0..20)
            .map(|i| {
                Point::new(
                    0.1 + 0.8 * ((i * 7 % 19) as f64 / 19.0),
                    0.1 + 0.8 * ((i * 11 % 23) as f64 / 23.0),
                )
            })
            .collect();
        let op = SpdeOperator::assemble(&mesh, &fem, &sites, 0.3, 0.8).unwrap();
        let cov = op.implied_covariance().unwrap();

        let n_star = mesh.n_vertices();
        let qd = DMatrix::from_fn(n_star, n_star, |i, j| op.q().get(i, j));
        let qinv = qd.try_inverse().expect("invertible");
        let ad = DMatrix::from_fn(sites.len(), n_star, |i, j| op.a().get(i, j));
        let dense = &ad * qinv * ad.transpose();
        for i in 0..sites.len() {
            for j in 0..sites.len() {
                let expect = 0.8 * dense[(i, j)] + if i == j { 0.2 } else { 0.0 };
                assert!(
                    (cov.at(i, j) - expect).abs() < 1e-10,
                    "cov[{i},{j}] = {} vs {expect}",
                    cov.at(i, j)
                );
            }
        }
    }

    #[test]
    fn pure_nugget_covariance_is_identity() {
        let (mesh, fem) = small_setup();
        let sites = vec![Point::new(0.3, 0.4), Point::new(0.6, 0.7)];
        let op = SpdeOperator::assemble(&mesh, &fem, &sites, 0.2, 0.0).unwrap();
        let cov = op.implied_covariance().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(cov.at(i, j), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn full_spatial_share_at_node_matches_q_inverse_diagonal() {
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.2, 0.0).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let node_idx = 12;
        let site = mesh.vertices()[node_idx];
        let op = SpdeOperator::assemble(&mesh, &fem, &[site], 0.25, 1.0).unwrap();
        let cov = op.implied_covariance().unwrap();
        let n_star = mesh.n_vertices();
        let qd = DMatrix::from_fn(n_star, n_star, |i, j| op.q().get(i, j));
        let qinv = qd.try_inverse().unwrap();
        assert_relative_eq!(cov.at(0, 0), qinv[(node_idx, node_idx)], epsilon = 1e-10);
    }

    #[test]
    fn covariance_guard_rejects_large_site_sets() {
        let (mesh, fem) = small_setup();
        let sites: Vec<Point> = (0..DENSE_COVARIANCE_GUARD + 1)
            .map(|i| Point::new(0.5 + 1e-6 * i as f64, 0.5))
            .collect();
        let op = SpdeOperator::assemble(&mesh, &fem, &sites, 0.2, 0.9).unwrap();
        assert!(op.implied_covariance().is_err());
    }

    #[test]
    fn interior_marginal_variances_are_near_one() {
        // The 4 pi / psi^2 scaling targets unit variance away from the
        // boundary; the mesh extension absorbs edge inflation.
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), 0.05, 0.5).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let sites: Vec<Point> = (0..16)
            .map(|i| Point::new(0.2 + 0.6 * ((i % 4) as f64 / 3.0), 0.2 + 0.6 * ((i / 4) as f64 / 3.0)))
            .collect();
        let op = SpdeOperator::assemble(&mesh, &fem, &sites, 0.15, 1.0).unwrap();
        for v in op.projected_marginal_variances() {
            assert!((v - 1.0).abs() < 0.05, "marginal variance {v}");
        }
    }

    #[test]
    fn covariance_tracks_matern_correlation() {
        // Matern agreement on interior pairs at distances within [0.1 psi, 3 psi].
        let psi = 0.15 * (2.0f64).sqrt();
        let mesh = build_rect_mesh(Rect::new(0.0, 0.0, 1.0, 1.0), psi / 5.0, 0.5).unwrap();
        let fem = fem_matrices(&mesh).unwrap();
        let grid = 8;
        let sites: Vec<Point> = (0..grid * grid)
            .map(|i| {
                Point::new(
                    0.15 + 0.7 * ((i % grid) as f64 / (grid - 1) as f64),
                    0.15 + 0.7 * ((i / grid) as f64 / (grid - 1) as f64),
                )
            })
            .collect();
        let r = 0.9;
        let op = SpdeOperator::assemble(&mesh, &fem, &sites, psi, r).unwrap();
        let cov = op.implied_covariance().unwrap();
        let mut checked = 0;
        let mut worst = 0.0f64;
        for i in 0..sites.len() {
            for j in (i + 1)..sites.len() {
                let d = sites[i].dist(&sites[j]);
                if d < 0.1 * psi || d > 3.0 * psi {
                    continue;
                }
                let rho = matern_rho(d, psi, r).unwrap();
                worst = worst.max((cov.at(i, j) - rho).abs());
                checked += 1;
            }
        }
        assert!(checked > 100);
        assert!(worst <= 0.05, "max |cov - matern| = {worst}");
    }
}
