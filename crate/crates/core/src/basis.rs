//! Compactly-supported Wendland basis systems for the random scale field.
//!
//! Knots are picked from mesh nodes near the data (`candidate_knots`), spread
//! out by a greedy maximum-minimum ordering (`maxmin_order`), and turned into
//! rescaled order-2 Wendland weights that sum to one at every site
//! (`basis_system`). The covering bounds `phi_min`/`phi_max` delimit the
//! usable range of the basis range parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShotError};
use crate::mesh::Point;
use crate::sparse::DenseMatrix;

/// Order-2 Wendland weight:
/// `(1 - d/phi)^6 (35 d^2/phi^2 + 18 d/phi + 3)` for `d < phi`, else zero.
/// The support boundary is exclusive: `d = phi` gives exactly zero.
pub fn wendland2(d: f64, phi: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(ShotError::Parameter(format!(
            "distance must be nonnegative, got {d}"
        )));
    }
    if !(phi > 0.0) {
        return Err(ShotError::Parameter(format!(
            "range phi must be positive, got {phi}"
        )));
    }
    if d >= phi {
        return Ok(0.0);
    }
    let u = d / phi;
    Ok((1.0 - u).powi(6) * (35.0 * u * u + 18.0 * u + 3.0))
}

/// Ordered knot locations produced by [`maxmin_order`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnotSet {
    knots: Vec<Point>,
    /// Indices of the chosen knots into the candidate list.
    selected: Vec<usize>,
    /// Candidate-set radius fraction, when the knots came from
    /// [`candidate_knots`].
    pub candidate_radius_fraction: Option<f64>,
}

impl KnotSet {
    pub fn knots(&self) -> &[Point] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn selected_indices(&self) -> &[usize] {
        &self.selected
    }
}

/// Mesh-node indices within `c` times each site's maximum node distance,
/// deduplicated and returned in mesh-node index order.
pub fn candidate_knots(mesh_nodes: &[Point], sites: &[Point], c: f64) -> Result<Vec<usize>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(ShotError::Parameter(format!(
            "candidate radius fraction c must lie in (0, 1], got {c}"
        )));
    }
    if mesh_nodes.is_empty() || sites.is_empty() {
        return Err(ShotError::KnotSelection(
            "mesh nodes and sites must be nonempty".into(),
        ));
    }
    let mut keep = vec![false; mesh_nodes.len()];
    for site in sites {
        let max_d = mesh_nodes
            .iter()
            .map(|n| site.dist(n))
            .fold(0.0f64, f64::max);
        let radius = c * max_d;
        for (j, node) in mesh_nodes.iter().enumerate() {
            if site.dist(node) <= radius {
                keep[j] = true;
            }
        }
    }
    let out: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter_map(|(j, &k)| k.then_some(j))
        .collect();
    if out.is_empty() {
        return Err(ShotError::KnotSelection(format!(
            "no mesh node falls within the candidate radius (c = {c})"
        )));
    }
    Ok(out)
}

/// Greedy space-filling ordering: the first knot is the most central
/// candidate (least average distance to the others), each next knot
/// maximizes the minimum distance to those already chosen. Ties break toward
/// the lowest candidate index, making the ordering deterministic.
pub fn maxmin_order(candidates: &[Point], k: usize) -> Result<KnotSet> {
    if k == 0 || k > candidates.len() {
        return Err(ShotError::KnotSelection(format!(
            "requested {k} knots from {} candidates",
            candidates.len()
        )));
    }
    let n = candidates.len();
    let mut selected: Vec<usize> = Vec::with_capacity(k);

    let first = (0..n)
        .min_by(|&a, &b| {
            let avg = |i: usize| -> f64 {
                candidates
                    .iter()
                    .map(|p| candidates[i].dist(p))
                    .sum::<f64>()
            };
            avg(a).partial_cmp(&avg(b)).unwrap().then(a.cmp(&b))
        })
        .unwrap();
    selected.push(first);

    // min_dist[j] = distance from candidate j to the nearest selected knot.
    let mut min_dist: Vec<f64> = candidates
        .iter()
        .map(|p| p.dist(&candidates[first]))
        .collect();
    while selected.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (j, &d) in min_dist.iter().enumerate() {
            if selected.contains(&j) {
                continue;
            }
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        selected.push(best);
        for (j, md) in min_dist.iter_mut().enumerate() {
            *md = md.min(candidates[j].dist(&candidates[best]));
        }
    }
    let knots = selected.iter().map(|&j| candidates[j]).collect();
    Ok(KnotSet {
        knots,
        selected,
        candidate_radius_fraction: None,
    })
}

/// Full knot-selection pipeline: candidate set, then max-min ordering.
pub fn select_knots(
    mesh_nodes: &[Point],
    sites: &[Point],
    c: f64,
    k: usize,
) -> Result<KnotSet> {
    let cand_idx = candidate_knots(mesh_nodes, sites, c)?;
    let cand_pts: Vec<Point> = cand_idx.iter().map(|&j| mesh_nodes[j]).collect();
    let mut ks = maxmin_order(&cand_pts, k)?;
    ks.selected = ks.selected.iter().map(|&j| cand_idx[j]).collect();
    ks.candidate_radius_fraction = Some(c);
    Ok(ks)
}

/// Covering bounds:
/// `phi_min = max_site min_knot d` (smallest range covering every site) and
/// `phi_max = min_knot max_site d` (smallest range at which a single knot
/// covers all sites).
pub fn phi_bounds(sites: &[Point], knots: &KnotSet) -> (f64, f64) {
    assert!(!sites.is_empty() && !knots.is_empty());
    let phi_min = sites
        .iter()
        .map(|s| {
            knots
                .knots()
                .iter()
                .map(|t| s.dist(t))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0f64, f64::max);
    let phi_max = knots
        .knots()
        .iter()
        .map(|t| sites.iter().map(|s| s.dist(t)).fold(0.0f64, f64::max))
        .fold(f64::INFINITY, f64::min);
    (phi_min, phi_max)
}

/// Rescaled Wendland weights at every site, with the raw (unrescaled) values
/// kept alongside.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    /// `N x K` rescaled weights; every row sums to one.
    b: DenseMatrix,
    /// `N x K` raw Wendland values.
    raw: DenseMatrix,
    phi: f64,
    knots: Vec<Point>,
}

impl BasisSystem {
    pub fn n_sites(&self) -> usize {
        self.b.n_rows()
    }

    pub fn n_knots(&self) -> usize {
        self.b.n_cols()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn knots(&self) -> &[Point] {
        &self.knots
    }

    /// Rescaled weight of knot `k` at site `i`.
    pub fn b(&self, i: usize, k: usize) -> f64 {
        self.b.at(i, k)
    }

    /// Raw Wendland value of knot `k` at site `i`.
    pub fn raw(&self, i: usize, k: usize) -> f64 {
        self.raw.at(i, k)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.b.row_slice(i)
    }

    /// For each knot, the sites with strictly positive weight.
    pub fn knot_support(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_knots()];
        for i in 0..self.n_sites() {
            for (k, support) in out.iter_mut().enumerate() {
                if self.b.at(i, k) > 0.0 {
                    support.push(i);
                }
            }
        }
        out
    }

    /// Build a system directly from basis rows (weights are rescaled to sum
    /// to one). Used in tests and analytics where rows are specified rather
    /// than derived from geometry.
    pub fn from_rows(rows: Vec<Vec<f64>>, phi: f64) -> Result<BasisSystem> {
        let n = rows.len();
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        if n == 0 || k == 0 {
            return Err(ShotError::Dimension("empty basis rows".into()));
        }
        let mut raw = DenseMatrix::zeros(n, k);
        let mut b = DenseMatrix::zeros(n, k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(ShotError::Dimension("ragged basis rows".into()));
            }
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0) {
                return Err(ShotError::Coverage { index: i, phi });
            }
            for (kk, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    return Err(ShotError::Parameter("negative basis weight".into()));
                }
                *raw.at_mut(i, kk) = v;
                *b.at_mut(i, kk) = v / sum;
            }
        }
        Ok(BasisSystem {
            b,
            raw,
            phi,
            knots: Vec::new(),
        })
    }
}

/// Evaluate the rescaled Wendland system of `knots` at `sites` with range
/// `phi`. Fails with a coverage error naming the first site whose raw row is
/// all zero (equivalently, whenever `phi <= phi_min`).
pub fn basis_system(sites: &[Point], knots: &KnotSet, phi: f64) -> Result<BasisSystem> {
    if !(phi > 0.0) {
        return Err(ShotError::Parameter(format!(
            "range phi must be positive, got {phi}"
        )));
    }
    let n = sites.len();
    let k = knots.len();
    let mut raw = DenseMatrix::zeros(n, k);
    let mut b = DenseMatrix::zeros(n, k);
    for i in 0..n {
        let mut sum = 0.0;
        for (kk, knot) in knots.knots().iter().enumerate() {
            let v = wendland2(sites[i].dist(knot), phi)?;
            *raw.at_mut(i, kk) = v;
            sum += v;
        }
        if !(sum > 0.0) {
            return Err(ShotError::Coverage { index: i, phi });
        }
        for kk in 0..k {
            *b.at_mut(i, kk) = raw.at(i, kk) / sum;
        }
    }
    Ok(BasisSystem {
        b,
        raw,
        phi,
        knots: knots.knots().to_vec(),
    })
}

/// The default range grid used when fitting: interpolants between the
/// covering bounds at fractions 3/4:1/4, 1/2:1/2 and 1/4:3/4.
pub fn default_phi_grid(phi_min: f64, phi_max: f64) -> [f64; 3] {
    [
        0.75 * phi_min + 0.25 * phi_max,
        0.5 * phi_min + 0.5 * phi_max,
        0.25 * phi_min + 0.75 * phi_max,
    ]
}
