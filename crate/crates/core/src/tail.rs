//! Extremal-dependence measures.
//!
//! Empirical estimators of the tail-correlation coefficient `chi_u` and its
//! companion `chibar_u`, the single-scale mixture limits, and the closed-form
//! limiting coefficients of the low-rank scale field (`chi_r`) and of the
//! full scale-mixture field (`chi_x`). The latter two are exact at
//! `beta = 0`; for `beta > 0` the limit is zero.

use serde::Serialize;

use crate::basis::BasisSystem;
use crate::error::{Result, ShotError};
use crate::mesh::Point;
use crate::model::MixParams;
use crate::spde::SpdeOperator;
use crate::special::student_t_sf;

/// An empirical tail-dependence estimate with its sampling error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiEstimate {
    /// The coefficient value (in `[0,1]` for chi, `[-1,1]` for chibar).
    pub value: f64,
    /// Quantile level the estimate was computed at.
    pub u: f64,
    /// Binomial / delta-method standard error.
    pub standard_error: f64,
    /// Number of conditioning exceedance pairs behind the estimate.
    pub n_pairs: usize,
}

/// Midranks (average ranks for ties), 1-based.
fn midranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("NaN in rank input"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // average of 1-based ranks i+1..=j+1
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair_input(x1: &[f64], x2: &[f64], u: f64) -> Result<()> {
    if x1.len() != x2.len() {
        return Err(ShotError::Dimension(format!(
            "paired samples of lengths {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(ShotError::Parameter(format!("u must lie in (0,1), got {u}")));
    }
    if (x1.len() as f64) < 1.0 / (1.0 - u) {
        return Err(ShotError::Data(format!(
            "sample of size {} cannot resolve level u = {u}",
            x1.len()
        )));
    }
    Ok(())
}

/// Empirical `chi_u`: the proportion of joint exceedances of the empirical
/// `u`-quantiles over the marginal exceedance proportion. Ranks use midranks
/// so tied data (rainfall zeros) are handled symmetrically; exceedances are
/// strict.
pub fn chi_u_empirical(x1: &[f64], x2: &[f64], u: f64) -> Result<ChiEstimate> {
    check_pair_input(x1, x2, u)?;
    let n = x1.len();
    let r1 = midranks(x1);
    let r2 = midranks(x2);
    let cut = u * n as f64;
    let mut n2 = 0usize;
    let mut joint = 0usize;
    for i in 0..n {
        let e2 = r2[i] > cut;
        if e2 {
            n2 += 1;
            if r1[i] > cut {
                joint += 1;
            }
        }
    }
    if n2 == 0 {
        return Err(ShotError::UndefinedEstimate(format!(
            "no marginal exceedances at level {u}"
        )));
    }
    let value = joint as f64 / n2 as f64;
    // Stabilized binomial SE so that 0 and n2 joint counts still produce a
    // usable uncertainty.
    let p = (joint as f64 + 0.5) / (n2 as f64 + 1.0);
    let standard_error = (p * (1.0 - p) / n2 as f64).sqrt();
    Ok(ChiEstimate {
        value,
        u,
        standard_error,
        n_pairs: n2,
    })
}

/// Empirical `chibar_u = 2 ln(1-u) / ln(survival copula at (u,u)) - 1`,
/// clamped to `[-1, 1]`, with a delta-method standard error.
pub fn chibar_u_empirical(x1: &[f64], x2: &[f64], u: f64) -> Result<ChiEstimate> {
    check_pair_input(x1, x2, u)?;
    let n = x1.len();
    let r1 = midranks(x1);
    let r2 = midranks(x2);
    let cut = u * n as f64;
    let joint = (0..n).filter(|&i| r1[i] > cut && r2[i] > cut).count();
    if joint == 0 {
        return Err(ShotError::UndefinedEstimate(format!(
            "no joint exceedances at level {u}"
        )));
    }
    let cbar = joint as f64 / n as f64;
    let raw = 2.0 * (1.0 - u).ln() / cbar.ln() - 1.0;
    let value = raw.clamp(-1.0, 1.0);
    let deriv = -2.0 * (1.0 - u).ln() / (cbar * cbar.ln().powi(2));
    let standard_error = deriv.abs() * (cbar * (1.0 - cbar) / n as f64).sqrt();
    Ok(ChiEstimate {
        value,
        u,
        standard_error,
        n_pairs: joint,
    })
}

/// Limiting `chi` of the single-scale mixture with Pareto scales:
/// `2 * T-survival( sqrt((gamma+1)(1-rho)/(1+rho)); gamma+1 )`.
pub fn hot_chi(gamma: f64, rho: f64) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    assert!((-1.0..=1.0).contains(&rho), "rho must lie in [-1, 1]");
    if rho == -1.0 {
        return 0.0; // limit: survival at +infinity
    }
    let arg = ((gamma + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt();
    2.0 * student_t_sf(arg, gamma + 1.0)
}

/// Limiting `chibar` of the single-scale mixture with Weibull scales:
/// `2 ((1+rho)/2)^(beta/(beta+2)) - 1`.
pub fn hot_chibar(beta: f64, rho: f64) -> f64 {
    assert!(beta > 0.0, "beta must be positive");
    assert!((-1.0..=1.0).contains(&rho), "rho must lie in [-1, 1]");
    2.0 * ((1.0 + rho) / 2.0).powf(beta / (beta + 2.0)) - 1.0
}

/// Limiting tail correlation of the scale field alone (`beta = 0`):
/// the sum of knot-wise minima of the rescaled weights. Independent of
/// `gamma`.
pub fn chi_r(basis: &BasisSystem, i: usize, j: usize) -> f64 {
    (0..basis.n_knots())
        .map(|k| basis.b(i, k).min(basis.b(j, k)))
        .sum()
}

/// Limiting tail correlation of the mixture field (`beta = 0`) between sites
/// `i` and `j`, given the correlation `rho` of the Gaussian component at that
/// site pair. The sum runs over knots covering both sites; at `rho = 1` a
/// `0/0` argument is taken as zero, which forces `chi_x(s, s) = 1`.
pub fn chi_x(basis: &BasisSystem, rho: f64, gamma: f64, i: usize, j: usize) -> f64 {
    assert!(gamma > 0.0, "gamma must be positive");
    assert!(rho > -1.0 && rho <= 1.0, "rho must lie in (-1, 1]");
    let df = gamma + 1.0;
    let mut total = 0.0;
    for k in 0..basis.n_knots() {
        let bi = basis.b(i, k);
        let bj = basis.b(j, k);
        if bi <= 0.0 || bj <= 0.0 {
            continue;
        }
        let term = |b_this: f64, b_other: f64| -> f64 {
            let num = (b_this / b_other).powf(1.0 / gamma) - rho;
            let arg = if rho == 1.0 {
                if num == 0.0 {
                    0.0
                } else if num > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                df.sqrt() * num / (1.0 - rho * rho).sqrt()
            };
            if arg == f64::INFINITY {
                0.0
            } else if arg == f64::NEG_INFINITY {
                b_this
            } else {
                b_this * student_t_sf(arg, df)
            }
        };
        total += term(bi, bj) + term(bj, bi);
    }
    total
}

/// One distance bin of a chi-vs-distance curve.
#[derive(Debug, Clone, Serialize)]
pub struct ChiCurveRow {
    pub distance_bin_center: f64,
    pub chi_mean: f64,
    pub chi_q025: f64,
    pub chi_q975: f64,
    pub n_pairs: usize,
}

/// Analytic limiting `chi_x` over all site pairs, binned by distance. The
/// Gaussian-component correlations come from the operator's implied
/// covariance, so the curve reflects the mesh-based field actually simulated.
/// For `beta > 0` the limit is identically zero.
pub fn chi_curve(
    sites: &[Point],
    basis: &BasisSystem,
    op: &SpdeOperator,
    mix: &MixParams,
    bin_width: f64,
) -> Result<Vec<ChiCurveRow>> {
    if !(bin_width > 0.0) {
        return Err(ShotError::Parameter(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let n = sites.len();
    if basis.n_sites() != n || op.n_sites() != n {
        return Err(ShotError::Dimension(
            "sites, basis and operator disagree on N".into(),
        ));
    }
    let cov = op.implied_covariance()?;
    let mut bins: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sites[i].dist(&sites[j]);
            let value = if mix.beta > 0.0 {
                0.0
            } else {
                let rho = (cov.at(i, j) / (cov.at(i, i) * cov.at(j, j)).sqrt())
                    .clamp(-0.999_999_999, 1.0);
                chi_x(basis, rho, mix.gamma, i, j)
            };
            let bin = (d / bin_width).floor() as usize;
            if bins.len() <= bin {
                bins.resize(bin + 1, Vec::new());
            }
            bins[bin].push(value);
        }
    }
    Ok(bins
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(b, mut v)| {
            v.sort_by(|a, c| a.partial_cmp(c).unwrap());
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            ChiCurveRow {
                distance_bin_center: (b as f64 + 0.5) * bin_width,
                chi_mean: mean,
                chi_q025: crate::special::quantile_type7_sorted(&v, 0.025),
                chi_q975: crate::special::quantile_type7_sorted(&v, 0.975),
                n_pairs: v.len(),
            }
        })
        .collect())
}
