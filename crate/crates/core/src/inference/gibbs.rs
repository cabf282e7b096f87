//! Conjugate Gibbs blocks.
//!
//! `gibbs_eps` draws the per-replicate GMRF weights from their Gaussian full
//! conditional with sparse precision `tau P`, `P = Q + r/(1-r) A'A`; the
//! factorization of `P` is shared across replicates. The Gaussian/Gamma
//! hyperparameter blocks (`mu`, `theta`, `tau_mu`, `tau`) are exact
//! conjugate draws on complete (imputed) data; the derivations live in
//! `docs/conditionals.md` and are pinned by dense-oracle tests.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::rngstream::{stream_rng, Phase};
use crate::sparse::{CsrMatrix, DenseCholesky, DenseMatrix, LdlFactor};

use super::{ChainConfig, ChainState, ChainWorkspace, Dataset};

/// Conditional precision pattern of one replicate's GMRF weights (up to the
/// global factor `tau`): `P = Q + r/(1-r) A'A`.
pub fn eps_precision_matrix(q: &CsrMatrix, a: &CsrMatrix, r: f64) -> CsrMatrix {
    q.add_scaled(&a.ata(), r / (1.0 - r))
}

/// Conditional mean of one replicate's weights:
/// `P^{-1} (sqrt(r)/(1-r)) A' e_tilde` with `e_tilde = (y - mu) / R`.
/// Multiplying by `sqrt(tau)` gives the unit-prior-scale mean.
pub fn eps_conditional_mean(
    p_factor: &LdlFactor,
    a: &CsrMatrix,
    e_tilde: &[f64],
    r: f64,
) -> Vec<f64> {
    let mut rhs = a.tr_mul_vec(e_tilde);
    let c = r.sqrt() / (1.0 - r);
    for v in &mut rhs {
        *v *= c;
    }
    p_factor.solve(&rhs)
}

/// Gibbs update of all replicates' GMRF weights, data-parallel across
/// replicates.
pub fn gibbs_eps(state: &mut ChainState, ws: &ChainWorkspace, data: &Dataset, seed: u64) {
    let n = data.n_sites();
    let t_count = data.n_reps();
    let iter = state.iter;
    let r = state.params.r;
    let inv_sqrt_tau = state.params.tau.powf(-0.5);
    let mu = &state.params.mu;
    let y = &state.y;
    let scale = &state.scale;
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..t_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, Phase::GibbsEps, iter, t as u64);
            let e_tilde: Vec<f64> = (0..n)
                .map(|i| (y.at(i, t) - mu[i]) / scale[t][i])
                .collect();
            let mean = eps_conditional_mean(&ws.p_factor, ws.op.a(), &e_tilde, r);
            let noise = ws.p_factor.sample_zero_mean(&mut rng);
            let eps_t: Vec<f64> = mean
                .iter()
                .zip(noise)
                .map(|(m, z)| m + inv_sqrt_tau * z)
                .collect();
            let a_eps_t = ws.op.a().mul_vec(&eps_t);
            (eps_t, a_eps_t)
        })
        .collect();
    for (t, (eps_t, a_eps_t)) in results.into_iter().enumerate() {
        state.eps[t] = eps_t;
        state.a_eps[t] = a_eps_t;
    }
}

/// Per-site conditional moments of `mu` given everything else:
/// returns `(means, precisions)`.
pub fn mu_conditional_moments(state: &ChainState, data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.n_sites();
    let t_count = data.n_reps();
    let r = state.params.r;
    let tau = state.params.tau;
    let tau_mu = state.params.tau_mu;
    let sqrt_r = r.sqrt();
    let one_minus_r = 1.0 - r;
    let mut means = vec![0.0; n];
    let mut precisions = vec![0.0; n];
    for i in 0..n {
        let d = data.covariates.row_slice(i);
        let prior_mean: f64 = d
            .iter()
            .zip(state.params.theta.iter())
            .map(|(a, b)| a * b)
            .sum();
        let mut info = 0.0;
        let mut weighted = 0.0;
        for t in 0..t_count {
            let s = state.scale[t][i];
            let v = one_minus_r * s * s;
            info += 1.0 / v;
            weighted += (state.y.at(i, t) - sqrt_r * s * state.a_eps[t][i]) / v;
        }
        let prec = tau_mu + tau * info;
        means[i] = (tau_mu * prior_mean + tau * weighted) / prec;
        precisions[i] = prec;
    }
    (means, precisions)
}

/// Conditional moments of the covariate coefficients given `mu` and `tau_mu`:
/// returns `(mean, precision matrix)`.
pub fn theta_conditional_moments(
    state: &ChainState,
    data: &Dataset,
    theta_sd: f64,
) -> ([f64; 4], DenseMatrix) {
    let n = data.n_sites();
    let tau_mu = state.params.tau_mu;
    let mut lambda = DenseMatrix::zeros(4, 4);
    let mut b = [0.0f64; 4];
    for p in 0..4 {
        *lambda.at_mut(p, p) = 1.0 / (theta_sd * theta_sd);
    }
    for i in 0..n {
        let d = data.covariates.row_slice(i);
        for p in 0..4 {
            b[p] += tau_mu * d[p] * state.params.mu[i];
            for q in 0..4 {
                *lambda.at_mut(p, q) += tau_mu * d[p] * d[q];
            }
        }
    }
    let chol = DenseCholesky::factor(&lambda).expect("theta precision is SPD");
    let mean_vec = chol.solve(&b);
    ([mean_vec[0], mean_vec[1], mean_vec[2], mean_vec[3]], lambda)
}

/// Shape and rate of the Gamma full conditional of `tau` (the stored
/// observation-scale weights are held fixed).
pub fn tau_conditional_shape_rate(
    state: &ChainState,
    ws: &ChainWorkspace,
    data: &Dataset,
    prior_shape: f64,
    prior_rate: f64,
) -> (f64, f64) {
    let n = data.n_sites();
    let t_count = data.n_reps();
    let n_star = ws.op.n_nodes();
    let r = state.params.r;
    let sqrt_r = r.sqrt();
    let one_minus_r = 1.0 - r;
    let mut quad = 0.0;
    for t in 0..t_count {
        quad += ws.op.q().quad_form(&state.eps[t]);
    }
    let mut rss = 0.0;
    for t in 0..t_count {
        for i in 0..n {
            let s = state.scale[t][i];
            let res = state.y.at(i, t) - state.params.mu[i] - sqrt_r * s * state.a_eps[t][i];
            rss += res * res / (one_minus_r * s * s);
        }
    }
    let shape = prior_shape + 0.5 * (t_count * (n_star + n)) as f64;
    let rate = prior_rate + 0.5 * (quad + rss);
    (shape, rate)
}

/// Gibbs sweep over the Gaussian/Gamma hyperparameter blocks, in the order
/// `mu`, `theta`, `tau_mu`, `tau`.
pub fn gibbs_gaussian_blocks(
    state: &mut ChainState,
    ws: &ChainWorkspace,
    data: &Dataset,
    config: &ChainConfig,
) {
    let mut rng = stream_rng(config.seed, Phase::GibbsHyper, state.iter, 0);
    let n = data.n_sites();

    // mu(s_i), independent across sites given the rest.
    let (means, precisions) = mu_conditional_moments(state, data);
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        state.params.mu[i] = means[i] + z / precisions[i].sqrt();
    }

    // theta | mu, tau_mu.
    let (mean, lambda) = theta_conditional_moments(state, data, config.priors.theta_sd);
    let chol = DenseCholesky::factor(&lambda).expect("theta precision is SPD");
    let noise = chol.sample_zero_mean(&mut rng);
    for p in 0..4 {
        state.params.theta[p] = mean[p] + noise[p];
    }

    // tau_mu | mu, theta.
    let mut ss = 0.0;
    for i in 0..n {
        let d = data.covariates.row_slice(i);
        let fitted: f64 = d
            .iter()
            .zip(state.params.theta.iter())
            .map(|(a, b)| a * b)
            .sum();
        ss += (state.params.mu[i] - fitted).powi(2);
    }
    let shape = config.priors.tau_mu_shape + 0.5 * n as f64;
    let rate = config.priors.tau_mu_rate + 0.5 * ss;
    state.params.tau_mu = Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma")
        .sample(&mut rng);

    // tau | everything else (weights on the observation scale stay fixed).
    let (shape, rate) = tau_conditional_shape_rate(
        state,
        ws,
        data,
        config.priors.tau_shape,
        config.priors.tau_rate,
    );
    state.params.tau = Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma")
        .sample(&mut rng);
}
