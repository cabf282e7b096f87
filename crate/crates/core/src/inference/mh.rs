//! Adaptive random-walk Metropolis updates of `(psi, gamma, r)`.
//!
//! Each parameter moves on a logit-transformed coordinate over its prior
//! interval, with the transform Jacobian folded into the target so the
//! stationary law matches the uniform prior. A `psi` proposal reassembles the
//! sparse precision and its factorization; `gamma` proposals recompose the
//! scale field; `r` proposals only touch three cached sums. Proposal scales
//! adapt toward 0.234 acceptance during burn-in.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{MixParams, ScaleWeights};
use crate::rngstream::{stream_rng, Phase};

use super::kernels::{bounded, RobbinsMonro};
use super::{ChainConfig, ChainState, ChainWorkspace, Dataset, ModelKind};

/// Log conditional of `psi` (up to constants): GMRF prior of the stored
/// weights as a function of the precision matrix.
fn psi_logpdf(
    quad: f64,
    ln_det: f64,
    t_count: usize,
    tau: f64,
) -> f64 {
    0.5 * t_count as f64 * ln_det - 0.5 * tau * quad
}

/// Data-level log-likelihood sums that depend on `r`:
/// `S0 = sum (e/R)^2`, `S1 = sum (e/R) a`, `S2 = sum a^2` with
/// `e = y - mu` and `a = (A eps)_i`.
fn r_sums(state: &ChainState, data: &Dataset) -> (f64, f64, f64) {
    let n = data.n_sites();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for t in 0..data.n_reps() {
        for i in 0..n {
            let e_over_r = (state.y.at(i, t) - state.params.mu[i]) / state.scale[t][i];
            let a = state.a_eps[t][i];
            s0 += e_over_r * e_over_r;
            s1 += e_over_r * a;
            s2 += a * a;
        }
    }
    (s0, s1, s2)
}

fn r_logpdf(r: f64, tau: f64, nt: f64, sums: (f64, f64, f64)) -> f64 {
    let (s0, s1, s2) = sums;
    -0.5 * nt * (1.0 - r).ln()
        - 0.5 * tau * (s0 - 2.0 * r.sqrt() * s1 + r * s2) / (1.0 - r)
}

/// Data-level log-likelihood as a function of `gamma` through the recomposed
/// scale field, plus the Pareto prior of the latents.
fn gamma_logpdf(
    state: &ChainState,
    ws: &ChainWorkspace,
    data: &Dataset,
    gamma: f64,
) -> (f64, Option<Vec<Vec<f64>>>) {
    let mix = match MixParams::new(0.0, gamma) {
        Ok(m) => m,
        Err(_) => return (f64::NEG_INFINITY, None),
    };
    let weights = ScaleWeights::new(&ws.basis, &mix);
    let n = data.n_sites();
    let t_count = data.n_reps();
    let k_count = weights.n_knots();
    let sqrt_r = state.params.r.sqrt();
    let inv_v = state.params.tau / (1.0 - state.params.r);
    let mut lp = 0.0;
    // Pareto prior of the latents.
    let mut sum_ln = 0.0;
    for t in 0..t_count {
        for k in 0..k_count {
            sum_ln += state.r_star[t][k].ln();
        }
    }
    lp += (t_count * k_count) as f64 * gamma.ln() - (gamma + 1.0) * sum_ln;
    // Likelihood through the recomposed field.
    let mut rows = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let field = match weights.field(&state.r_star[t]) {
            Ok(f) => f,
            Err(_) => return (f64::NEG_INFINITY, None),
        };
        for i in 0..n {
            let ri = field[i];
            if !(ri > 0.0) || !ri.is_finite() {
                return (f64::NEG_INFINITY, None);
            }
            let g = state.y.at(i, t) - state.params.mu[i] - sqrt_r * ri * state.a_eps[t][i];
            lp += -ri.ln() - 0.5 * inv_v * (g / ri) * (g / ri);
            if !lp.is_finite() {
                return (f64::NEG_INFINITY, None);
            }
        }
        rows.push(field);
    }
    (lp, Some(rows))
}

/// One sweep of the three hyperparameter updates (in the order `psi`,
/// `gamma`, `r`), with adaptation bookkeeping.
pub fn mh_hyper(
    state: &mut ChainState,
    ws: &mut ChainWorkspace,
    data: &Dataset,
    config: &ChainConfig,
) -> Result<()> {
    let mut rng = stream_rng(config.seed, Phase::MetropolisHyper, state.iter, 0);
    let schedule = RobbinsMonro::random_walk();
    let t_count = data.n_reps();
    let iter = state.iter;

    // --- psi ----------------------------------------------------------
    if config.updates.psi {
        let scale = state.adapt.mh_log_scale[0].exp();
        let lo = 0.0;
        let hi = ws.psi_max;
        let z = bounded::to_unbounded(state.params.psi, lo, hi);
        let z_new = z + scale * rng.sample::<f64, _>(StandardNormal);
        let psi_new = bounded::to_interval(z_new, lo, hi);
        let quad_cur: f64 = state.eps.iter().map(|e| ws.op.q().quad_form(e)).sum();
        let lp_cur = psi_logpdf(quad_cur, ws.op.ln_det_q(), t_count, state.params.tau)
            + bounded::ln_jacobian(state.params.psi, lo, hi);
        let u: f64 = rng.gen_range(0.0..1.0f64);
        let mut accepted = false;
        if let Ok(op_new) = ws.op.with_psi(&ws.fem, psi_new) {
            let quad_new: f64 = state.eps.iter().map(|e| op_new.q().quad_form(e)).sum();
            let lp_new = psi_logpdf(quad_new, op_new.ln_det_q(), t_count, state.params.tau)
                + bounded::ln_jacobian(psi_new, lo, hi);
            if lp_new - lp_cur > u.ln() {
                ws.op = op_new;
                state.params.psi = psi_new;
                accepted = true;
            }
        } else {
            state.adapt.nonfinite_rejects += 1;
        }
        state.adapt.mh_accept[0] += accepted as u64;
        state.adapt.mh_total[0] += 1;
        if !state.adapt.frozen {
            schedule.update(
                &mut state.adapt.mh_log_scale[0],
                accepted as u64 as f64,
                iter,
            );
        }
    }

    // --- gamma ----------------------------------------------------------
    if config.updates.gamma && config.model == ModelKind::Shot {
        let scale = state.adapt.mh_log_scale[1].exp();
        let lo = 0.0;
        let hi = config.priors.gamma_max;
        let gamma_cur = state.params.mix.gamma;
        let z = bounded::to_unbounded(gamma_cur, lo, hi);
        let z_new = z + scale * rng.sample::<f64, _>(StandardNormal);
        let gamma_new = bounded::to_interval(z_new, lo, hi);
        let (lp_cur, _) = gamma_logpdf(state, ws, data, gamma_cur);
        let (lp_new, rows_new) = gamma_logpdf(state, ws, data, gamma_new);
        let log_ratio = lp_new + bounded::ln_jacobian(gamma_new, lo, hi)
            - lp_cur
            - bounded::ln_jacobian(gamma_cur, lo, hi);
        let u: f64 = rng.gen_range(0.0..1.0f64);
        let mut accepted = false;
        if let Some(rows) = rows_new {
            if log_ratio > u.ln() {
                state.params.mix.gamma = gamma_new;
                state.scale = rows;
                ws.weights = ScaleWeights::new(&ws.basis, &state.params.mix);
                accepted = true;
            }
        } else {
            state.adapt.nonfinite_rejects += 1;
        }
        state.adapt.mh_accept[1] += accepted as u64;
        state.adapt.mh_total[1] += 1;
        if !state.adapt.frozen {
            schedule.update(
                &mut state.adapt.mh_log_scale[1],
                accepted as u64 as f64,
                iter,
            );
        }
    }

    // --- r ----------------------------------------------------------
    if config.updates.r {
        let scale = state.adapt.mh_log_scale[2].exp();
        let (lo, hi) = config.priors.r_bounds;
        let z = bounded::to_unbounded(state.params.r, lo, hi);
        let z_new = z + scale * rng.sample::<f64, _>(StandardNormal);
        let r_new = bounded::to_interval(z_new, lo, hi);
        let nt = (data.n_sites() * t_count) as f64;
        let sums = r_sums(state, data);
        let lp_cur = r_logpdf(state.params.r, state.params.tau, nt, sums)
            + bounded::ln_jacobian(state.params.r, lo, hi);
        let lp_new = r_logpdf(r_new, state.params.tau, nt, sums)
            + bounded::ln_jacobian(r_new, lo, hi);
        let u: f64 = rng.gen_range(0.0..1.0f64);
        let mut accepted = false;
        if lp_new - lp_cur > u.ln() {
            state.params.r = r_new;
            ws.op = ws.op.with_r(r_new)?;
            accepted = true;
        }
        state.adapt.mh_accept[2] += accepted as u64;
        state.adapt.mh_total[2] += 1;
        if !state.adapt.frozen {
            schedule.update(
                &mut state.adapt.mh_log_scale[2],
                accepted as u64 as f64,
                iter,
            );
        }
    }

    Ok(())
}
