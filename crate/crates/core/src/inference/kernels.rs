//! One-dimensional Markov kernels and step-size adaptation.
//!
//! The samplers compose everything from these two kernels: a random-walk
//! Metropolis step on a transformed coordinate and a MALA step with analytic
//! gradient. Keeping them generic lets the test suite verify detailed balance
//! against frozen 1-D targets independently of the spatial model.

use rand::Rng;
use rand_distr::StandardNormal;

/// Random-walk Metropolis step. Returns the new point and whether the
/// proposal was accepted.
pub fn rw_mh_step<R: Rng + ?Sized, F: Fn(f64) -> f64>(
    rng: &mut R,
    x: f64,
    scale: f64,
    logpdf: F,
) -> (f64, bool) {
    let proposal = x + scale * rng.sample::<f64, _>(StandardNormal);
    let lp_x = logpdf(x);
    let lp_p = logpdf(proposal);
    let log_ratio = lp_p - lp_x; // NaN compares false and rejects
    let u: f64 = rng.gen_range(0.0..1.0f64);
    if log_ratio > u.ln() {
        (proposal, true)
    } else {
        (x, false)
    }
}

/// Metropolis-adjusted Langevin step with drift `step^2/2 * grad` and scale
/// `step`. `logpdf_grad` returns `(log density, gradient)`; non-finite
/// gradients or densities reject the proposal.
pub fn mala_step<R: Rng + ?Sized, F: Fn(f64) -> (f64, f64)>(
    rng: &mut R,
    x: f64,
    step: f64,
    logpdf_grad: F,
) -> (f64, bool) {
    let (lp_x, grad_x) = logpdf_grad(x);
    if !lp_x.is_finite() || !grad_x.is_finite() {
        return (x, false);
    }
    let h2 = step * step;
    let mean_fwd = x + 0.5 * h2 * grad_x;
    let proposal = mean_fwd + step * rng.sample::<f64, _>(StandardNormal);
    let (lp_p, grad_p) = logpdf_grad(proposal);
    if !lp_p.is_finite() || !grad_p.is_finite() {
        return (x, false);
    }
    let mean_bwd = proposal + 0.5 * h2 * grad_p;
    let log_q_fwd = -(proposal - mean_fwd).powi(2) / (2.0 * h2);
    let log_q_bwd = -(x - mean_bwd).powi(2) / (2.0 * h2);
    let log_ratio = lp_p - lp_x + log_q_bwd - log_q_fwd;
    let u: f64 = rng.gen_range(0.0..1.0f64);
    if log_ratio > u.ln() {
        (proposal, true)
    } else {
        (x, false)
    }
}

/// Diminishing-adaptation schedule for a log proposal scale, pushed toward a
/// target acceptance rate during burn-in and frozen afterwards.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RobbinsMonro {
    pub target: f64,
    pub gain: f64,
    pub exponent: f64,
}

impl RobbinsMonro {
    /// Standard optimal-scaling targets: 0.234 for random-walk MH.
    pub fn random_walk() -> Self {
        RobbinsMonro {
            target: 0.234,
            gain: 1.0,
            exponent: 0.7,
        }
    }

    /// 0.574 for MALA.
    pub fn langevin() -> Self {
        RobbinsMonro {
            target: 0.574,
            gain: 1.0,
            exponent: 0.7,
        }
    }

    /// Update a log-scale from the acceptance rate observed at adaptation
    /// round `round` (0-based).
    pub fn update(&self, log_scale: &mut f64, rate: f64, round: u64) {
        let step = self.gain / (1.0 + round as f64).powf(self.exponent);
        *log_scale += step * (rate - self.target);
        // Keep proposals inside a sane dynamic range.
        *log_scale = log_scale.clamp(-12.0, 6.0);
    }
}

/// Simple transform helpers for bounded parameters: `x = lo + (hi-lo) s(z)`.
pub mod bounded {
    /// Map the unbounded coordinate to the interval.
    pub fn to_interval(z: f64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) / (1.0 + (-z).exp())
    }

    /// Map an interval point to the unbounded coordinate.
    pub fn to_unbounded(x: f64, lo: f64, hi: f64) -> f64 {
        let p = (x - lo) / (hi - lo);
        (p / (1.0 - p)).ln()
    }

    /// Log-Jacobian `ln |dx/dz|` at the interval point `x`.
    pub fn ln_jacobian(x: f64, lo: f64, hi: f64) -> f64 {
        ((x - lo) * (hi - x) / (hi - lo)).ln()
    }
}
