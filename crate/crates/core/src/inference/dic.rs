//! Deviance information criterion on the censored likelihood.
//!
//! The deviance is the latent-conditional censored-data deviance: Normal
//! density above the threshold, Normal CDF at the threshold below, given the
//! latent fields. `D_bar` averages the stored per-draw deviances;
//! `D(at mean)` plugs in posterior means of the hyperparameters and of the
//! latent quantities the deviance reads (`A eps` and the scale field).
//! Reported values are scaled by the number of spatiotemporal observations.

use crate::error::{Result, ShotError};
use crate::special::{ln_norm_cdf, ln_norm_pdf};

use super::{Dataset, PosteriorSamples};

#[derive(Debug, Clone, Copy)]
pub struct DicResult {
    /// Posterior mean deviance.
    pub dbar: f64,
    /// Deviance at the posterior means of parameters and latents.
    pub d_at_mean: f64,
    /// Effective number of parameters `dbar - d_at_mean`.
    pub p_d: f64,
    /// `dbar + p_d`.
    pub dic: f64,
    /// `dic / (N T)`.
    pub scaled: f64,
}

/// Compute the (scaled) DIC from a finished run's sample store.
pub fn dic(samples: &PosteriorSamples, data: &Dataset) -> Result<DicResult> {
    if samples.records.is_empty() {
        return Err(ShotError::Data("no stored posterior draws".into()));
    }
    if samples.records.iter().any(|r| !r.deviance.is_finite()) {
        return Err(ShotError::Data("missing stored deviances".into()));
    }
    let (mean_a_eps, mean_scale) = match (&samples.mean_a_eps, &samples.mean_scale) {
        (Some(a), Some(s)) => (a, s),
        _ => {
            return Err(ShotError::Data(
                "latent means absent (trace reloaded from CSV?); DIC must be computed in the fitting run".into(),
            ))
        }
    };
    let dbar = samples.mean_of(|r| r.deviance);

    let n = data.n_sites();
    let t_count = data.n_reps();
    let tau = samples.mean_of(|r| r.tau);
    let r_mean = samples.mean_of(|r| r.r);
    let mut mu = vec![0.0; n];
    for rec in &samples.records {
        for i in 0..n {
            mu[i] += rec.mu[i];
        }
    }
    for m in &mut mu {
        *m /= samples.records.len() as f64;
    }

    let sqrt_r = r_mean.sqrt();
    let noise = ((1.0 - r_mean) / tau).sqrt();
    let mut loglik = 0.0;
    for t in 0..t_count {
        for i in 0..n {
            let s_it = mean_scale.at(i, t);
            let m = mu[i] + sqrt_r * s_it * mean_a_eps.at(i, t);
            let s = noise * s_it;
            if data.censored[i][t] {
                loglik += ln_norm_cdf((data.thresholds[i] - m) / s);
            } else {
                let z = (data.y.at(i, t) - m) / s;
                loglik += ln_norm_pdf(z) - s.ln();
            }
        }
    }
    let d_at_mean = -2.0 * loglik;
    let p_d = dbar - d_at_mean;
    let dic = dbar + p_d;
    Ok(DicResult {
        dbar,
        d_at_mean,
        p_d,
        dic,
        scaled: dic / (n * t_count) as f64,
    })
}
