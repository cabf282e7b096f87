//! Posterior sample storage, trace CSV I/O and chain checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShotError};
use crate::sparse::DenseMatrix;

use super::{Adaptation, ChainConfig, ChainState};

/// One kept draw of the hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub iteration: u64,
    pub tau: f64,
    pub psi: f64,
    pub r: f64,
    pub gamma: f64,
    pub tau_mu: f64,
    pub theta: [f64; 4],
    pub mu: Vec<f64>,
    /// Censored-data deviance (`-2 log L`) at this draw.
    pub deviance: f64,
}

/// Acceptance diagnostics carried out of a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub mala_rates: Vec<f64>,
    pub mh_rates: [f64; 3],
    pub nonfinite_rejects: u64,
}

/// Thinned post-burn-in draws plus running means of the latent quantities
/// the deviance depends on (used by the information criterion).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub records: Vec<SampleRecord>,
    /// Running mean of `(A eps_t)_i`, `N x T`.
    pub mean_a_eps: Option<DenseMatrix>,
    /// Running mean of the scale field `R_t(s_i)`, `N x T`.
    pub mean_scale: Option<DenseMatrix>,
    pub kept: usize,
    pub acceptance: Option<AcceptanceSummary>,
}

impl PosteriorSamples {
    pub fn new(n_sites: usize, n_reps: usize) -> Self {
        PosteriorSamples {
            records: Vec::new(),
            mean_a_eps: Some(DenseMatrix::zeros(n_sites, n_reps)),
            mean_scale: Some(DenseMatrix::zeros(n_sites, n_reps)),
            kept: 0,
            acceptance: None,
        }
    }

    pub fn record(&mut self, state: &ChainState, deviance: f64) {
        self.records.push(SampleRecord {
            iteration: state.iter,
            tau: state.params.tau,
            psi: state.params.psi,
            r: state.params.r,
            gamma: state.params.mix.gamma,
            tau_mu: state.params.tau_mu,
            theta: state.params.theta,
            mu: state.params.mu.clone(),
            deviance,
        });
        self.kept += 1;
        let w = 1.0 / self.kept as f64;
        if let (Some(ma), Some(ms)) = (self.mean_a_eps.as_mut(), self.mean_scale.as_mut()) {
            for t in 0..ma.n_cols() {
                for i in 0..ma.n_rows() {
                    let a = state.a_eps[t][i];
                    let s = state.scale[t][i];
                    *ma.at_mut(i, t) += w * (a - ma.at(i, t));
                    *ms.at_mut(i, t) += w * (s - ms.at(i, t));
                }
            }
        }
    }

    pub fn acceptance_from(&mut self, adapt: &Adaptation) {
        self.acceptance = Some(AcceptanceSummary {
            mala_rates: adapt.mala_rates(),
            mh_rates: adapt.mh_rates(),
            nonfinite_rejects: adapt.nonfinite_rejects,
        });
    }

    pub fn n_sites(&self) -> usize {
        self.records.first().map(|r| r.mu.len()).unwrap_or(0)
    }

    /// Mean of one scalar hyperparameter across records.
    pub fn mean_of<F: Fn(&SampleRecord) -> f64>(&self, f: F) -> f64 {
        if self.records.is_empty() {
            return f64::NAN;
        }
        self.records.iter().map(&f).sum::<f64>() / self.records.len() as f64
    }

    /// Write the trace in long format: `iteration,parameter,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "parameter", "value"])?;
        for rec in &self.records {
            let it = rec.iteration.to_string();
            let mut write = |name: &str, v: f64| -> Result<()> {
                w.write_record([it.as_str(), name, &v.to_string()])?;
                Ok(())
            };
            write("tau", rec.tau)?;
            write("psi", rec.psi)?;
            write("r", rec.r)?;
            write("gamma", rec.gamma)?;
            write("tau_mu", rec.tau_mu)?;
            for (p, th) in rec.theta.iter().enumerate() {
                write(&format!("theta{p}"), *th)?;
            }
            for (i, m) in rec.mu.iter().enumerate() {
                write(&format!("mu{i}"), *m)?;
            }
            write("deviance", rec.deviance)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a trace written by [`PosteriorSamples::write_csv`]. Latent means
    /// are not part of the trace; information criteria must be computed in
    /// the fitting run.
    pub fn read_csv(path: &Path) -> Result<PosteriorSamples> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut records: Vec<SampleRecord> = Vec::new();
        let mut current: Option<SampleRecord> = None;
        for row in rdr.deserialize::<(u64, String, f64)>() {
            let (iteration, parameter, value) = row.map_err(|e| ShotError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let fresh = current
                .as_ref()
                .map(|c| c.iteration != iteration)
                .unwrap_or(true);
            if fresh {
                if let Some(done) = current.take() {
                    records.push(done);
                }
                current = Some(SampleRecord {
                    iteration,
                    tau: f64::NAN,
                    psi: f64::NAN,
                    r: f64::NAN,
                    gamma: f64::NAN,
                    tau_mu: f64::NAN,
                    theta: [f64::NAN; 4],
                    mu: Vec::new(),
                    deviance: f64::NAN,
                });
            }
            let rec = current.as_mut().unwrap();
            match parameter.as_str() {
                "tau" => rec.tau = value,
                "psi" => rec.psi = value,
                "r" => rec.r = value,
                "gamma" => rec.gamma = value,
                "tau_mu" => rec.tau_mu = value,
                "deviance" => rec.deviance = value,
                other => {
                    if let Some(idx) = other.strip_prefix("theta") {
                        let p: usize = idx.parse().map_err(|_| ShotError::Parse {
                            path: path.display().to_string(),
                            message: format!("bad parameter name {other}"),
                        })?;
                        rec.theta[p] = value;
                    } else if let Some(idx) = other.strip_prefix("mu") {
                        let i: usize = idx.parse().map_err(|_| ShotError::Parse {
                            path: path.display().to_string(),
                            message: format!("bad parameter name {other}"),
                        })?;
                        if rec.mu.len() <= i {
                            rec.mu.resize(i + 1, f64::NAN);
                        }
                        rec.mu[i] = value;
                    } else {
                        return Err(ShotError::Parse {
                            path: path.display().to_string(),
                            message: format!("unknown parameter {other}"),
                        });
                    }
                }
            }
        }
        if let Some(done) = current.take() {
            records.push(done);
        }
        let kept = records.len();
        Ok(PosteriorSamples {
            records,
            mean_a_eps: None,
            mean_scale: None,
            kept,
            acceptance: None,
        })
    }
}

/// Versioned checkpoint payload.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    iter: u64,
    params: crate::model::ModelParams,
    eps: Vec<Vec<f64>>,
    r_star: Vec<Vec<f64>>,
    y: DenseMatrix,
    adapt: Adaptation,
    config: ChainConfig,
}

const CHECKPOINT_VERSION: u32 = 1;

/// Serialize the chain state to a versioned JSON file.
pub fn write_checkpoint(state: &ChainState, config: &ChainConfig, path: &Path) -> Result<()> {
    let payload = Checkpoint {
        version: CHECKPOINT_VERSION,
        iter: state.iter,
        params: state.params.clone(),
        eps: state.eps.clone(),
        r_star: state.r_star.clone(),
        y: state.y.clone(),
        adapt: state.adapt.clone(),
        config: config.clone(),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &payload)?;
    Ok(())
}

/// Restore a checkpoint. Returns the saved state (caches rebuilt) and the
/// config it was written under.
pub fn read_checkpoint(
    path: &Path,
    data: &super::Dataset,
    ws: &super::ChainWorkspace,
) -> Result<(ChainState, ChainConfig)> {
    let file = std::fs::File::open(path)?;
    let payload: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if payload.version != CHECKPOINT_VERSION {
        return Err(ShotError::Data(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            payload.version
        )));
    }
    let t_count = data.n_reps();
    let mut a_eps = Vec::with_capacity(t_count);
    let mut scale = Vec::with_capacity(t_count);
    let weights = crate::model::ScaleWeights::new(&ws.basis, &payload.params.mix);
    for t in 0..t_count {
        a_eps.push(ws.op.a().mul_vec(&payload.eps[t]));
        scale.push(weights.field(&payload.r_star[t])?);
    }
    Ok((
        ChainState {
            iter: payload.iter,
            params: payload.params,
            eps: payload.eps,
            r_star: payload.r_star,
            y: payload.y,
            adapt: payload.adapt,
            a_eps,
            scale,
        },
        payload.config,
    ))
}
