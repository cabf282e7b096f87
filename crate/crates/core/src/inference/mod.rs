//! Censored-data MCMC for the spatial scale-mixture model (Pareto branch,
//! `beta = 0`).
//!
//! # Latent parameterization
//!
//! The sampler stores the GMRF weights on the observation scale,
//! `eps_t ~ Normal(0, (tau Q_psi)^{-1})`, so that the data level reads
//!
//! ```text
//! Y_t(s_i) | eps_t, R*_t ~ Normal( mu_i + sqrt(r) R_t(s_i) (A eps_t)_i ,
//!                                  (1 - r) R_t(s_i)^2 / tau )
//! ```
//!
//! This keeps every Gaussian/Gamma block conjugate: `mu`, `theta`, `tau_mu`
//! and `tau` all have closed-form full conditionals (see
//! `docs/conditionals.md`). Multiplying the stored weights by `sqrt(tau)`
//! recovers the unit-prior weights, so conditional means and precisions match
//! the standard-scale formulas used by the oracle tests.
//!
//! # Sweep
//!
//! One iteration runs: impute censored cells -> Gibbs draw of the GMRF
//! weights -> componentwise MALA on the latent scales -> Gibbs draws of the
//! Gaussian/Gamma hyperparameters -> adaptive random-walk MH on
//! `(psi, gamma, r)`. Per-replicate updates run data-parallel on
//! per-(iteration, replicate) RNG streams; byte-identical results do not
//! depend on the thread count.

pub mod dic;
pub mod gibbs;
pub mod impute;
pub mod kernels;
pub mod mala;
pub mod mh;
pub mod preprocess;
pub mod samples;

use serde::{Deserialize, Serialize};

use crate::basis::{basis_system, BasisSystem, KnotSet};
use crate::error::{Result, ShotError};
use crate::fem::{fem_matrices, FemMatrices};
use crate::mesh::{max_pairwise_distance, Point, TriMesh};
use crate::model::{MixParams, ModelParams, ScaleWeights};
use crate::sparse::{DenseMatrix, LdlFactor};
use crate::spde::SpdeOperator;
use crate::special::quantile_type7;

pub use kernels::{bounded, mala_step, rw_mh_step, RobbinsMonro};
pub use preprocess::{preprocess, PreprocessRecord};
pub use samples::{PosteriorSamples, SampleRecord};

/// Which latent-scale structure the chain fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Full model with the low-rank scale field.
    Shot,
    /// Pure Gaussian field: scales pinned at one, `gamma` not updated.
    Gmrf,
}

/// Observations, censoring layout and covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    /// `N x T` observations (possibly preprocessed). Censored cells hold the
    /// recorded (below-threshold) values; the sampler never reads them.
    pub y: DenseMatrix,
    /// Per-site censoring thresholds.
    pub thresholds: Vec<f64>,
    /// `censored[i][t]` is true iff `y[i][t] <= thresholds[i]`.
    pub censored: Vec<Vec<bool>>,
    /// `N x 4` covariates `[1, lon, lat, elev]`.
    pub covariates: DenseMatrix,
    /// Site coordinates.
    pub sites: Vec<Point>,
}

impl Dataset {
    /// Assemble a dataset, censoring at per-site empirical quantiles
    /// (`threshold_quantile`, typically 0.95).
    pub fn from_observations(
        y: DenseMatrix,
        covariates: DenseMatrix,
        sites: Vec<Point>,
        threshold_quantile: f64,
    ) -> Result<Dataset> {
        let n = y.n_rows();
        if covariates.n_rows() != n || covariates.n_cols() != 4 {
            return Err(ShotError::Dimension(format!(
                "covariates must be {n} x 4, got {} x {}",
                covariates.n_rows(),
                covariates.n_cols()
            )));
        }
        if sites.len() != n {
            return Err(ShotError::Dimension(format!(
                "{} sites for {n} observation rows",
                sites.len()
            )));
        }
        if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
            return Err(ShotError::Parameter(format!(
                "threshold quantile must lie in (0,1), got {threshold_quantile}"
            )));
        }
        let thresholds: Vec<f64> = (0..n)
            .map(|i| quantile_type7(y.row_slice(i), threshold_quantile))
            .collect();
        let censored = censor_mask(&y, &thresholds);
        Ok(Dataset {
            y,
            thresholds,
            censored,
            covariates,
            sites,
        })
    }

    /// Dataset with explicit thresholds (use `-inf` for fully observed data).
    pub fn with_thresholds(
        y: DenseMatrix,
        covariates: DenseMatrix,
        sites: Vec<Point>,
        thresholds: Vec<f64>,
    ) -> Result<Dataset> {
        let n = y.n_rows();
        if thresholds.len() != n {
            return Err(ShotError::Dimension(format!(
                "{} thresholds for {n} sites",
                thresholds.len()
            )));
        }
        let censored = censor_mask(&y, &thresholds);
        Ok(Dataset {
            y,
            thresholds,
            censored,
            covariates,
            sites,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.y.n_rows()
    }

    pub fn n_reps(&self) -> usize {
        self.y.n_cols()
    }

    pub fn n_censored(&self) -> usize {
        self.censored.iter().map(|r| r.iter().filter(|&&c| c).count()).sum()
    }

    /// Domain diameter of the site set.
    pub fn diameter(&self) -> f64 {
        max_pairwise_distance(&self.sites)
    }
}

fn censor_mask(y: &DenseMatrix, thresholds: &[f64]) -> Vec<Vec<bool>> {
    (0..y.n_rows())
        .map(|i| {
            y.row_slice(i)
                .iter()
                .map(|&v| v <= thresholds[i])
                .collect()
        })
        .collect()
}

/// Per-block enable switches. Disabling a block freezes that part of the
/// state, which is how the oracle tests condition on known values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UpdateFlags {
    pub impute: bool,
    pub eps: bool,
    pub scales: bool,
    pub gaussian: bool,
    pub psi: bool,
    pub gamma: bool,
    pub r: bool,
}

impl Default for UpdateFlags {
    fn default() -> Self {
        UpdateFlags {
            impute: true,
            eps: true,
            scales: true,
            gaussian: true,
            psi: true,
            gamma: true,
            r: true,
        }
    }
}

/// Prior specification. Defaults follow the non-informative setup: uniform
/// ranges for `psi`, `gamma`, `r`, Gamma(0.1, 0.1) for the precisions, and a
/// wide Normal for the covariate coefficients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Priors {
    /// Upper bound of the uniform range prior; zero means "2 x site
    /// diameter", resolved when the chain is built.
    pub psi_max: f64,
    pub gamma_max: f64,
    /// `r` is kept inside this open interval so the nugget never degenerates.
    pub r_bounds: (f64, f64),
    pub tau_shape: f64,
    pub tau_rate: f64,
    pub tau_mu_shape: f64,
    pub tau_mu_rate: f64,
    pub theta_sd: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            psi_max: 0.0,
            gamma_max: 50.0,
            r_bounds: (0.001, 0.999),
            tau_shape: 0.1,
            tau_rate: 0.1,
            tau_mu_shape: 0.1,
            tau_mu_rate: 0.1,
            theta_sd: 100.0,
        }
    }
}

/// Chain configuration. Defaults are desk-scale: 20 000 iterations, half
/// burn-in, thinning 5.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Basis range (fixed during the run; selected by information criterion
    /// across runs).
    pub phi: f64,
    /// Number of knots.
    pub k: usize,
    pub model: ModelKind,
    pub priors: Priors,
    pub updates: UpdateFlags,
    /// Optional explicit initial parameters (defaults to prior midpoints).
    pub init_params: Option<ModelParams>,
    /// Write a versioned state file every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<std::path::PathBuf>,
    /// Assert the censoring contract (imputed <= threshold, observed cells
    /// untouched) after every sweep.
    pub verify_imputation: bool,
}

impl ChainConfig {
    pub fn new(phi: f64, k: usize, seed: u64) -> Self {
        ChainConfig {
            n_iter: 20_000,
            n_burnin: 10_000,
            thin: 5,
            seed,
            phi,
            k,
            model: ModelKind::Shot,
            priors: Priors::default(),
            updates: UpdateFlags::default(),
            init_params: None,
            checkpoint_every: None,
            checkpoint_path: None,
            verify_imputation: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return Err(ShotError::Parameter(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.n_burnin, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(ShotError::Parameter("thin must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adaptation state: per-knot MALA log step sizes and per-hyperparameter
/// random-walk log scales, plus acceptance counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adaptation {
    pub mala_log_step: Vec<f64>,
    pub mh_log_scale: [f64; 3],
    pub frozen: bool,
    pub mala_accept: Vec<u64>,
    pub mala_total: Vec<u64>,
    pub mh_accept: [u64; 3],
    pub mh_total: [u64; 3],
    /// Proposals rejected because a gradient or density was non-finite.
    pub nonfinite_rejects: u64,
}

impl Adaptation {
    fn new(k: usize) -> Self {
        Adaptation {
            mala_log_step: vec![(0.5f64).ln(); k],
            mh_log_scale: [(0.5f64).ln(); 3],
            frozen: false,
            mala_accept: vec![0; k],
            mala_total: vec![0; k],
            mh_accept: [0; 3],
            mh_total: [0; 3],
            nonfinite_rejects: 0,
        }
    }

    pub fn mala_rates(&self) -> Vec<f64> {
        self.mala_accept
            .iter()
            .zip(&self.mala_total)
            .map(|(a, t)| if *t == 0 { 0.0 } else { *a as f64 / *t as f64 })
            .collect()
    }

    pub fn mh_rates(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            if self.mh_total[i] > 0 {
                out[i] = self.mh_accept[i] as f64 / self.mh_total[i] as f64;
            }
        }
        out
    }
}

/// Mutable sampler state. Owned exclusively by the running chain; checkpoint
/// snapshots are immutable copies.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub iter: u64,
    pub params: ModelParams,
    /// `T x N*` observation-scale GMRF weights.
    pub eps: Vec<Vec<f64>>,
    /// `T x K` latent scales (all `>= 1`).
    pub r_star: Vec<Vec<f64>>,
    /// Working copy of the data with censored cells imputed.
    pub y: DenseMatrix,
    pub adapt: Adaptation,
    // Caches kept consistent by the update blocks:
    /// `T x N` cache of `A eps_t`.
    pub a_eps: Vec<Vec<f64>>,
    /// `T x N` cache of the scale field `R_t(s_i)` (all ones for the GMRF
    /// variant).
    pub scale: Vec<Vec<f64>>,
}

/// Everything the sweep needs but does not mutate per iteration.
pub struct ChainWorkspace {
    pub op: SpdeOperator,
    pub fem: FemMatrices,
    pub basis: BasisSystem,
    pub weights: ScaleWeights,
    /// Factorization of `P = Q + r/(1-r) A'A` for the current `(psi, r)`.
    pub p_factor: LdlFactor,
    p_psi: f64,
    p_r: f64,
    pub psi_max: f64,
}

impl ChainWorkspace {
    /// Refresh the `P` factorization if `(psi, r)` moved since it was built.
    pub fn refresh_p(&mut self, psi: f64, r: f64) -> Result<()> {
        if self.p_psi == psi && self.p_r == r {
            return Ok(());
        }
        let p = gibbs::eps_precision_matrix(self.op.q(), self.op.a(), r);
        self.p_factor = LdlFactor::factor(&p, crate::sparse::Ordering::Rcm)?;
        self.p_psi = psi;
        self.p_r = r;
        Ok(())
    }
}

/// Initialize a chain: hyperparameters at prior means/midpoints, flat latent
/// fields, censored cells imputed just below their thresholds. Deterministic.
pub fn init_chain(
    data: &Dataset,
    config: &ChainConfig,
    mesh: &TriMesh,
    knots: &KnotSet,
) -> Result<(ChainState, ChainWorkspace)> {
    config.validate()?;
    let n = data.n_sites();
    let t = data.n_reps();
    let basis = basis_system(&data.sites, knots, config.phi)?;
    let fem = fem_matrices(mesh)?;

    let psi_max = if config.priors.psi_max > 0.0 {
        config.priors.psi_max
    } else {
        2.0 * data.diameter()
    };
    let params = match &config.init_params {
        Some(p) => {
            p.validate(n)?;
            p.clone()
        }
        None => ModelParams {
            mix: MixParams::new(0.0, 0.5 * config.priors.gamma_max)?,
            psi: 0.5 * psi_max,
            r: 0.5,
            tau: config.priors.tau_shape / config.priors.tau_rate,
            theta: [0.0; 4],
            tau_mu: config.priors.tau_mu_shape / config.priors.tau_mu_rate,
            mu: vec![0.0; n],
            phi: config.phi,
            k: config.k,
        },
    };

    let op = SpdeOperator::assemble(mesh, &fem, &data.sites, params.psi, params.r)?;
    let weights = ScaleWeights::new(&basis, &params.mix);

    let init_scale = match config.model {
        ModelKind::Shot => 1.5,
        ModelKind::Gmrf => 1.0,
    };
    let r_star = vec![vec![init_scale; config.k]; t];
    let eps = vec![vec![0.0; op.n_nodes()]; t];
    let a_eps = vec![vec![0.0; n]; t];
    let scale_rows: Vec<Vec<f64>> = match config.model {
        ModelKind::Shot => {
            let row = weights.field(&vec![init_scale; config.k])?;
            vec![row; t]
        }
        ModelKind::Gmrf => vec![vec![1.0; n]; t],
    };

    // Impute censored cells at threshold minus a tenth of the site scale.
    let mut y = data.y.clone();
    if t > 0 {
        for i in 0..n {
            let site_scale = {
                let iqr = quantile_type7(data.y.row_slice(i), 0.75)
                    - quantile_type7(data.y.row_slice(i), 0.25);
                if iqr > 0.0 {
                    iqr
                } else {
                    1.0
                }
            };
            for tt in 0..t {
                if data.censored[i][tt] {
                    *y.at_mut(i, tt) = data.thresholds[i] - 0.1 * site_scale;
                }
            }
        }
    }

    let p = gibbs::eps_precision_matrix(op.q(), op.a(), params.r);
    let p_factor = LdlFactor::factor(&p, crate::sparse::Ordering::Rcm)?;
    let p_psi = params.psi;
    let p_r = params.r;

    let state = ChainState {
        iter: 0,
        params,
        eps,
        r_star,
        y,
        adapt: Adaptation::new(config.k),
        a_eps,
        scale: scale_rows,
    };
    let workspace = ChainWorkspace {
        op,
        fem,
        basis,
        weights,
        p_factor,
        p_psi,
        p_r,
        psi_max,
    };
    Ok((state, workspace))
}

/// Censored-data log-likelihood of the observed data at the current state:
/// Normal density above the threshold, Normal CDF at the threshold below.
pub fn censored_loglik(state: &ChainState, data: &Dataset) -> f64 {
    let n = data.n_sites();
    let t = data.n_reps();
    let sqrt_r = state.params.r.sqrt();
    let noise = ((1.0 - state.params.r) / state.params.tau).sqrt();
    let mut total = 0.0;
    for tt in 0..t {
        for i in 0..n {
            let scale_it = state.scale[tt][i];
            let m = state.params.mu[i] + sqrt_r * scale_it * state.a_eps[tt][i];
            let s = noise * scale_it;
            if data.censored[i][tt] {
                total += crate::special::ln_norm_cdf((data.thresholds[i] - m) / s);
            } else {
                let z = (data.y.at(i, tt) - m) / s;
                total += crate::special::ln_norm_pdf(z) - s.ln();
            }
        }
    }
    total
}

/// Run the full sampler. Returns the posterior sample store and the final
/// state.
pub fn run_chain(
    data: &Dataset,
    config: &ChainConfig,
    mesh: &TriMesh,
    knots: &KnotSet,
) -> Result<(PosteriorSamples, ChainState)> {
    let (mut state, mut ws) = init_chain(data, config, mesh, knots)?;
    let samples = run_chain_from(&mut state, &mut ws, data, config)?;
    Ok((samples, state))
}

/// Drive a chain forward from an existing state (also the resume path).
/// Returns the collected samples.
pub fn run_chain_from(
    state: &mut ChainState,
    ws: &mut ChainWorkspace,
    data: &Dataset,
    config: &ChainConfig,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let mut store = PosteriorSamples::new(data.n_sites(), data.n_reps());
    while state.iter < config.n_iter as u64 {
        sweep(state, ws, data, config)?;
        let it = state.iter;
        if it >= config.n_burnin as u64 && (it - config.n_burnin as u64) % config.thin as u64 == 0
        {
            let deviance = -2.0 * censored_loglik(state, data);
            if !deviance.is_finite() {
                let dump = dump_state(state, config);
                return Err(ShotError::Numeric(format!(
                    "non-finite log-posterior at iteration {it}; state dumped to {dump}"
                )));
            }
            store.record(state, deviance);
        }
        state.iter += 1;
        if let (Some(every), Some(path)) = (config.checkpoint_every, &config.checkpoint_path) {
            if state.iter % every as u64 == 0 {
                samples::write_checkpoint(state, config, path)?;
            }
        }
    }
    store.acceptance_from(&state.adapt);
    Ok(store)
}

fn dump_state(state: &ChainState, config: &ChainConfig) -> String {
    let path = config
        .checkpoint_path
        .clone()
        .unwrap_or_else(|| std::path::PathBuf::from("shot_state_dump.json"));
    match samples::write_checkpoint(state, config, &path) {
        Ok(()) => path.display().to_string(),
        Err(e) => format!("<dump failed: {e}>"),
    }
}

/// One full sweep in the fixed order: imputation first so every conditional
/// sees complete data, hyperparameter blocks last.
pub fn sweep(
    state: &mut ChainState,
    ws: &mut ChainWorkspace,
    data: &Dataset,
    config: &ChainConfig,
) -> Result<()> {
    ws.refresh_p(state.params.psi, state.params.r)?;
    if config.updates.impute {
        impute::impute_censored(state, data, config.seed);
    }
    if config.updates.eps {
        gibbs::gibbs_eps(state, ws, data, config.seed);
    }
    if config.updates.scales && config.model == ModelKind::Shot {
        mala::mala_scales(state, ws, data, config);
    }
    if config.updates.gaussian {
        gibbs::gibbs_gaussian_blocks(state, ws, data, config);
    }
    mh::mh_hyper(state, ws, data, config)?;
    if config.verify_imputation {
        verify_censoring_contract(state, data)?;
    }
    // Freeze adaptation exactly at the end of burn-in.
    if state.iter + 1 == config.n_burnin as u64 {
        state.adapt.frozen = true;
    }
    Ok(())
}

/// Hard assertion of the censoring contract: every censored cell holds a
/// value at or below its threshold and uncensored cells are bit-identical to
/// the input data.
pub fn verify_censoring_contract(state: &ChainState, data: &Dataset) -> Result<()> {
    for i in 0..data.n_sites() {
        for t in 0..data.n_reps() {
            if data.censored[i][t] {
                if state.y.at(i, t) > data.thresholds[i] {
                    return Err(ShotError::Numeric(format!(
                        "imputed value {} above threshold {} at site {i}, replicate {t}, iteration {}",
                        state.y.at(i, t),
                        data.thresholds[i],
                        state.iter
                    )));
                }
            } else if state.y.at(i, t) != data.y.at(i, t) {
                return Err(ShotError::Numeric(format!(
                    "observed cell modified at site {i}, replicate {t}, iteration {}",
                    state.iter
                )));
            }
        }
    }
    Ok(())
}

/// Convenience wrapper: fit with knots selected from the mesh by max-min
/// ordering over the candidate set.
pub fn fit(
    data: &Dataset,
    config: &ChainConfig,
    mesh: &TriMesh,
    candidate_fraction: f64,
) -> Result<(PosteriorSamples, ChainState, KnotSet)> {
    let knots = crate::basis::select_knots(
        mesh.vertices(),
        &data.sites,
        candidate_fraction,
        config.k,
    )?;
    let (mut state, mut ws) = init_chain(data, config, mesh, &knots)?;
    let samples = run_chain_from(&mut state, &mut ws, data, config)?;
    Ok((samples, state, knots))
}
