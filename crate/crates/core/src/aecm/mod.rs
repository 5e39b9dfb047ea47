//! Two-cycle AECM fitting of the block-structured mixture.

mod canonical;
mod init;
mod steps;

pub use canonical::canonicalize;
pub use init::{kmeans_partition, params_from_partition, random_partition, split_largest, InitMethod};
pub use steps::{
    clamp_variances, cm_step_first, conditional_moments, e_step, pool_variances, update_b, update_d,
    update_u, ConditionalMoments, EMPTY_COMPONENT_FRACTION,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::density::ComponentDensity;
use crate::error::{Error, Result};
use crate::model::{parameter_count, Dimensions, MixtureParams, ModelVariant, Responsibilities, VARIANCE_FLOOR};
use steps::{check_nonempty, e_step_with_loglik};

/// Rule used for the error-variance CM-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DUpdateRule {
    /// Exact maximizer of `H₂` over `D` given the new `B`:
    /// `diag(S − 2BΓS + B E[uu'] B')`. Keeps the likelihood monotone.
    ConditionalMax,
    /// `diag(S − BΓS)` with `Γ` built from the new `B` and the previous `D`.
    /// Not guaranteed to increase the likelihood.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_cycles: usize,
    /// Threshold on `|ℓ_t − ℓ_{t−1}| / (|ℓ_{t−1}| + 1)`.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub variance_floor: f64,
    pub init_method: InitMethod,
    pub d_update: DUpdateRule,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_cycles: 500,
            tol: 1e-8,
            n_restarts: 10,
            seed: 0,
            variance_floor: VARIANCE_FLOOR,
            init_method: InitMethod::DistanceBasedPartition,
            d_update: DUpdateRule::ConditionalMax,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_cycles == 0 || self.n_restarts == 0 {
            return Err(Error::InvalidParameter("max_cycles and n_restarts must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidParameter("variance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of fitting one `(variant, K, L)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Canonicalized parameters.
    pub params: MixtureParams,
    pub responsibilities: Responsibilities,
    /// Log-likelihood after each completed cycle.
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub n_cycles_used: usize,
    pub row_assignment: Vec<usize>,
    pub column_assignments: Vec<Vec<usize>>,
    pub effective_l: Vec<usize>,
    pub n_par: usize,
    pub n_obs: usize,
    /// Index of the winning start (restarts first, then supplied starts).
    pub best_start: usize,
    pub warnings: Vec<String>,
}

/// A single AECM run from given starting values.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: MixtureParams,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub clamp_events: usize,
}

/// Iterates AECM cycles from `init` until the relative log-likelihood change drops
/// below `config.tol` or `config.max_cycles` cycles have run.
pub fn run_aecm(data: &DataMatrix, init: MixtureParams, config: &FitConfig) -> Result<RunOutcome> {
    init.validate()?;
    let variant = init.variant;
    let k = init.k();
    let mut params = init;
    let (mut resp, mut ll_prev) = e_step_with_loglik(data, &params)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut clamp_events = 0;

    for _ in 0..config.max_cycles {
        // First cycle: labels missing, update (π, μ).
        let (pi, mus) = cm_step_first(data, &resp)?;
        params.pi = pi;
        for (c, mu) in params.components.iter_mut().zip(mus) {
            c.mu = mu;
        }

        // Second cycle: labels and block factors missing, update B, D, û.
        let (resp2, _) = e_step_with_loglik(data, &params)?;
        let weights = check_nonempty(&resp2)?;
        let moments = (0..k)
            .map(|c| conditional_moments(data, &resp2, c, &params.components[c]))
            .collect::<Result<Vec<_>>>()?;

        let memberships = if variant.shared_membership() {
            let parts: Vec<_> = moments
                .iter()
                .zip(&params.components)
                .map(|(m, c)| (m, c.d.as_slice()))
                .collect();
            vec![update_b(&parts)?; k]
        } else {
            moments
                .iter()
                .zip(&params.components)
                .map(|(m, c)| update_b(&[(m, c.d.as_slice())]))
                .collect::<Result<Vec<_>>>()?
        };

        let mut variances = Vec::with_capacity(k);
        for ((m, c), b) in moments.iter().zip(&params.components).zip(&memberships) {
            let d = match config.d_update {
                DUpdateRule::ConditionalMax => m.residual_variances(b),
                DUpdateRule::Literal => {
                    let gamma = ComponentDensity::new(&c.mu, b, &c.d)?.gamma();
                    update_d(&m.s, b, &gamma)?
                }
            };
            variances.push(d);
        }
        if variant.shared_errors() {
            let parts: Vec<_> = weights.iter().copied().zip(variances).collect();
            variances = vec![pool_variances(&parts); k];
        }

        for (c, (b, mut d)) in params.components.iter_mut().zip(memberships.into_iter().zip(variances)) {
            clamp_events += clamp_variances(&mut d, config.variance_floor);
            c.membership = b;
            c.d = d;
        }
        for c in 0..k {
            let u = update_u(data, &resp2, c, &params.components[c])?;
            params.components[c].u_hat = u;
        }

        let (r, ll) = e_step_with_loglik(data, &params)?;
        resp = r;
        trace.push(ll);
        if (ll - ll_prev).abs() / (ll_prev.abs() + 1.0) < config.tol {
            converged = true;
            break;
        }
        ll_prev = ll;
    }

    Ok(RunOutcome {
        params,
        loglik_trace: trace,
        converged,
        clamp_events,
    })
}

fn start_for_attempt(
    data: &DataMatrix,
    variant: ModelVariant,
    dims: &Dimensions,
    config: &FitConfig,
    attempt: usize,
) -> Result<MixtureParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(attempt as u64);
    let labels = match (attempt, config.init_method) {
        (0, InitMethod::DistanceBasedPartition) => kmeans_partition(data, dims.k(), &mut rng),
        _ => random_partition(data.n_rows(), dims.k(), &mut rng),
    };
    params_from_partition(data, &labels, variant, dims, &mut rng)
}

fn is_abandonable(err: &Error) -> bool {
    matches!(err, Error::EmptyComponent { .. } | Error::Numerical(_))
}

/// Fits one cell with `config.n_restarts` independent restarts.
pub fn fit(data: &DataMatrix, variant: ModelVariant, dims: &Dimensions, config: &FitConfig) -> Result<FitResult> {
    fit_with_starts(data, variant, dims, config, &[])
}

/// Like [`fit`], with additional caller-supplied starting values run alongside
/// the seeded restarts.
pub fn fit_with_starts(
    data: &DataMatrix,
    variant: ModelVariant,
    dims: &Dimensions,
    config: &FitConfig,
    extra_starts: &[MixtureParams],
) -> Result<FitResult> {
    config.validate()?;
    dims.validate(variant, data.n_cols())?;
    if data.n_rows() < dims.k() {
        return Err(Error::InvalidInput(format!(
            "{} units cannot populate {} components",
            data.n_rows(),
            dims.k()
        )));
    }
    for s in extra_starts {
        if s.variant != variant || &s.dims != dims {
            return Err(Error::InvalidParameter("supplied start does not match the cell".into()));
        }
    }

    // Abandoned attempts are replaced in deterministic batches up to 3·R attempts.
    let cap = 3 * config.n_restarts;
    let mut outcomes: Vec<(usize, RunOutcome)> = Vec::new();
    let mut next_attempt = 0;
    while outcomes.len() < config.n_restarts && next_attempt < cap {
        let batch = (config.n_restarts - outcomes.len()).min(cap - next_attempt);
        let results: Vec<_> = (next_attempt..next_attempt + batch)
            .into_par_iter()
            .map(|a| {
                let start = start_for_attempt(data, variant, dims, config, a)?;
                run_aecm(data, start, config)
            })
            .collect();
        for (offset, r) in results.into_iter().enumerate() {
            match r {
                Ok(o) => outcomes.push((next_attempt + offset, o)),
                Err(e) if is_abandonable(&e) => {}
                Err(e) => return Err(e),
            }
        }
        next_attempt += batch;
    }
    let extra: Vec<_> = extra_starts
        .par_iter()
        .map(|s| run_aecm(data, s.clone(), config))
        .collect();
    for (i, r) in extra.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push((cap + i, o)),
            Err(e) if is_abandonable(&e) => {}
            Err(e) => return Err(e),
        }
    }

    let attempts = next_attempt + extra_starts.len();
    let final_ll = |o: &RunOutcome| o.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(usize, RunOutcome)> = None;
    for (idx, o) in outcomes {
        if best.as_ref().is_none_or(|(_, b)| final_ll(&o) > final_ll(b)) {
            best = Some((idx, o));
        }
    }
    let (best_start, outcome) = best.ok_or_else(|| Error::FitFailure {
        variant,
        k: dims.k(),
        l: dims.l().to_vec(),
        attempts,
    })?;
    finalize(data, outcome, best_start, config)
}

fn finalize(data: &DataMatrix, outcome: RunOutcome, best_start: usize, config: &FitConfig) -> Result<FitResult> {
    let (resp, loglik) = e_step_with_loglik(data, &outcome.params)?;
    let (params, responsibilities) = canonicalize(&outcome.params, &resp);
    let row_assignment = responsibilities.hard_labels();
    let column_assignments: Vec<Vec<usize>> = params
        .components
        .iter()
        .map(|c| c.membership.labels().to_vec())
        .collect();
    let effective_l: Vec<usize> = params.components.iter().map(|c| c.membership.occupied()).collect();

    let mut warnings = Vec::new();
    if !outcome.converged {
        warnings.push(format!("did not converge within {} cycles", config.max_cycles));
    }
    for (k, (c, &eff)) in params.components.iter().zip(&effective_l).enumerate() {
        let nominal = c.membership.n_clusters();
        if eff < nominal {
            warnings.push(format!(
                "component {}: {} of {nominal} column clusters are empty",
                k + 1,
                nominal - eff
            ));
        }
        let floored = c.d.iter().filter(|&&v| v <= config.variance_floor).count();
        if floored > 0 {
            warnings.push(format!(
                "component {}: {floored} error variance(s) at the floor {:e}",
                k + 1,
                config.variance_floor
            ));
        }
    }
    if outcome.clamp_events > 0 {
        warnings.push(format!(
            "variance floor applied {} time(s) during the winning run",
            outcome.clamp_events
        ));
    }

    Ok(FitResult {
        n_par: parameter_count(params.variant, params.k(), data.n_cols()),
        n_obs: data.n_rows(),
        n_cycles_used: outcome.loglik_trace.len(),
        loglik,
        loglik_trace: outcome.loglik_trace,
        converged: outcome.converged,
        row_assignment,
        column_assignments,
        effective_l,
        best_start,
        warnings,
        params,
        responsibilities,
    })
}
