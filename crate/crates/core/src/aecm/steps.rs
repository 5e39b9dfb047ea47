//! The individual E- and CM-steps of the two-cycle AECM iteration.
//!
//! Cycle one treats the component labels as missing and updates `(π, μ)`.
//! Cycle two treats labels and block factors as missing and updates `B`, `D`
//! and the factor estimate `û` through the expected complete-data
//! log-likelihood
//!
//! ```text
//! H₂ = C + Σ_k [ n_k/2 log|D_k⁻¹| − n_k/2 tr(D_k⁻¹S_k)
//!               + Σ_i w_ik (y_i−μ_k)'D_k⁻¹B_k E(u_k|y_i)
//!               − ½ tr(B_k'D_k⁻¹B_k Σ_i w_ik E(u_k u_k'|y_i)) ]
//! ```
//!
//! Row `j` of `B_k` enters `H₂` only through
//! `D_jk⁻¹ (Σ_i w_ik r_ij E(u|y_i)_l − ½ [Σ_i w_ik E(uu'|y_i)]_ll)`, so the
//! row-wise argmax is the exact maximizer over all memberships.

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::density::{log_joint, row_log_norms, ComponentDensity};
use crate::error::{Error, Result};
use crate::model::{ComponentParams, Membership, MixtureParams, Responsibilities};

/// Components whose total responsibility falls below this fraction of `n` are empty.
pub const EMPTY_COMPONENT_FRACTION: f64 = 1e-6;

/// Posterior membership probabilities at `params`.
pub fn e_step(data: &DataMatrix, params: &MixtureParams) -> Result<Responsibilities> {
    Ok(e_step_with_loglik(data, params)?.0)
}

/// E-step together with the observed-data log-likelihood, from one density pass.
pub(crate) fn e_step_with_loglik(
    data: &DataMatrix,
    params: &MixtureParams,
) -> Result<(Responsibilities, f64)> {
    let mut lj = log_joint(data, params)?;
    let norms = row_log_norms(&lj);
    for (i, &norm) in norms.iter().enumerate() {
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("unit {i} has zero density under every component")));
        }
        for v in lj.row_mut(i).iter_mut() {
            *v = (*v - norm).exp();
        }
    }
    Ok((Responsibilities { z: lj }, norms.iter().sum()))
}

pub(crate) fn check_nonempty(resp: &Responsibilities) -> Result<Vec<f64>> {
    let weights = resp.weights();
    let cutoff = EMPTY_COMPONENT_FRACTION * resp.n_rows() as f64;
    match weights.iter().position(|&w| !(w >= cutoff)) {
        Some(k) => Err(Error::EmptyComponent {
            component: k,
            weight: weights[k],
        }),
        None => Ok(weights),
    }
}

/// First-cycle CM-step: `π_k = n_k / n` and `μ_k = Σ_i z_ik y_i / n_k`.
pub fn cm_step_first(
    data: &DataMatrix,
    resp: &Responsibilities,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if resp.n_rows() != data.n_rows() {
        return Err(Error::InvalidInput(format!(
            "{} responsibility rows for {} units",
            resp.n_rows(),
            data.n_rows()
        )));
    }
    let weights = check_nonempty(resp)?;
    let n = data.n_rows() as f64;
    let total: f64 = weights.iter().sum();
    let pi = weights.iter().map(|w| w / total).collect();
    let mus = weights
        .iter()
        .enumerate()
        .map(|(k, &nk)| {
            let mut mu = vec![0.0; data.n_cols()];
            for (i, row) in data.rows().enumerate() {
                let w = resp.z[(i, k)];
                for (m, y) in mu.iter_mut().zip(row) {
                    *m += w * y;
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk);
            mu
        })
        .collect();
    debug_assert!((total - n).abs() < 1e-6 * n);
    Ok((pi, mus))
}

/// Second-cycle conditional expectations for one component.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    /// `E(u | y_i, z_ik = 1)`, one row per unit (`n × L`).
    pub eu: DMatrix<f64>,
    /// `Σ_i w_ik E(u u' | y_i, z_ik = 1)` (`L × L`).
    pub euu_sum: DMatrix<f64>,
    /// `Γ = B'(BB' + D)⁻¹` (`L × J`).
    pub gamma: DMatrix<f64>,
    /// Weighted scatter `Σ_i w_ik (y_i−μ)(y_i−μ)' / n_k` (`J × J`).
    pub s: DMatrix<f64>,
    /// `Σ_i w_ik (y_i−μ)_j E(u|y_i)_l` (`J × L`).
    pub cross: DMatrix<f64>,
    pub n_k: f64,
}

impl ConditionalMoments {
    /// Row contributions of `H₂`: entry `(j, l)` is the part of `H₂` that depends on
    /// placing indicator `j` in column cluster `l`.
    pub fn row_scores(&self, d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.cross.nrows(), self.cross.ncols(), |j, l| {
            (self.cross[(j, l)] - 0.5 * self.euu_sum[(l, l)]) / d[j]
        })
    }

    /// Expected residual variances `E[(y_ij − μ_j − (Bu)_j)²]` averaged with the
    /// responsibilities, i.e. `diag(S − 2BΓS + B E[uu'] B')`. This is the
    /// maximizer of `H₂` over a free diagonal `D` for the given `B`.
    pub fn residual_variances(&self, b: &Membership) -> Vec<f64> {
        (0..self.s.nrows())
            .map(|j| {
                let l = b.label(j);
                self.s[(j, j)] - 2.0 * self.cross[(j, l)] / self.n_k + self.euu_sum[(l, l)] / self.n_k
            })
            .collect()
    }
}

/// Conditional moments of the block factor of component `k`, evaluated at the
/// component's current `(μ, B, D)`.
pub fn conditional_moments(
    data: &DataMatrix,
    resp: &Responsibilities,
    k: usize,
    comp: &ComponentParams,
) -> Result<ConditionalMoments> {
    let dens = ComponentDensity::for_component(comp)?;
    let (n, j_dim, l_dim) = (data.n_rows(), data.n_cols(), comp.membership.n_clusters());
    let n_k: f64 = resp.z.column(k).sum();
    if !(n_k > 0.0) {
        return Err(Error::EmptyComponent {
            component: k,
            weight: n_k,
        });
    }
    let mut eu = DMatrix::zeros(n, l_dim);
    let mut euu_sum = DMatrix::zeros(l_dim, l_dim);
    let mut s = DMatrix::zeros(j_dim, j_dim);
    let mut cross = DMatrix::zeros(j_dim, l_dim);
    let mut r = vec![0.0; j_dim];
    let mut e = vec![0.0; l_dim];
    for i in 0..n {
        let y = data.row(i);
        let w = resp.z[(i, k)];
        for ((rj, yj), mj) in r.iter_mut().zip(y).zip(&comp.mu) {
            *rj = yj - mj;
        }
        dens.factor_mean(y, &mut e);
        for l in 0..l_dim {
            eu[(i, l)] = e[l];
        }
        if w == 0.0 {
            continue;
        }
        for a in 0..l_dim {
            let we = w * e[a];
            for b in 0..l_dim {
                euu_sum[(a, b)] += we * e[b];
            }
        }
        for a in 0..j_dim {
            let wr = w * r[a];
            for b in 0..j_dim {
                s[(a, b)] += wr * r[b];
            }
            for l in 0..l_dim {
                cross[(a, l)] += wr * e[l];
            }
        }
    }
    for (l, v) in dens.factor_variance().iter().enumerate() {
        euu_sum[(l, l)] += n_k * v;
    }
    s /= n_k;
    Ok(ConditionalMoments {
        eu,
        euu_sum,
        gamma: dens.gamma(),
        s,
        cross,
        n_k,
    })
}

/// Membership update: each indicator goes to the column cluster maximizing its
/// summed `H₂` row contribution over the given `(moments, D)` pairs. One pair
/// updates a free membership; several pairs update a membership shared across
/// components. Ties go to the smallest cluster index.
pub fn update_b(parts: &[(&ConditionalMoments, &[f64])]) -> Result<Membership> {
    let (first, _) = parts
        .first()
        .ok_or_else(|| Error::InvalidInput("membership update needs at least one component".into()))?;
    let (j_dim, l_dim) = first.cross.shape();
    if parts.iter().any(|(m, d)| m.cross.shape() != (j_dim, l_dim) || d.len() != j_dim) {
        return Err(Error::InvalidInput("inconsistent shapes in membership update".into()));
    }
    let mut total = DMatrix::zeros(j_dim, l_dim);
    for (m, d) in parts {
        total += m.row_scores(d);
    }
    let labels = total
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for l in 1..l_dim {
                if row[l] > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    Membership::new(labels, l_dim)
}

/// Error-variance update `diag(S − BΓS)` for a given `Γ`. No clamping is applied.
pub fn update_d(s: &DMatrix<f64>, b: &Membership, gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let j_dim = s.nrows();
    if s.ncols() != j_dim || b.n_vars() != j_dim || gamma.shape() != (b.n_clusters(), j_dim) {
        return Err(Error::InvalidInput("inconsistent shapes in error-variance update".into()));
    }
    Ok((0..j_dim)
        .map(|j| {
            let l = b.label(j);
            let bgs: f64 = (0..j_dim).map(|a| gamma[(l, a)] * s[(a, j)]).sum();
            s[(j, j)] - bgs
        })
        .collect())
}

/// Pools per-component error variances under a shared-`D` constraint:
/// `Σ_k n_k D_k / Σ_k n_k`.
pub fn pool_variances(parts: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    let j_dim = parts.first().map_or(0, |(_, d)| d.len());
    (0..j_dim)
        .map(|j| parts.iter().map(|(w, d)| w * d[j]).sum::<f64>() / total)
        .collect()
}

/// Clamps variances at `floor`, returning how many entries were raised.
pub fn clamp_variances(d: &mut [f64], floor: f64) -> usize {
    let mut count = 0;
    for v in d.iter_mut() {
        if !(*v >= floor) {
            *v = floor;
            count += 1;
        }
    }
    count
}

/// Factor estimate `û_k = Γ_k Σ_i w_ik (y_i − μ_k) / n_k` at the component's current parameters.
pub fn update_u(
    data: &DataMatrix,
    resp: &Responsibilities,
    k: usize,
    comp: &ComponentParams,
) -> Result<Vec<f64>> {
    let n_k: f64 = resp.z.column(k).sum();
    if !(n_k > 0.0) {
        return Err(Error::EmptyComponent {
            component: k,
            weight: n_k,
        });
    }
    let mut mean_resid = vec![0.0; data.n_cols()];
    for (i, row) in data.rows().enumerate() {
        let w = resp.z[(i, k)];
        for ((acc, y), m) in mean_resid.iter_mut().zip(row).zip(&comp.mu) {
            *acc += w * (y - m);
        }
    }
    mean_resid.iter_mut().for_each(|v| *v /= n_k);
    let dens = ComponentDensity::for_component(comp)?;
    let mut u = vec![0.0; comp.membership.n_clusters()];
    // factor_mean subtracts μ; feed it μ + mean residual.
    let shifted: Vec<f64> = comp.mu.iter().zip(&mean_resid).map(|(m, r)| m + r).collect();
    dens.factor_mean(&shifted, &mut u);
    Ok(u)
}
