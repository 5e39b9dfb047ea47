//! Gaussian densities with covariance `BB' + D`.
//!
//! Because `B` is binary and row-stochastic, `B'D⁻¹B` is diagonal with entries
//! `Σ_{j∈l} 1/D_j`. The Woodbury identity then gives the inverse and the
//! determinant of `Σ` in `O(J)`:
//!
//! ```text
//! m_l      = 1 + Σ_{j∈l} 1/D_j
//! log|Σ|   = Σ_j log D_j + Σ_l log m_l
//! r'Σ⁻¹r   = Σ_j r_j²/D_j − Σ_l (Σ_{j∈l} r_j/D_j)² / m_l
//! B'Σ⁻¹    = M⁻¹ B' D⁻¹
//! ```

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, Membership, MixtureParams};

/// Dense `BB' + D`.
pub fn assemble_covariance(b: &Membership, d: &[f64]) -> Result<DMatrix<f64>> {
    check_errors(b, d)?;
    let j = d.len();
    Ok(DMatrix::from_fn(j, j, |r, c| {
        let shared = if b.label(r) == b.label(c) { 1.0 } else { 0.0 };
        if r == c {
            shared + d[r]
        } else {
            shared
        }
    }))
}

fn check_errors(b: &Membership, d: &[f64]) -> Result<()> {
    if b.n_vars() != d.len() {
        return Err(Error::InvalidParameter(format!(
            "membership covers {} indicators but D has {}",
            b.n_vars(),
            d.len()
        )));
    }
    if let Some(&bad) = d.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "error variance {bad} is not a positive finite number"
        )));
    }
    Ok(())
}

/// Precomputed structure of `N(μ, BB' + D)` for repeated evaluation.
#[derive(Debug, Clone)]
pub struct ComponentDensity<'a> {
    mu: &'a [f64],
    labels: &'a [usize],
    inv_d: Vec<f64>,
    /// `1 / m_l`
    inv_m: Vec<f64>,
    log_norm: f64,
}

impl<'a> ComponentDensity<'a> {
    pub fn new(mu: &'a [f64], b: &'a Membership, d: &[f64]) -> Result<Self> {
        check_errors(b, d)?;
        if mu.len() != d.len() {
            return Err(Error::InvalidParameter(format!(
                "mean has {} entries, D has {}",
                mu.len(),
                d.len()
            )));
        }
        let inv_d: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let mut m = vec![1.0; b.n_clusters()];
        for (j, &l) in b.labels().iter().enumerate() {
            m[l] += inv_d[j];
        }
        let log_det: f64 = d.iter().map(|v| v.ln()).sum::<f64>() + m.iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Numerical("covariance determinant is not finite".into()));
        }
        let log_norm = -0.5 * (d.len() as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self {
            mu,
            labels: b.labels(),
            inv_d,
            inv_m: m.iter().map(|v| 1.0 / v).collect(),
            log_norm,
        })
    }

    pub fn for_component(c: &'a ComponentParams) -> Result<Self> {
        Self::new(&c.mu, &c.membership, &c.d)
    }

    /// `(y − μ)'Σ⁻¹(y − μ)`, using `scratch` (length `L`) as workspace.
    pub fn mahalanobis_with(&self, y: &[f64], scratch: &mut [f64]) -> f64 {
        scratch.iter_mut().for_each(|s| *s = 0.0);
        let mut diag = 0.0;
        for (j, &l) in self.labels.iter().enumerate() {
            let r = y[j] - self.mu[j];
            let w = r * self.inv_d[j];
            diag += r * w;
            scratch[l] += w;
        }
        let correction: f64 = scratch.iter().zip(&self.inv_m).map(|(s, im)| s * s * im).sum();
        diag - correction
    }

    pub fn log_pdf(&self, y: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.inv_m.len()];
        self.log_pdf_with(y, &mut scratch)
    }

    pub fn log_pdf_with(&self, y: &[f64], scratch: &mut [f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_with(y, scratch)
    }

    /// `Γ = B'Σ⁻¹ = M⁻¹B'D⁻¹` as an `L × J` matrix.
    pub fn gamma(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.inv_m.len(), self.labels.len());
        for (j, &l) in self.labels.iter().enumerate() {
            g[(l, j)] = self.inv_m[l] * self.inv_d[j];
        }
        g
    }

    /// Posterior mean of the block factor given `y`: `Γ(y − μ)`, written into `out`.
    pub fn factor_mean(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &l) in self.labels.iter().enumerate() {
            out[l] += (y[j] - self.mu[j]) * self.inv_d[j];
        }
        for (o, im) in out.iter_mut().zip(&self.inv_m) {
            *o *= im;
        }
    }

    /// Diagonal of the posterior factor covariance `I − ΓB`, which equals `1/m_l`.
    pub fn factor_variance(&self) -> &[f64] {
        &self.inv_m
    }
}

/// `log N_J(y; μ, BB' + D)`.
pub fn log_density(y: &[f64], mu: &[f64], b: &Membership, d: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::InvalidInput(format!(
            "observation has {} entries, mean has {}",
            y.len(),
            mu.len()
        )));
    }
    Ok(ComponentDensity::new(mu, b, d)?.log_pdf(y))
}

/// `log π_k + log N(y_i; μ_k, Σ_k)` for every unit and component, `n × K`.
pub fn log_joint(data: &DataMatrix, params: &MixtureParams) -> Result<DMatrix<f64>> {
    if data.n_cols() != params.n_cols() {
        return Err(Error::InvalidInput(format!(
            "data has {} columns, model has {}",
            data.n_cols(),
            params.n_cols()
        )));
    }
    let n = data.n_rows();
    let mut out = DMatrix::zeros(n, params.k());
    for (k, (comp, &pi)) in params.components.iter().zip(&params.pi).enumerate() {
        let dens = ComponentDensity::for_component(comp)?;
        let log_pi = pi.ln();
        let mut scratch = vec![0.0; comp.membership.n_clusters()];
        for i in 0..n {
            out[(i, k)] = log_pi + dens.log_pdf_with(data.row(i), &mut scratch);
        }
    }
    Ok(out)
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-sum-exp of a `log_joint` matrix.
pub(crate) fn row_log_norms(log_joint: &DMatrix<f64>) -> Vec<f64> {
    log_joint.row_iter().map(|row| log_sum_exp(row.iter().copied())).collect()
}

/// Observed-data log-likelihood `Σ_i log Σ_k π_k N(y_i; μ_k, Σ_k)`.
pub fn log_likelihood(data: &DataMatrix, params: &MixtureParams) -> Result<f64> {
    let lj = log_joint(data, params)?;
    let ll: f64 = row_log_norms(&lj).iter().sum();
    if ll.is_nan() {
        return Err(Error::Numerical("log-likelihood is NaN".into()));
    }
    Ok(ll)
}
