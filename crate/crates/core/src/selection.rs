//! Information criteria and the `(variant, K, L)` grid search.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aecm::{fit_with_starts, split_largest, FitConfig, FitResult};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::model::{parameter_count, Dimensions, ModelVariant};

/// `−2 log L + 2 · #par`
pub fn aic(loglik: f64, n_par: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_par as f64
}

/// `−2 log L + #par · ln n`
pub fn bic(loglik: f64, n_par: usize, n: usize) -> f64 {
    -2.0 * loglik + n_par as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Self::Aic),
            "bic" => Ok(Self::Bic),
            other => Err(Error::InvalidInput(format!("unknown criterion `{other}`"))),
        }
    }
}

/// Whether all components share one column-cluster count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LMode {
    SharedL,
    /// Distinct `L_k` per component; only enumerated for `UU`.
    PerComponentL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub variants: Vec<ModelVariant>,
    pub k_min: usize,
    pub k_max: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub l_mode: LMode,
    pub criterion: Criterion,
    /// Seed each `K+1` cell with a split of the best `K` solution (constant-`L` cells).
    pub warm_start: bool,
    /// Largest `K` for which per-component `L` vectors are enumerated.
    pub per_component_max_k: usize,
    pub max_cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            variants: ModelVariant::ALL.to_vec(),
            k_min: 1,
            k_max: 10,
            l_min: 1,
            l_max: 6,
            l_mode: LMode::SharedL,
            criterion: Criterion::Bic,
            warm_start: false,
            per_component_max_k: 4,
            max_cells: 500,
        }
    }
}

/// Non-increasing sequences of length `k` over `lo..=hi` (multisets of `L` values).
fn multisets(k: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, lo: usize, hi: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for v in (lo..=hi).rev() {
            prefix.push(v);
            rec(k, lo, v, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, lo, hi, &mut Vec::new(), &mut out);
    out.reverse();
    out
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one variant".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max || self.l_min == 0 || self.l_min > self.l_max {
            return Err(Error::InvalidParameter(format!(
                "invalid ranges K {}..={}, L {}..={}",
                self.k_min, self.k_max, self.l_min, self.l_max
            )));
        }
        Ok(())
    }

    /// All cells in enumeration order: variant, then `K`, then `L`.
    pub fn cells(&self, n_cols: usize) -> Result<Vec<(ModelVariant, Dimensions)>> {
        self.validate()?;
        let l_hi = self.l_max.min(n_cols);
        let mut cells = Vec::new();
        for &variant in &self.variants {
            for k in self.k_min..=self.k_max {
                let per_component = self.l_mode == LMode::PerComponentL
                    && variant == ModelVariant::UU
                    && k > 1
                    && k <= self.per_component_max_k;
                let vectors = if self.l_min > l_hi {
                    Vec::new()
                } else if per_component {
                    multisets(k, self.l_min, l_hi)
                } else {
                    (self.l_min..=l_hi).map(|l| vec![l; k]).collect()
                };
                for l in vectors {
                    cells.push((variant, Dimensions::new(l)?));
                    if cells.len() > self.max_cells {
                        return Err(Error::InvalidParameter(format!(
                            "grid exceeds the cap of {} cells",
                            self.max_cells
                        )));
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no admissible cells: L range starts at {} but data has {n_cols} columns",
                self.l_min
            )));
        }
        Ok(cells)
    }
}

/// One fitted (or failed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub variant: ModelVariant,
    pub k: usize,
    pub l: Vec<usize>,
    pub loglik: Option<f64>,
    pub n_par: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: bool,
    pub effective_l: Vec<usize>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl SelectionRecord {
    pub fn score(&self, criterion: Criterion) -> Option<f64> {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn parsimony_key(&self) -> (usize, usize, usize) {
        (self.n_par, self.k, self.l.iter().sum())
    }
}

/// Criteria for every cell, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub criterion: Criterion,
    pub n_obs: usize,
    pub records: Vec<SelectionRecord>,
}

/// Scores within this distance are treated as tied and resolved by parsimony.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn record_for(
    variant: ModelVariant,
    dims: &Dimensions,
    n: usize,
    j: usize,
    outcome: &Result<FitResult>,
) -> SelectionRecord {
    let n_par = parameter_count(variant, dims.k(), j);
    let mut rec = SelectionRecord {
        variant,
        k: dims.k(),
        l: dims.l().to_vec(),
        loglik: None,
        n_par,
        aic: None,
        bic: None,
        converged: false,
        effective_l: Vec::new(),
        warnings: Vec::new(),
        error: None,
    };
    match outcome {
        Ok(fit) => {
            rec.loglik = Some(fit.loglik);
            rec.aic = Some(aic(fit.loglik, n_par));
            rec.bic = Some(bic(fit.loglik, n_par, n));
            rec.converged = fit.converged;
            rec.effective_l = fit.effective_l.clone();
            rec.warnings = fit.warnings.clone();
        }
        Err(e) => rec.error = Some(format!("{}: {e}", e.category())),
    }
    rec
}

/// Fits every cell of `grid` and returns the best fit by `grid.criterion` and
/// the full table (successful cells ascending by criterion, failed cells last).
pub fn grid_search(data: &DataMatrix, grid: &GridSpec, config: &FitConfig) -> Result<(FitResult, SelectionTable)> {
    config.validate()?;
    let cells = grid.cells(data.n_cols())?;

    // Constant-L cells chain over K when warm-starting; everything else stands alone.
    let mut chains: Vec<Vec<usize>> = Vec::new();
    if grid.warm_start {
        let mut keyed: Vec<((ModelVariant, usize), Vec<usize>)> = Vec::new();
        for (idx, (variant, dims)) in cells.iter().enumerate() {
            let l = dims.l();
            if l.iter().all(|&x| x == l[0]) {
                let key = (*variant, l[0]);
                match keyed.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, chain)) => chain.push(idx),
                    None => keyed.push((key, vec![idx])),
                }
            } else {
                chains.push(vec![idx]);
            }
        }
        chains.extend(keyed.into_iter().map(|(_, c)| c));
    } else {
        chains = (0..cells.len()).map(|i| vec![i]).collect();
    }

    let results: Vec<Vec<(usize, Result<FitResult>)>> = chains
        .par_iter()
        .map(|chain| {
            let mut out = Vec::with_capacity(chain.len());
            let mut previous: Option<FitResult> = None;
            for &idx in chain {
                let (variant, dims) = &cells[idx];
                let starts = match &previous {
                    Some(prev) if prev.params.k() + 1 == dims.k() => {
                        split_largest(data, &prev.params, 1e-9).ok().into_iter().collect()
                    }
                    _ => Vec::new(),
                };
                let r = fit_with_starts(data, *variant, dims, config, &starts);
                previous = r.as_ref().ok().cloned();
                out.push((idx, r));
            }
            out
        })
        .collect();

    let mut by_cell: Vec<Option<Result<FitResult>>> = (0..cells.len()).map(|_| None).collect();
    for (idx, r) in results.into_iter().flatten() {
        by_cell[idx] = Some(r);
    }
    let outcomes: Vec<Result<FitResult>> = by_cell.into_iter().map(|r| r.expect("every cell ran")).collect();

    let n = data.n_rows();
    let j = data.n_cols();
    let records: Vec<SelectionRecord> = cells
        .iter()
        .zip(&outcomes)
        .map(|((v, d), o)| record_for(*v, d, n, j, o))
        .collect();

    let criterion = grid.criterion;
    let mut order: Vec<usize> = (0..records.len()).filter(|&i| !records[i].failed()).collect();
    if order.is_empty() {
        let reasons: Vec<String> = records.iter().filter_map(|r| r.error.clone()).take(3).collect();
        return Err(Error::SelectionFailure(format!(
            "all {} cells failed ({})",
            records.len(),
            reasons.join("; ")
        )));
    }
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.score(criterion)
            .unwrap()
            .total_cmp(&rb.score(criterion).unwrap())
            .then(ra.parsimony_key().cmp(&rb.parsimony_key()))
            .then(a.cmp(&b))
    });
    let min_score = records[order[0]].score(criterion).unwrap();
    let best_pos = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| records[i].score(criterion).unwrap() <= min_score + TIE_TOLERANCE)
        .min_by(|(pa, &a), (pb, &b)| {
            records[a]
                .parsimony_key()
                .cmp(&records[b].parsimony_key())
                .then(pa.cmp(pb))
        })
        .map(|(p, _)| p)
        .unwrap_or(0);
    let best_idx = order.remove(best_pos);
    order.insert(0, best_idx);
    order.extend((0..records.len()).filter(|&i| records[i].failed()));

    let mut outcomes: Vec<Option<Result<FitResult>>> = outcomes.into_iter().map(Some).collect();
    let best = outcomes[best_idx].take().expect("present")?;
    let table = SelectionTable {
        criterion,
        n_obs: n,
        records: order.iter().map(|&i| records[i].clone()).collect(),
    };
    Ok((best, table))
}

/// Orders two optional scores, `None` last.
pub fn compare_scores(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}
