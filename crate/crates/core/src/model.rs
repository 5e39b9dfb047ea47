//! Domain types for the block-structured mixture: variants, dimensions, column
//! memberships and the fitted parameter set.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower clamp on the diagonal error variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Which covariance ingredients are shared across components.
///
/// The first letter refers to the membership matrix `B`, the second to the
/// diagonal error matrix `D`; `C` means constrained (shared), `U` means free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    CC,
    CU,
    UC,
    UU,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [Self::CC, Self::CU, Self::UC, Self::UU];

    /// Membership matrix shared by all components.
    pub fn shared_membership(self) -> bool {
        matches!(self, Self::CC | Self::CU)
    }

    /// Error variances shared by all components.
    pub fn shared_errors(self) -> bool {
        matches!(self, Self::CC | Self::UC)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::CC => "CC",
            Self::CU => "CU",
            Self::UC => "UC",
            Self::UU => "UU",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CC" => Ok(Self::CC),
            "CU" => Ok(Self::CU),
            "UC" => Ok(Self::UC),
            "UU" => Ok(Self::UU),
            other => Err(Error::InvalidInput(format!("unknown model variant `{other}`"))),
        }
    }
}

/// Total number of free parameters of a variant with `k` components over `j` indicators.
///
/// The count does not depend on the number of column clusters.
pub fn parameter_count(variant: ModelVariant, k: usize, j: usize) -> usize {
    let mixing = k - 1;
    match variant {
        ModelVariant::CC => mixing + j * (k + 2),
        ModelVariant::CU | ModelVariant::UC => mixing + j * (2 * k + 1),
        ModelVariant::UU => mixing + 3 * k * j,
    }
}

/// Number of row clusters and per-component number of column clusters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimensions {
    k: usize,
    l: Vec<usize>,
}

impl Dimensions {
    pub fn new(l: Vec<usize>) -> Result<Self> {
        if l.is_empty() {
            return Err(Error::InvalidParameter("at least one component is required".into()));
        }
        if l.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "column cluster counts must be positive, got {l:?}"
            )));
        }
        Ok(Self { k: l.len(), l })
    }

    /// `k` components sharing `l` column clusters.
    pub fn shared(k: usize, l: usize) -> Result<Self> {
        Self::new(vec![l; k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> &[usize] {
        &self.l
    }

    pub fn total_l(&self) -> usize {
        self.l.iter().sum()
    }

    /// Checks the dimensions against the data width and the variant's constraints.
    pub fn validate(&self, variant: ModelVariant, n_cols: usize) -> Result<()> {
        if let Some(&bad) = self.l.iter().find(|&&l| l > n_cols) {
            return Err(Error::InvalidParameter(format!(
                "{bad} column clusters requested but only {n_cols} indicators"
            )));
        }
        if variant.shared_membership() && self.l.iter().any(|&l| l != self.l[0]) {
            return Err(Error::InvalidParameter(format!(
                "variant {variant} shares the membership matrix and needs equal L, got {:?}",
                self.l
            )));
        }
        Ok(())
    }
}

/// A binary row-stochastic `J × L` membership matrix, stored as one label per indicator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Membership {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Membership {
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if labels.is_empty() || n_clusters == 0 {
            return Err(Error::InvalidParameter("membership must be non-empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_clusters) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} out of range for {n_clusters} column clusters"
            )));
        }
        Ok(Self { labels, n_clusters })
    }

    /// Every indicator in a single column cluster.
    pub fn single(n_vars: usize) -> Self {
        Self {
            labels: vec![0; n_vars],
            n_clusters: 1,
        }
    }

    /// Reads a dense 0/1 matrix; every row must contain exactly one entry equal to 1.
    pub fn from_matrix(b: &DMatrix<f64>) -> Result<Self> {
        if b.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidParameter("membership matrix must be non-empty".into()));
        }
        let mut labels = Vec::with_capacity(b.nrows());
        for j in 0..b.nrows() {
            let mut found = None;
            for l in 0..b.ncols() {
                let v = b[(j, l)];
                if v == 1.0 {
                    if found.is_some() {
                        return Err(Error::InvalidParameter(format!(
                            "row {j} of the membership matrix has more than one unit entry"
                        )));
                    }
                    found = Some(l);
                } else if v != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "membership entry ({j}, {l}) = {v} is not binary"
                    )));
                }
            }
            match found {
                Some(l) => labels.push(l),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "row {j} of the membership matrix has no unit entry"
                    )))
                }
            }
        }
        Ok(Self {
            labels,
            n_clusters: b.ncols(),
        })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.labels.len(), self.n_clusters, |j, l| {
            if self.labels[j] == l {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, j: usize) -> usize {
        self.labels[j]
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_vars(&self) -> usize {
        self.labels.len()
    }

    /// Size of each column cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Number of non-empty column clusters.
    pub fn occupied(&self) -> usize {
        self.cluster_sizes().iter().filter(|&&s| s > 0).count()
    }

    /// Relabels clusters by order of first appearance over the indicators; empty
    /// clusters take the trailing labels in their original order.
    ///
    /// Returns the relabeled membership and the map `old label -> new label`.
    pub fn canonical(&self) -> (Membership, Vec<usize>) {
        let mut map = vec![usize::MAX; self.n_clusters];
        let mut next = 0;
        for &l in &self.labels {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
        }
        for m in map.iter_mut() {
            if *m == usize::MAX {
                *m = next;
                next += 1;
            }
        }
        let labels = self.labels.iter().map(|&l| map[l]).collect();
        (
            Membership {
                labels,
                n_clusters: self.n_clusters,
            },
            map,
        )
    }
}

/// Canonical column-cluster label (0-based, first-appearance order) of every indicator.
pub fn column_cluster_assignment(b: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (canon, _) = Membership::from_matrix(b)?.canonical();
    Ok(canon.labels)
}

/// Parameters of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub mu: Vec<f64>,
    pub membership: Membership,
    /// Diagonal of the error covariance.
    pub d: Vec<f64>,
    /// Posterior block-mean factor estimate, one entry per column cluster.
    pub u_hat: Vec<f64>,
}

impl ComponentParams {
    pub fn validate(&self, n_cols: usize) -> Result<()> {
        if self.mu.len() != n_cols || self.d.len() != n_cols || self.membership.n_vars() != n_cols {
            return Err(Error::InvalidParameter(format!(
                "component dimensions (mu {}, D {}, B {}) do not match J = {n_cols}",
                self.mu.len(),
                self.d.len(),
                self.membership.n_vars()
            )));
        }
        if self.u_hat.len() != self.membership.n_clusters() {
            return Err(Error::InvalidParameter(format!(
                "u_hat has {} entries for {} column clusters",
                self.u_hat.len(),
                self.membership.n_clusters()
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean".into()));
        }
        if let Some(&bad) = self.d.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "error variance {bad} is not a positive finite number"
            )));
        }
        Ok(())
    }
}

/// Full parameter set of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub components: Vec<ComponentParams>,
    pub variant: ModelVariant,
    pub dims: Dimensions,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn n_cols(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 || self.components.len() != k || self.dims.k() != k {
            return Err(Error::InvalidParameter(format!(
                "{} mixing weights, {} components, dims for K = {}",
                k,
                self.components.len(),
                self.dims.k()
            )));
        }
        if self.pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!("mixing weights out of [0,1]: {:?}", self.pi)));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixing weights sum to {total}")));
        }
        let j = self.n_cols();
        self.dims.validate(self.variant, j)?;
        for (c, &l) in self.components.iter().zip(self.dims.l()) {
            c.validate(j)?;
            if c.membership.n_clusters() != l {
                return Err(Error::InvalidParameter(format!(
                    "membership has {} clusters, dims say {l}",
                    c.membership.n_clusters()
                )));
            }
        }
        let first = &self.components[0];
        if self.variant.shared_membership()
            && self.components.iter().any(|c| c.membership != first.membership)
        {
            return Err(Error::InvalidParameter(format!(
                "variant {} requires a shared membership matrix",
                self.variant
            )));
        }
        if self.variant.shared_errors() && self.components.iter().any(|c| c.d != first.d) {
            return Err(Error::InvalidParameter(format!(
                "variant {} requires shared error variances",
                self.variant
            )));
        }
        Ok(())
    }
}

/// Posterior membership probabilities, `n × K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    pub z: DMatrix<f64>,
}

impl Responsibilities {
    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    /// `n_k = Σ_i z_ik`.
    pub fn weights(&self) -> Vec<f64> {
        self.z.column_iter().map(|c| c.sum()).collect()
    }

    /// Argmax per row; ties resolve to the smallest component index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.z
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}
