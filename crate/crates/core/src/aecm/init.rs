//! Starting values for AECM runs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::density::log_likelihood;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, Dimensions, Membership, MixtureParams, ModelVariant};

/// How the first restart picks its row partition. Later restarts always use
/// random partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    /// A short seeded k-means run (k-means++ seeding).
    DistanceBasedPartition,
    /// Uniformly random hard partition.
    RandomPartition,
}

const KMEANS_ITERS: usize = 10;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations.
pub fn kmeans_partition<R: Rng + ?Sized>(data: &DataMatrix, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.n_rows();
    let mut centers: Vec<Vec<f64>> = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = data.rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(data.row(idx).to_vec());
        for (i, r) in data.rows().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![0; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, r) in data.rows().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(r, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            changed |= labels[i] != best;
            labels[i] = best;
        }
        let mut sums = vec![vec![0.0; data.n_cols()]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in data.rows().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Random hard partition in which every part receives at least one unit.
pub fn random_partition<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = if pos < k { pos } else { rng.random_range(0..k) };
    }
    labels
}

fn random_membership<R: Rng + ?Sized>(j: usize, l: usize, rng: &mut R) -> Membership {
    let labels = (0..j).map(|_| rng.random_range(0..l)).collect();
    Membership::new(labels, l).expect("labels drawn in range")
}

/// Builds starting parameters from a hard row partition: uniform `π`, partition
/// means, random memberships (one shared draw when the variant shares `B`) and
/// unit error variances.
pub fn params_from_partition<R: Rng + ?Sized>(
    data: &DataMatrix,
    labels: &[usize],
    variant: ModelVariant,
    dims: &Dimensions,
    rng: &mut R,
) -> Result<MixtureParams> {
    let k = dims.k();
    let j = data.n_cols();
    let mut sums = vec![vec![0.0; j]; k];
    let mut counts = vec![0usize; k];
    for (r, &c) in data.rows().zip(labels) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(r) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyComponent {
            component: c,
            weight: 0.0,
        });
    }
    let shared = variant
        .shared_membership()
        .then(|| random_membership(j, dims.l()[0], rng));
    let components = (0..k)
        .map(|c| {
            let membership = shared
                .clone()
                .unwrap_or_else(|| random_membership(j, dims.l()[c], rng));
            ComponentParams {
                mu: sums[c].iter().map(|s| s / counts[c] as f64).collect(),
                u_hat: vec![0.0; membership.n_clusters()],
                membership,
                d: vec![1.0; j],
            }
        })
        .collect();
    Ok(MixtureParams {
        pi: vec![1.0 / k as f64; k],
        components,
        variant,
        dims: dims.clone(),
    })
}

/// Adds a component by splitting the heaviest one of a fitted `K`-component
/// solution. The two halves share its `B`, `D` and `û`, carry half its weight, and
/// have their means pushed apart along the marginal standard deviations. The push
/// is halved until the log-likelihood is no worse than the parent's minus `slack`;
/// in the limit the halves coincide and the likelihood is unchanged.
pub fn split_largest(data: &DataMatrix, parent: &MixtureParams, slack: f64) -> Result<MixtureParams> {
    let base = log_likelihood(data, parent)?;
    let target = parent
        .pi
        .iter()
        .enumerate()
        .fold(0, |best, (k, &p)| if p > parent.pi[best] { k } else { best });
    let mut l = parent.dims.l().to_vec();
    l.insert(target + 1, l[target]);
    let dims = Dimensions::new(l)?;

    let build = |scale: f64| {
        let mut pi = parent.pi.clone();
        let mut components = parent.components.clone();
        pi[target] /= 2.0;
        pi.insert(target + 1, pi[target]);
        let src = &parent.components[target];
        let offset: Vec<f64> = src.d.iter().map(|d| scale * (1.0 + d).sqrt()).collect();
        let mut left = src.clone();
        let mut right = src.clone();
        for ((lm, rm), o) in left.mu.iter_mut().zip(right.mu.iter_mut()).zip(&offset) {
            *lm -= o;
            *rm += o;
        }
        components[target] = left;
        components.insert(target + 1, right);
        MixtureParams {
            pi,
            components,
            variant: parent.variant,
            dims: dims.clone(),
        }
    };

    let mut scale = 0.5;
    for _ in 0..40 {
        let candidate = build(scale);
        if log_likelihood(data, &candidate)? >= base - slack {
            return Ok(candidate);
        }
        scale *= 0.5;
    }
    Ok(build(0.0))
}
