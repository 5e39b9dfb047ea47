//! Label canonicalization: components by descending weight, column clusters by
//! first appearance.

use nalgebra::DMatrix;

use crate::model::{Dimensions, MixtureParams, Responsibilities};

/// Reorders components and relabels column clusters; responsibilities follow
/// the component order.
pub fn canonicalize(params: &MixtureParams, resp: &Responsibilities) -> (MixtureParams, Responsibilities) {
    let k = params.k();
    let labels = resp.hard_labels();
    let mut first_row = vec![usize::MAX; k];
    for (i, &c) in labels.iter().enumerate() {
        first_row[c] = first_row[c].min(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        params.pi[b]
            .total_cmp(&params.pi[a])
            .then(first_row[a].cmp(&first_row[b]))
            .then(a.cmp(&b))
    });

    let components = order
        .iter()
        .map(|&c| {
            let mut comp = params.components[c].clone();
            let (membership, map) = comp.membership.canonical();
            let mut u_hat = vec![0.0; comp.u_hat.len()];
            for (old, &new) in map.iter().enumerate() {
                u_hat[new] = comp.u_hat[old];
            }
            comp.membership = membership;
            comp.u_hat = u_hat;
            comp
        })
        .collect();
    let l: Vec<usize> = order.iter().map(|&c| params.dims.l()[c]).collect();
    let canon = MixtureParams {
        pi: order.iter().map(|&c| params.pi[c]).collect(),
        components,
        variant: params.variant,
        dims: Dimensions::new(l).expect("permutation of valid dimensions"),
    };
    let z = DMatrix::from_fn(resp.n_rows(), k, |i, c| resp.z[(i, order[c])]);
    (canon, Responsibilities { z })
}
