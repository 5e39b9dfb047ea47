//! Independent dense-algebra oracles and random instance generators shared by
//! the integration and acceptance suites. Nothing here calls the structured
//! code paths it is used to check.
#![allow(dead_code, clippy::needless_range_loop)]

use bimix::synth::Scenario;
use bimix::{ComponentParams, DataMatrix, Dimensions, Membership, MixtureParams, ModelVariant};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Explicit `J × L` 0/1 matrix.
pub fn explicit_b(labels: &[usize], l: usize) -> Dense {
    labels
        .iter()
        .map(|&c| (0..l).map(|x| if x == c { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// `BB' + D` by a naive triple loop.
pub fn dense_cov(labels: &[usize], l: usize, d: &[f64]) -> Dense {
    let b = explicit_b(labels, l);
    let j = labels.len();
    let mut s = vec![vec![0.0; j]; j];
    for r in 0..j {
        for c in 0..j {
            for x in 0..l {
                s[r][c] += b[r][x] * b[c][x];
            }
        }
        s[r][r] += d[r];
    }
    s
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|c| if c == i { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// `log |det A|` by Gaussian elimination.
pub fn elimination_log_det(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut log_det = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        log_det += p.abs().ln();
        for row in col + 1..n {
            let f = m[row][col] / p;
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    log_det
}

pub fn mat_vec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// `−½(J log 2π + log|Σ| + r'Σ⁻¹r)` with a dense inverse.
pub fn dense_log_density(y: &[f64], mu: &[f64], labels: &[usize], l: usize, d: &[f64]) -> f64 {
    let s = dense_cov(labels, l, d);
    let inv = gauss_jordan_inverse(&s);
    let r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let q: f64 = r.iter().zip(mat_vec(&inv, &r)).map(|(a, b)| a * b).sum();
    -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + elimination_log_det(&s) + q)
}

/// Mixture log-likelihood summing plain exponentiated densities.
pub fn naive_loglik(data: &DataMatrix, params: &MixtureParams) -> f64 {
    data.rows()
        .map(|y| {
            params
                .components
                .iter()
                .zip(&params.pi)
                .map(|(c, p)| {
                    p * dense_log_density(y, &c.mu, c.membership.labels(), c.membership.n_clusters(), &c.d).exp()
                })
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// One component's inputs to the expected complete-data log-likelihood.
pub struct H2Input<'a> {
    pub data: &'a DataMatrix,
    pub weights: &'a [f64],
    pub mu: &'a [f64],
    pub old_labels: &'a [usize],
    pub l: usize,
    pub d: &'a [f64],
}

/// `H₂` (without the constant) for a candidate membership, with the factor
/// moments computed densely at the old membership and `D` held fixed.
pub fn dense_h2(inputs: &[H2Input<'_>], candidate: &[usize]) -> f64 {
    let mut total = 0.0;
    for inp in inputs {
        let j = inp.mu.len();
        let l = inp.l;
        let b_old = explicit_b(inp.old_labels, l);
        let sigma_inv = gauss_jordan_inverse(&dense_cov(inp.old_labels, l, inp.d));
        // Γ = B_old' Σ⁻¹, L × J
        let gamma: Dense = (0..l)
            .map(|a| (0..j).map(|c| (0..j).map(|x| b_old[x][a] * sigma_inv[x][c]).sum()).collect())
            .collect();
        // V = I − Γ B_old
        let v: Dense = (0..l)
            .map(|a| {
                (0..l)
                    .map(|b| {
                        let gb: f64 = (0..j).map(|x| gamma[a][x] * b_old[x][b]).sum();
                        if a == b { 1.0 - gb } else { -gb }
                    })
                    .collect()
            })
            .collect();
        let b_new = explicit_b(candidate, l);
        let n_k: f64 = inp.weights.iter().sum();
        let mut euu = vec![vec![0.0; l]; l];
        let mut linear = 0.0;
        let mut scatter_diag = vec![0.0; j];
        for (i, y) in inp.data.rows().enumerate() {
            let w = inp.weights[i];
            let r: Vec<f64> = y.iter().zip(inp.mu).map(|(a, b)| a - b).collect();
            let e = mat_vec(&gamma, &r);
            let be = mat_vec(&b_new, &e);
            linear += w * (0..j).map(|x| r[x] / inp.d[x] * be[x]).sum::<f64>();
            for a in 0..l {
                for b in 0..l {
                    euu[a][b] += w * (v[a][b] + e[a] * e[b]);
                }
            }
            for x in 0..j {
                scatter_diag[x] += w * r[x] * r[x];
            }
        }
        // tr(B'D⁻¹B · E)
        let mut quad = 0.0;
        for a in 0..l {
            for b in 0..l {
                let btdb: f64 = (0..j).map(|x| b_new[x][a] * b_new[x][b] / inp.d[x]).sum();
                quad += btdb * euu[b][a];
            }
        }
        let log_det_inv: f64 = inp.d.iter().map(|x| -x.ln()).sum();
        let tr_ds: f64 = (0..j).map(|x| scatter_diag[x] / n_k / inp.d[x]).sum();
        total += 0.5 * n_k * log_det_inv - 0.5 * n_k * tr_ds + linear - 0.5 * quad;
    }
    total
}

/// All `l^j` label vectors.
pub fn all_memberships(j: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..j {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn random_labels<R: Rng>(rng: &mut R, j: usize, l: usize) -> Vec<usize> {
    (0..j).map(|_| rng.random_range(0..l)).collect()
}

/// Random valid parameters honoring the variant's sharing constraints.
pub fn random_params<R: Rng>(rng: &mut R, variant: ModelVariant, l: &[usize], j: usize, spread: f64) -> MixtureParams {
    let k = l.len();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut pi: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let fix: f64 = pi[1..].iter().sum();
    pi[0] = 1.0 - fix;
    let shared_b = random_labels(rng, j, l[0]);
    let shared_d: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..2.0)).collect();
    let components = (0..k)
        .map(|c| {
            let labels = if variant.shared_membership() {
                shared_b.clone()
            } else {
                random_labels(rng, j, l[c])
            };
            let d = if variant.shared_errors() {
                shared_d.clone()
            } else {
                (0..j).map(|_| rng.random_range(0.1..2.0)).collect()
            };
            ComponentParams {
                mu: (0..j).map(|_| rng.random_range(-spread..spread)).collect(),
                membership: Membership::new(labels, l[c]).unwrap(),
                d,
                u_hat: vec![0.0; l[c]],
            }
        })
        .collect();
    MixtureParams {
        pi,
        components,
        variant,
        dims: Dimensions::new(l.to_vec()).unwrap(),
    }
}

/// A dataset drawn from random parameters.
pub fn random_dataset(seed: u64, variant: ModelVariant, l: &[usize], j: usize, n: usize) -> (DataMatrix, MixtureParams) {
    let mut r = rng(seed);
    let params = random_params(&mut r, variant, l, j, 2.0);
    let sample = Scenario {
        name: "random".into(),
        params: params.clone(),
        n,
        seed: seed.wrapping_mul(31).wrapping_add(7),
    }
    .sample()
    .unwrap();
    (sample.data, params)
}

/// Matches each fitted component to the generating label most common among its members.
pub fn majority_truth(assign: &[usize], truth: &[usize], k_fit: usize, k_true: usize) -> Vec<usize> {
    (0..k_fit)
        .map(|k| {
            let mut counts = vec![0usize; k_true];
            for (a, t) in assign.iter().zip(truth) {
                if *a == k {
                    counts[*t] += 1;
                }
            }
            (0..k_true).max_by_key(|&t| counts[t]).unwrap()
        })
        .collect()
}
