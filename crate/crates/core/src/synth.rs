//! Sampling labeled datasets from the generative model
//! `y_i = μ_k + B_k u_i + e_i`, with `u_i ~ N(0, I)` drawn per observation and
//! `e_i ~ N(0, D_k)`. The marginal covariance of component `k` is then exactly
//! `B_k B_k' + D_k`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, Dimensions, Membership, MixtureParams, ModelVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub params: MixtureParams,
    pub n: usize,
    pub seed: u64,
}

/// A sampled dataset with its generating labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: DataMatrix,
    pub row_labels: Vec<usize>,
    /// Column-cluster label of every indicator, per component.
    pub column_labels: Vec<Vec<usize>>,
}

impl Scenario {
    /// Two components over eight indicators with crossing column partitions:
    /// component 1 splits `{1–4}/{5–8}`, component 2 splits odd/even indicators.
    pub fn preset_a(n: usize, seed: u64) -> Self {
        let j = 8;
        let comp = |mean: f64, labels: Vec<usize>| ComponentParams {
            mu: vec![mean; j],
            membership: Membership::new(labels, 2).expect("valid preset"),
            d: vec![0.25; j],
            u_hat: vec![0.0; 2],
        };
        Self {
            name: "A".into(),
            params: MixtureParams {
                pi: vec![0.6, 0.4],
                components: vec![
                    comp(-1.0, vec![0, 0, 0, 0, 1, 1, 1, 1]),
                    comp(1.0, vec![0, 1, 0, 1, 0, 1, 0, 1]),
                ],
                variant: ModelVariant::UU,
                dims: Dimensions::shared(2, 2).expect("valid preset"),
            },
            n,
            seed,
        }
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str, n: Option<usize>, seed: u64) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::preset_a(n.unwrap_or(500), seed)),
            other => Err(Error::InvalidInput(format!("unknown scenario `{other}` (available: A)"))),
        }
    }

    pub fn sample(&self) -> Result<Sample> {
        sample(self)
    }
}

pub fn sample(scenario: &Scenario) -> Result<Sample> {
    let params = &scenario.params;
    params.validate()?;
    if scenario.n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let j = params.n_cols();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let picker = WeightedIndex::new(&params.pi)
        .map_err(|e| Error::InvalidParameter(format!("mixing weights: {e}")))?;

    let mut values = Vec::with_capacity(scenario.n * j);
    let mut row_labels = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let k = picker.sample(&mut rng);
        let c = &params.components[k];
        let u: Vec<f64> = (0..c.membership.n_clusters())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for jj in 0..j {
            let e: f64 = StandardNormal.sample(&mut rng);
            values.push(c.mu[jj] + u[c.membership.label(jj)] + c.d[jj].sqrt() * e);
        }
        row_labels.push(k);
    }
    let data = DataMatrix::new(
        values,
        scenario.n,
        j,
        (1..=scenario.n).map(|i| format!("u{i}")).collect(),
        (1..=j).map(|c| format!("v{c}")).collect(),
    )?;
    Ok(Sample {
        data,
        row_labels,
        column_labels: params.components.iter().map(|c| c.membership.labels().to_vec()).collect(),
    })
}
