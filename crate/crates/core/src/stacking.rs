//! Logistic-regression stacking over base-model ranks.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::RankedDataset;
use crate::error::{Error, Result};
use crate::metrics::{rank_scores, EvalReport, RankAccumulator};
use crate::types::{ModelId, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackingConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Negatives sampled uniformly per query (all of them if fewer exist).
    pub negatives_per_query: usize,
    pub seed: u64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            max_iterations: 300,
            learning_rate: 1.0,
            negatives_per_query: 50,
            seed: 0,
        }
    }
}

/// Trained meta-model: `sigmoid(coefficients . (1/rank_1, ..., 1/rank_N) + bias)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub config: StackingConfig,
    /// Mean binary cross-entropy before each gradient step, plus the final value.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Design {
    features: Vec<f64>,
    labels: Vec<f64>,
    n_features: usize,
}

impl Design {
    fn rows(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    fn loss_and_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let n = self.rows() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for i in 0..self.rows() {
            let x = self.row(i);
            let z = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            let y = self.labels[i];
            // BCE in logit form: softplus(z) - y z
            loss += softplus(z) - y * z;
            let err = sigmoid(z) - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        gw.iter_mut().for_each(|g| *g /= n);
        (loss / n, gw, gb / n)
    }
}

fn features_for(ranked: &RankedDataset, query: usize, candidate: usize, out: &mut Vec<f64>) {
    for m in 0..ranked.n_models() {
        out.push(1.0 / ranked.base_ranks(query, ModelId::from(m))[candidate]);
    }
}

/// Fits the meta-model by full-batch gradient descent on binary cross-entropy.
pub fn stacking_fit(val: &RankedDataset, config: &StackingConfig) -> Result<StackingModel> {
    if val.is_empty() {
        return Err(Error::NoData("stacking needs a nonempty validation set".into()));
    }
    let n = val.n_models();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut design = Design {
        features: Vec::new(),
        labels: Vec::new(),
        n_features: n,
    };
    for q in 0..val.len() {
        let t = val.true_index(q);
        let c = val.base_ranks(q, ModelId(0)).len();
        features_for(val, q, t, &mut design.features);
        design.labels.push(1.0);
        let k = config.negatives_per_query.min(c - 1);
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, c - 1, k).into_vec();
        picks.sort_unstable();
        for p in picks {
            let j = if p >= t { p + 1 } else { p };
            features_for(val, q, j, &mut design.features);
            design.labels.push(0.0);
        }
    }
    if design.labels.iter().all(|&y| y == 1.0) {
        return Err(Error::invalid(
            "stacking training set has no negatives (every query has a single candidate)",
        ));
    }

    let mut w = vec![0.0; n];
    let mut b = 0.0;
    let mut loss_trace = Vec::with_capacity(config.max_iterations + 1);
    for _ in 0..config.max_iterations {
        let (loss, gw, gb) = design.loss_and_grad(&w, b);
        loss_trace.push(loss);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= config.learning_rate * g;
        }
        b -= config.learning_rate * gb;
    }
    loss_trace.push(design.loss_and_grad(&w, b).0);
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::invalid("stacking diverged; lower the learning rate"));
    }
    Ok(StackingModel {
        coefficients: w,
        bias: b,
        config: *config,
        loss_trace,
    })
}

impl StackingModel {
    /// Meta-model probability for every candidate of a query.
    pub fn score(&self, rank_vectors: &[&[f64]]) -> Result<Vec<f64>> {
        if rank_vectors.len() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "{} rank vectors for {} coefficients",
                rank_vectors.len(),
                self.coefficients.len()
            )));
        }
        let c = rank_vectors.first().map_or(0, |r| r.len());
        Ok((0..c)
            .map(|j| {
                let z: f64 = rank_vectors
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(r, w)| w / r[j])
                    .sum::<f64>()
                    + self.bias;
                sigmoid(z)
            })
            .collect())
    }

    pub fn evaluate(&self, data: &RankedDataset) -> Result<EvalReport> {
        let mut overall = RankAccumulator::new();
        let mut by_rel: BTreeMap<RelationId, RankAccumulator> = BTreeMap::new();
        for q in 0..data.len() {
            let t = data.true_index(q);
            let vectors: Vec<&[f64]> = (0..data.n_models())
                .map(|m| data.base_ranks(q, ModelId::from(m)))
                .collect();
            let scores = self.score(&vectors)?;
            let rank = rank_scores(&scores, data.policy()).ranks[t];
            overall.push(rank);
            by_rel.entry(data.relation_of(q)).or_default().push(rank);
        }
        EvalReport::from_accumulators(&overall, &by_rel)
    }
}
