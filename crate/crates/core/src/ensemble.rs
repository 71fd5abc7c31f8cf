//! Weighted rank combination and the non-relational ensemble baselines.
//!
//! Every base model's scores are first turned into ranks; a query of relation
//! `r` is then re-scored as `-sum_i alpha[i][r] * rank_i` and re-ranked. Because
//! only ranks enter the sum, each weight column is invariant to positive
//! rescaling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{rank_scores, rank_with_tolerance, EvalReport, RankAccumulator, TiePolicy};
use crate::search::{Optimizer, SearchResult, SearchSpace};
use crate::types::{partition_by_relation, Dataset, ModelId, RelationId};

/// Where a weight table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Mean,
    MrrMean,
    Simple,
    Basic,
    Dsc,
    Manual,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Mean => "mean",
            Provenance::MrrMean => "mrr-mean",
            Provenance::Simple => "simple",
            Provenance::Basic => "basic",
            Provenance::Dsc => "dsc",
            Provenance::Manual => "manual",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => Provenance::Mean,
            "mrr-mean" => Provenance::MrrMean,
            "simple" => Provenance::Simple,
            "basic" => Provenance::Basic,
            "dsc" => Provenance::Dsc,
            "manual" => Provenance::Manual,
            other => return Err(Error::invalid(format!("unknown provenance `{other}`"))),
        })
    }
}

/// Nonnegative ensemble weights, one column of `n_models` entries per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    n_models: usize,
    n_relations: usize,
    // relation-major: alpha[r * n_models + i]
    alpha: Vec<f64>,
    provenance: Provenance,
}

fn check_column(r: usize, col: &[f64]) -> Result<()> {
    if let Some(bad) = col.iter().find(|a| !a.is_finite() || **a < 0.0) {
        return Err(Error::invalid(format!(
            "relation {r}: weight {bad} is not a finite nonnegative number"
        )));
    }
    if col.iter().all(|&a| a == 0.0) {
        return Err(Error::invalid(format!("relation {r}: all weights are zero")));
    }
    Ok(())
}

impl WeightTable {
    pub fn from_columns(columns: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let n_relations = columns.len();
        let n_models = columns.first().map_or(0, Vec::len);
        if n_models == 0 {
            return Err(Error::invalid("weight table needs at least one model"));
        }
        let mut alpha = Vec::with_capacity(n_models * n_relations);
        for (r, col) in columns.iter().enumerate() {
            if col.len() != n_models {
                return Err(Error::invalid(format!(
                    "relation {r}: {} weights, expected {n_models}",
                    col.len()
                )));
            }
            check_column(r, col)?;
            alpha.extend_from_slice(col);
        }
        Ok(WeightTable {
            n_models,
            n_relations,
            alpha,
            provenance,
        })
    }

    /// The same column for every relation.
    pub fn broadcast(column: &[f64], n_relations: usize, provenance: Provenance) -> Result<Self> {
        Self::from_columns(vec![column.to_vec(); n_relations], provenance)
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn column(&self, r: RelationId) -> &[f64] {
        let start = r.index() * self.n_models;
        &self.alpha[start..start + self.n_models]
    }

    pub fn get(&self, model: ModelId, r: RelationId) -> f64 {
        self.column(r)[model.index()]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.alpha.chunks(self.n_models)
    }

    /// Copy with column `r` multiplied by `c > 0`.
    pub fn scale_column(&self, r: RelationId, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::contract(format!("scale factor {c} must be positive")));
        }
        let mut out = self.clone();
        let start = r.index() * self.n_models;
        for a in &mut out.alpha[start..start + self.n_models] {
            *a *= c;
        }
        check_column(r.index(), out.column(r))?;
        Ok(out)
    }
}

/// Maps a search point onto the feasible set: the all-zero vector, which would
/// make every candidate tie, is replaced by the uniform `1/N` column.
pub fn feasible_column(x: &[f64]) -> Vec<f64> {
    if x.iter().all(|&a| a == 0.0) {
        vec![1.0 / x.len() as f64; x.len()]
    } else {
        x.to_vec()
    }
}

#[inline]
fn combined_score(ranks: &[f64], n_cands: usize, weights: &[f64], j: usize) -> f64 {
    let mut acc = 0.0;
    for (i, &a) in weights.iter().enumerate() {
        acc += a * ranks[i * n_cands + j];
    }
    -acc
}

/// Half-width within which combined scores are treated as tied; bounds the
/// rounding error of the weighted rank sums.
#[inline]
fn tie_tolerance(weights: &[f64], n_cands: usize) -> f64 {
    let total: f64 = weights.iter().sum();
    4.0 * (weights.len() + 1) as f64 * f64::EPSILON * total * n_cands as f64
}

/// Weighted rank combination for one query: `-sum_i weights[i] * ranks[i]`.
pub fn combine(rank_vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if rank_vectors.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} rank vectors for {} weights",
            rank_vectors.len(),
            weights.len()
        )));
    }
    let c = rank_vectors.first().map_or(0, |r| r.len());
    if rank_vectors.iter().any(|r| r.len() != c) {
        return Err(Error::invalid("rank vectors differ in length"));
    }
    let flat: Vec<f64> = rank_vectors.iter().flat_map(|r| r.iter().copied()).collect();
    Ok((0..c).map(|j| combined_score(&flat, c, weights, j)).collect())
}

/// Re-ranks combined scores, treating rounding-level differences as ties.
pub fn rank_combined(scores: &[f64], weights: &[f64], policy: TiePolicy) -> Vec<f64> {
    rank_with_tolerance(scores, tie_tolerance(weights, scores.len()), policy)
}

#[derive(Debug, Clone)]
struct RankedQuery {
    relation: RelationId,
    true_index: usize,
    n_cands: usize,
    // model-major: ranks[m * n_cands + j]
    ranks: Vec<f64>,
}

/// A dataset with every base model's scores already converted to ranks.
///
/// All weight evaluation runs against this form, so ranking base scores
/// happens once per dataset rather than once per trial.
#[derive(Debug, Clone)]
pub struct RankedDataset {
    n_models: usize,
    n_relations: usize,
    policy: TiePolicy,
    queries: Vec<RankedQuery>,
    buckets: Vec<Vec<usize>>,
}

impl RankedDataset {
    pub fn new(dataset: &Dataset, policy: TiePolicy) -> Self {
        let n_models = dataset.n_models();
        let queries = dataset
            .queries()
            .iter()
            .map(|q| {
                let c = q.n_candidates();
                let mut ranks = Vec::with_capacity(n_models * c);
                for m in 0..n_models {
                    ranks.extend(rank_scores(dataset.scores(ModelId::from(m), q.id), policy).ranks);
                }
                RankedQuery {
                    relation: q.relation(),
                    true_index: q.true_index,
                    n_cands: c,
                    ranks,
                }
            })
            .collect();
        let buckets = partition_by_relation(dataset)
            .into_iter()
            .map(|v| v.indices().to_vec())
            .collect();
        RankedDataset {
            n_models,
            n_relations: dataset.n_relations(),
            policy,
            queries,
            buckets,
        }
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn policy(&self) -> TiePolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Query indices grouped by relation id.
    pub fn buckets(&self) -> &[Vec<usize>] {
        &self.buckets
    }

    pub fn relation_of(&self, query: usize) -> RelationId {
        self.queries[query].relation
    }

    pub fn true_index(&self, query: usize) -> usize {
        self.queries[query].true_index
    }

    /// Base model `model`'s rank vector for query `query`.
    pub fn base_ranks(&self, query: usize, model: ModelId) -> &[f64] {
        let q = &self.queries[query];
        &q.ranks[model.index() * q.n_cands..(model.index() + 1) * q.n_cands]
    }

    /// Rank of the true answer after combining with `weights`.
    #[inline]
    pub fn true_rank(&self, query: usize, weights: &[f64]) -> f64 {
        let q = &self.queries[query];
        debug_assert_eq!(weights.len(), self.n_models);
        let tol = tie_tolerance(weights, q.n_cands);
        let s_true = combined_score(&q.ranks, q.n_cands, weights, q.true_index);
        let (hi, lo) = (s_true + tol, s_true - tol);
        let mut better = 0usize;
        let mut at_least = 0usize;
        for j in 0..q.n_cands {
            let s = combined_score(&q.ranks, q.n_cands, weights, j);
            if s > hi {
                better += 1;
            }
            if s >= lo {
                at_least += 1;
            }
        }
        self.policy.resolve(better, at_least - better)
    }

    /// Reciprocal-rank totals over `indices`, all scored with one column.
    pub fn accumulate(&self, indices: &[usize], weights: &[f64]) -> RankAccumulator {
        let mut acc = RankAccumulator::new();
        for &q in indices {
            acc.push(self.true_rank(q, weights));
        }
        acc
    }

    /// Reciprocal-rank totals over every query, each scored with its
    /// relation's column from `column_of`.
    pub fn accumulate_by_relation<'w, F>(&self, mut column_of: F) -> RankAccumulator
    where
        F: FnMut(RelationId) -> &'w [f64],
    {
        let mut acc = RankAccumulator::new();
        for (i, q) in self.queries.iter().enumerate() {
            acc.push(self.true_rank(i, column_of(q.relation)));
        }
        acc
    }

    /// Full report for a weight table.
    pub fn evaluate(&self, weights: &WeightTable) -> Result<EvalReport> {
        if weights.n_models() != self.n_models || weights.n_relations() != self.n_relations {
            return Err(Error::invalid(format!(
                "weight table is {}x{} (models x relations), dataset needs {}x{}",
                weights.n_models(),
                weights.n_relations(),
                self.n_models,
                self.n_relations
            )));
        }
        let mut overall = RankAccumulator::new();
        let mut by_rel: BTreeMap<RelationId, RankAccumulator> = BTreeMap::new();
        for (i, q) in self.queries.iter().enumerate() {
            let rank = self.true_rank(i, weights.column(q.relation));
            overall.push(rank);
            by_rel.entry(q.relation).or_default().push(rank);
        }
        EvalReport::from_accumulators(&overall, &by_rel)
    }

    /// Report for base model `model` on its own.
    pub fn evaluate_model(&self, model: ModelId) -> Result<EvalReport> {
        let mut column = vec![0.0; self.n_models];
        column[model.index()] = 1.0;
        let table = WeightTable::broadcast(&column, self.n_relations, Provenance::Manual)?;
        self.evaluate(&table)
    }

    pub fn model_mrrs(&self) -> Result<Vec<f64>> {
        (0..self.n_models)
            .map(|m| self.evaluate_model(ModelId::from(m)).map(|r| r.overall.mrr))
            .collect()
    }
}

/// Evaluates a weight table on a dataset under `policy`.
pub fn evaluate_weights(dataset: &Dataset, weights: &WeightTable, policy: TiePolicy) -> Result<EvalReport> {
    RankedDataset::new(dataset, policy).evaluate(weights)
}

/// Every weight `1/N`.
pub fn mean_weights(n_models: usize, n_relations: usize) -> Result<WeightTable> {
    if n_models == 0 {
        return Err(Error::contract("mean weights need at least one model"));
    }
    WeightTable::broadcast(&vec![1.0 / n_models as f64; n_models], n_relations, Provenance::Mean)
}

/// Weights proportional to each model's validation MRR, shared by all relations.
pub fn mrr_mean_weights(per_model_mrr: &[f64], n_relations: usize) -> Result<WeightTable> {
    if per_model_mrr.is_empty() {
        return Err(Error::contract("no models"));
    }
    if let Some(bad) = per_model_mrr.iter().find(|m| !(**m > 0.0 && **m <= 1.0)) {
        return Err(Error::contract(format!("model MRR {bad} outside (0, 1]")));
    }
    let total: f64 = per_model_mrr.iter().sum();
    let column: Vec<f64> = per_model_mrr.iter().map(|m| m / total).collect();
    WeightTable::broadcast(&column, n_relations, Provenance::MrrMean)
}

/// Result of a flat (relation-agnostic) weight search.
#[derive(Debug, Clone)]
pub struct FlatSearch {
    pub weights: WeightTable,
    pub search: SearchResult,
    /// Query scorings spent by the objective.
    pub evaluations: u64,
}

/// Searches one weight vector shared by every relation, maximizing
/// validation MRR.
pub fn simple_ens_search(val: &RankedDataset, optimizer: &Optimizer, budget: usize) -> Result<FlatSearch> {
    if budget == 0 {
        return Err(Error::contract("trial budget must be positive"));
    }
    if val.is_empty() {
        return Err(Error::NoData("empty validation set".into()));
    }
    let all: Vec<usize> = (0..val.len()).collect();
    let space = SearchSpace::unit_weights(val.n_models());
    let mut evaluations = 0u64;
    let search = optimizer.maximize(
        |x| {
            evaluations += all.len() as u64;
            val.accumulate(&all, &feasible_column(x))
                .mrr()
                .expect("validation set is nonempty")
        },
        &space,
        budget,
    )?;
    let weights = WeightTable::broadcast(&feasible_column(&search.best_x), val.n_relations(), Provenance::Simple)?;
    Ok(FlatSearch {
        weights,
        search,
        evaluations,
    })
}
