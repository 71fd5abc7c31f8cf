//! Rank computation and the link-prediction metrics MRR and Hit@k.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RelationId;

/// How equal scores share rank positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Mean of the tied positions.
    #[default]
    Average,
    /// Best of the tied positions.
    Optimistic,
    /// Worst of the tied positions.
    Pessimistic,
}

impl TiePolicy {
    /// Rank of an item with `better` items strictly ahead of it and `tied`
    /// items (itself included) sharing its score.
    #[inline]
    pub fn resolve(self, better: usize, tied: usize) -> f64 {
        debug_assert!(tied >= 1);
        match self {
            TiePolicy::Average => better as f64 + (tied as f64 + 1.0) / 2.0,
            TiePolicy::Optimistic => better as f64 + 1.0,
            TiePolicy::Pessimistic => (better + tied) as f64,
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(TiePolicy::Average),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            other => Err(Error::invalid(format!("unknown tie policy `{other}`"))),
        }
    }
}

/// Per-candidate ranks; rank 1 is the highest priority.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector {
    pub ranks: Vec<f64>,
    pub policy: TiePolicy,
}

impl RankVector {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Converts scores (higher is better) into ranks, resolving exact ties by `policy`.
pub fn rank_scores(scores: &[f64], policy: TiePolicy) -> RankVector {
    RankVector {
        ranks: rank_with_tolerance(scores, 0.0, policy),
        policy,
    }
}

/// Like [`rank_scores`], but scores within `tol` of each other count as tied.
///
/// Used for combined ensemble scores, whose exact ties (for example from
/// symmetric weights) would otherwise be broken by floating-point rounding.
pub fn rank_with_tolerance(scores: &[f64], tol: f64, policy: TiePolicy) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    scores
        .iter()
        .map(|&s| {
            let better = sorted.partition_point(|&v| v > s + tol);
            let at_least = sorted.partition_point(|&v| v >= s - tol);
            policy.resolve(better, at_least - better)
        })
        .collect()
}

/// `1 / rank`. Ranks below 1 are a caller bug.
pub fn reciprocal_rank(rank: f64) -> f64 {
    assert!(rank >= 1.0, "rank must be >= 1, got {rank}");
    1.0 / rank
}

/// Fraction of ranks no larger than `k`.
pub fn hits_at(ranks: &[f64], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::NoData("hits over zero queries".into()));
    }
    let hit = ranks.iter().filter(|&&r| r <= k as f64).count();
    Ok(hit as f64 / ranks.len() as f64)
}

/// Running totals for MRR and Hit@{1,3,10}.
///
/// The reciprocal-rank sum is kept as an unevaluated double-double so that two
/// query sets whose exact sums agree also agree after the final rounding,
/// independent of summation order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RankAccumulator {
    hi: f64,
    lo: f64,
    hits: [usize; 3],
    n: usize,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

impl RankAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, rank: f64) {
        debug_assert!(rank >= 1.0);
        let q = 1.0 / rank;
        // residual of the division, exact thanks to the fused multiply-add
        let q_lo = (-q).mul_add(rank, 1.0) / rank;
        self.add_dd(q, q_lo);
        if rank <= 1.0 {
            self.hits[0] += 1;
        }
        if rank <= 3.0 {
            self.hits[1] += 1;
        }
        if rank <= 10.0 {
            self.hits[2] += 1;
        }
        self.n += 1;
    }

    #[inline]
    fn add_dd(&mut self, hi: f64, lo: f64) {
        let (s, e) = two_sum(self.hi, hi);
        let e = e + self.lo + lo;
        let (s, e) = two_sum(s, e);
        self.hi = s;
        self.lo = e;
    }

    pub fn merge(&mut self, other: &RankAccumulator) {
        self.add_dd(other.hi, other.lo);
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
        self.n += other.n;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sum of reciprocal ranks, rounded once.
    pub fn reciprocal_sum(&self) -> f64 {
        self.hi + self.lo
    }

    pub fn mrr(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::NoData("MRR over zero queries".into()));
        }
        Ok(self.reciprocal_sum() / self.n as f64)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let mrr = self.mrr()?;
        let n = self.n as f64;
        Ok(Metrics {
            mrr,
            hit1: self.hits[0] as f64 / n,
            hit3: self.hits[1] as f64 / n,
            hit10: self.hits[2] as f64 / n,
            n: self.n,
        })
    }
}

/// MRR and Hit@{1,3,10} over one query collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    pub n: usize,
}

/// Overall metrics plus a per-relation breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_relation: BTreeMap<RelationId, Metrics>,
}

impl EvalReport {
    /// Aggregates `(relation, rank of true answer)` pairs.
    pub fn from_ranks<I>(ranks: I) -> Result<Self>
    where
        I: IntoIterator<Item = (RelationId, f64)>,
    {
        let mut overall = RankAccumulator::new();
        let mut by_rel: BTreeMap<RelationId, RankAccumulator> = BTreeMap::new();
        for (r, rank) in ranks {
            overall.push(rank);
            by_rel.entry(r).or_default().push(rank);
        }
        Self::from_accumulators(&overall, &by_rel)
    }

    pub fn from_accumulators(
        overall: &RankAccumulator,
        by_rel: &BTreeMap<RelationId, RankAccumulator>,
    ) -> Result<Self> {
        Ok(EvalReport {
            overall: overall.metrics()?,
            per_relation: by_rel
                .iter()
                .map(|(&r, acc)| acc.metrics().map(|m| (r, m)))
                .collect::<Result<_>>()?,
        })
    }
}

/// Metrics over the true-answer ranks of a query collection.
pub fn evaluate(ranks_of_true: &[f64]) -> Result<Metrics> {
    let mut acc = RankAccumulator::new();
    for &r in ranks_of_true {
        if !(r >= 1.0) {
            return Err(Error::contract(format!("rank {r} below 1")));
        }
        acc.push(r);
    }
    acc.metrics()
}
