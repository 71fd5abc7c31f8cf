//! Relation-wise weight search.
//!
//! The relation-wise objective is a sum of per-relation terms, each depending
//! only on that relation's weight column. [`relens_dsc`] exploits this: it
//! divides validation queries by relation, searches each N-dimensional
//! sub-problem independently (optionally in parallel), and combines the
//! columns. [`relens_basic`] searches the same objective jointly over all
//! N x R weights, for comparison.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{feasible_column, simple_ens_search, Provenance, RankedDataset, WeightTable};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::search::{mix_seed, Optimizer, SearchResult, SearchSpace, TrialRecord};
use crate::types::RelationId;

/// How the trial budget `Q` is applied to the per-relation searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// `Q` trials for every relation.
    #[default]
    PerRelation,
    /// `Q` trials in total, split across relations by validation share.
    Total,
}

impl std::str::FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-relation" => Ok(BudgetMode::PerRelation),
            "total" => Ok(BudgetMode::Total),
            other => Err(Error::invalid(format!("unknown budget mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DscConfig {
    pub optimizer: Optimizer,
    pub budget: usize,
    pub budget_mode: BudgetMode,
    pub parallelism: usize,
    /// Root of the per-relation seeds.
    pub seed: u64,
    /// Column for relations with no validation queries; uniform if unset.
    pub fallback: Option<Vec<f64>>,
}

/// The trial log of one search; `relation` is `None` for flat and joint searches.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSearch {
    pub relation: Option<RelationId>,
    pub n_queries: usize,
    /// Seconds between the start of the whole run and the start of this search.
    pub start_offset: f64,
    pub history: Vec<TrialRecord>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub weights: WeightTable,
    pub val_report: EvalReport,
    pub test_report: Option<EvalReport>,
    pub searches: Vec<RelationSearch>,
    pub wall_time: Duration,
    /// Query scorings performed by search objectives (final reports excluded).
    pub evaluation_count: u64,
}

/// Seed for relation `r`'s optimizer; independent of scheduling.
pub fn relation_seed(seed: u64, r: RelationId) -> u64 {
    mix_seed(seed, r.0 as u64)
}

/// Searches one relation's weight column, maximizing MRR over `bucket` only.
pub fn search_relation(
    val: &RankedDataset,
    bucket: &[usize],
    optimizer: &Optimizer,
    budget: usize,
    counter: &AtomicU64,
) -> Result<(Vec<f64>, SearchResult)> {
    if bucket.is_empty() {
        return Err(Error::NoData("empty relation bucket".into()));
    }
    let space = SearchSpace::unit_weights(val.n_models());
    let result = optimizer.maximize(
        |x| {
            counter.fetch_add(bucket.len() as u64, Ordering::Relaxed);
            val.accumulate(bucket, &feasible_column(x))
                .mrr()
                .expect("bucket is nonempty")
        },
        &space,
        budget,
    )?;
    Ok((feasible_column(&result.best_x), result))
}

/// Per-relation trial counts for the total-budget mode: proportional to bucket
/// size by largest remainder, at least one trial per nonempty bucket.
pub fn split_budget(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut out: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&r| sizes[r] > 0).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(total * sizes[r] % n), r));
    for &r in order.iter().take(total.saturating_sub(assigned)) {
        out[r] += 1;
    }
    for (r, &s) in sizes.iter().enumerate() {
        if s > 0 && out[r] == 0 {
            out[r] = 1;
        }
    }
    out
}

fn check_pair(val: &RankedDataset, test: Option<&RankedDataset>) -> Result<()> {
    if val.is_empty() {
        return Err(Error::NoData("empty validation set".into()));
    }
    if let Some(t) = test {
        if t.n_models() != val.n_models() || t.n_relations() != val.n_relations() {
            return Err(Error::invalid(format!(
                "validation has {} models / {} relations, test has {} / {}",
                val.n_models(),
                val.n_relations(),
                t.n_models(),
                t.n_relations()
            )));
        }
    }
    Ok(())
}

fn finish(
    weights: WeightTable,
    val: &RankedDataset,
    test: Option<&RankedDataset>,
    searches: Vec<RelationSearch>,
    started: Instant,
    evaluation_count: u64,
) -> Result<SearchOutcome> {
    let wall_time = started.elapsed();
    Ok(SearchOutcome {
        val_report: val.evaluate(&weights)?,
        test_report: test.map(|t| t.evaluate(&weights)).transpose()?,
        weights,
        searches,
        wall_time,
        evaluation_count,
    })
}

/// Divide-search-combine: one independent search per relation.
///
/// Results do not depend on `parallelism`; each relation's optimizer is seeded
/// from `(config.seed, r)` and results are gathered in relation order.
pub fn relens_dsc(val: &RankedDataset, test: Option<&RankedDataset>, config: &DscConfig) -> Result<SearchOutcome> {
    check_pair(val, test)?;
    if config.budget == 0 {
        return Err(Error::contract("trial budget must be positive"));
    }
    let n = val.n_models();
    let fallback = match &config.fallback {
        Some(col) if col.len() != n => {
            return Err(Error::invalid("fallback column length differs from model count"))
        }
        Some(col) => feasible_column(col),
        None => vec![1.0 / n as f64; n],
    };
    let sizes: Vec<usize> = val.buckets().iter().map(Vec::len).collect();
    let budgets = match config.budget_mode {
        BudgetMode::PerRelation => sizes.iter().map(|_| config.budget).collect(),
        BudgetMode::Total => split_budget(config.budget, &sizes),
    };

    let counter = AtomicU64::new(0);
    let started = Instant::now();
    let run = |r: usize| -> Result<Option<(Vec<f64>, RelationSearch)>> {
        let bucket = &val.buckets()[r];
        if bucket.is_empty() {
            return Ok(None);
        }
        let rel = RelationId::from(r);
        let start_offset = started.elapsed().as_secs_f64();
        let optimizer = config.optimizer.with_seed(relation_seed(config.seed, rel));
        let (column, result) = search_relation(val, bucket, &optimizer, budgets[r], &counter)?;
        Ok(Some((
            column,
            RelationSearch {
                relation: Some(rel),
                n_queries: bucket.len(),
                start_offset,
                history: result.history,
            },
        )))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Option<(Vec<f64>, RelationSearch)>> =
        pool.install(|| (0..val.n_relations()).into_par_iter().map(run).collect::<Result<_>>())?;

    let mut columns = Vec::with_capacity(results.len());
    let mut searches = Vec::new();
    for res in results {
        match res {
            Some((col, s)) => {
                columns.push(col);
                searches.push(s);
            }
            None => columns.push(fallback.clone()),
        }
    }
    let weights = WeightTable::from_columns(columns, Provenance::Dsc)?;
    finish(weights, val, test, searches, started, counter.load(Ordering::Relaxed))
}

/// Joint search over all N x R weights at once.
pub fn relens_basic(
    val: &RankedDataset,
    test: Option<&RankedDataset>,
    optimizer: &Optimizer,
    budget: usize,
) -> Result<SearchOutcome> {
    check_pair(val, test)?;
    if budget == 0 {
        return Err(Error::contract("trial budget must be positive"));
    }
    let n = val.n_models();
    let space = SearchSpace::unit_weight_blocks(n, val.n_relations());
    let started = Instant::now();
    let mut evaluations = 0u64;
    let result = optimizer.maximize(
        |x| {
            evaluations += val.len() as u64;
            let columns: Vec<Vec<f64>> = x.chunks(n).map(feasible_column).collect();
            val.accumulate_by_relation(|r| &columns[r.index()])
                .mrr()
                .expect("validation set is nonempty")
        },
        &space,
        budget,
    )?;
    let columns = result.best_x.chunks(n).map(feasible_column).collect();
    let weights = WeightTable::from_columns(columns, Provenance::Basic)?;
    let search = RelationSearch {
        relation: None,
        n_queries: val.len(),
        start_offset: 0.0,
        history: result.history,
    };
    finish(weights, val, test, vec![search], started, evaluations)
}

/// The flat baseline packaged as a [`SearchOutcome`].
pub fn relens_simple(
    val: &RankedDataset,
    test: Option<&RankedDataset>,
    optimizer: &Optimizer,
    budget: usize,
) -> Result<SearchOutcome> {
    check_pair(val, test)?;
    let started = Instant::now();
    let flat = simple_ens_search(val, optimizer, budget)?;
    let search = RelationSearch {
        relation: None,
        n_queries: val.len(),
        start_offset: 0.0,
        history: flat.search.history,
    };
    finish(flat.weights, val, test, vec![search], started, flat.evaluations)
}
