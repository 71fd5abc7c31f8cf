//! Best-so-far learning curves from trial histories.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::HistoryFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub method: String,
    /// Seconds since the run started.
    pub elapsed: f64,
    pub trial: usize,
    /// Query scorings spent so far.
    pub scorings: u64,
    pub best_mrr: f64,
}

/// Validation-MRR curve of one run.
///
/// A single search (flat or joint) yields one row per trial. Per-relation
/// searches are merged in completion-time order; each row reports the
/// full-table MRR with every relation at its best value so far and the
/// unsearched ones at their first (initial) trial.
pub fn learning_curve(history: &HistoryFile) -> Result<Vec<CurveRow>> {
    if history.searches.is_empty() || history.searches.iter().any(|s| s.trials.is_empty()) {
        return Err(Error::invalid("history has no trials"));
    }
    let mut events: Vec<(f64, usize, usize)> = history
        .searches
        .iter()
        .enumerate()
        .flat_map(|(s, log)| {
            log.trials
                .iter()
                .enumerate()
                .map(move |(i, t)| (log.start_offset + t.elapsed, s, i))
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let total: usize = history.searches.iter().map(|s| s.n_queries).sum();
    if total == 0 {
        return Err(Error::invalid("history covers no queries"));
    }
    let mut best: Vec<f64> = history.searches.iter().map(|s| s.trials[0].y).collect();
    let mut scorings = 0u64;
    let mut rows = Vec::with_capacity(events.len());
    for (trial, (elapsed, s, i)) in events.into_iter().enumerate() {
        let log = &history.searches[s];
        best[s] = best[s].max(log.trials[i].y);
        scorings += log.n_queries as u64;
        let best_mrr = if best.len() == 1 {
            best[0]
        } else {
            best.iter()
                .zip(&history.searches)
                .map(|(b, l)| b * l.n_queries as f64)
                .sum::<f64>()
                / total as f64
        };
        rows.push(CurveRow {
            method: history.method.clone(),
            elapsed,
            trial,
            scorings,
            best_mrr,
        });
    }
    Ok(rows)
}
