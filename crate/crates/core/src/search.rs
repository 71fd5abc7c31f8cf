//! Black-box maximizers for non-differentiable objectives: a Tree-structured
//! Parzen Estimator, random search, and an exhaustive lattice search.
//!
//! All three share the same accounting: one objective call per trial, every
//! trial recorded in order, and the earliest trial kept on equal objective.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Lattice searches refuse to enumerate more points than this.
pub const MAX_GRID_POINTS: u64 = 10_000_000;

/// Box-bounded search domain with a starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    lo: Vec<f64>,
    hi: Vec<f64>,
    initial: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, initial: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != initial.len() {
            return Err(Error::contract("bounds and initial point must share a nonzero dimension"));
        }
        for d in 0..lo.len() {
            if !(lo[d] < hi[d]) || !lo[d].is_finite() || !hi[d].is_finite() {
                return Err(Error::contract(format!("dimension {d}: need lo < hi")));
            }
            if !(lo[d] <= initial[d] && initial[d] <= hi[d]) {
                return Err(Error::contract(format!("dimension {d}: initial point out of bounds")));
            }
        }
        Ok(SearchSpace { lo, hi, initial })
    }

    /// `[0, 1]^n`, starting from the uniform weight `1/n`.
    pub fn unit_weights(n: usize) -> Self {
        assert!(n > 0);
        SearchSpace {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
            initial: vec![1.0 / n as f64; n],
        }
    }

    /// `[0, 1]^(n * blocks)`, starting from `1/n` everywhere.
    pub fn unit_weight_blocks(n: usize, blocks: usize) -> Self {
        assert!(n > 0 && blocks > 0);
        SearchSpace {
            lo: vec![0.0; n * blocks],
            hi: vec![1.0; n * blocks],
            initial: vec![1.0 / n as f64; n * blocks],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(d, &v)| self.lo[d] <= v && v <= self.hi[d])
    }

    fn sample_uniform(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|d| {
                let u: f64 = rng.random();
                (self.lo[d] + u * (self.hi[d] - self.lo[d])).min(self.hi[d])
            })
            .collect()
    }
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// Seconds since the search started, taken after the evaluation.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    pub best_trial: usize,
    pub history: Vec<TrialRecord>,
}

impl SearchResult {
    /// Best objective value after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        best_so_far(&self.history)
    }
}

pub fn best_so_far(history: &[TrialRecord]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    history
        .iter()
        .map(|t| {
            if t.y > best {
                best = t.y;
            }
            best
        })
        .collect()
}

/// Records trials and tracks the incumbent.
struct Recorder<F> {
    objective: F,
    start: Instant,
    history: Vec<TrialRecord>,
    best: Option<usize>,
}

impl<F: FnMut(&[f64]) -> f64> Recorder<F> {
    fn new(objective: F) -> Self {
        Recorder {
            objective,
            start: Instant::now(),
            history: Vec::new(),
            best: None,
        }
    }

    fn eval(&mut self, x: Vec<f64>) {
        let y = (self.objective)(&x);
        let trial = self.history.len();
        // strict improvement only: the earlier trial wins ties
        if self.best.is_none_or(|b| y > self.history[b].y) {
            self.best = Some(trial);
        }
        self.history.push(TrialRecord {
            trial,
            x,
            y,
            elapsed: self.start.elapsed().as_secs_f64(),
        });
    }

    fn finish(self) -> SearchResult {
        let b = self.best.expect("at least one trial");
        SearchResult {
            best_x: self.history[b].x.clone(),
            best_y: self.history[b].y,
            best_trial: b,
            history: self.history,
        }
    }
}

fn lattice_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let width = hi - lo;
    let m = (width / step).round();
    if m >= 1.0 && (m * step - width).abs() <= 1e-9 * width {
        let m = m as usize;
        (0..=m)
            .map(|k| if k == m { hi } else { lo + width * (k as f64 / m as f64) })
            .collect()
    } else {
        let n = (width / step).ceil() as usize;
        (0..=n).map(|k| if k == n { hi } else { lo + k as f64 * step }).collect()
    }
}

/// Evaluates every lattice point of `space` at spacing `step`, in
/// lexicographic order (first coordinate most significant), and returns the
/// first maximizer.
pub fn grid_search<F>(objective: F, space: &SearchSpace, step: f64) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::contract(format!("grid step {step} must be positive")));
    }
    let axes: Vec<Vec<f64>> = (0..space.dim())
        .map(|d| lattice_axis(space.lo[d], space.hi[d], step))
        .collect();
    let total = axes
        .iter()
        .try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64))
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::contract(format!(
                "lattice of {} axes with step {step} exceeds {MAX_GRID_POINTS} points",
                axes.len()
            ))
        })?;
    let mut rec = Recorder::new(objective);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        rec.eval(idx.iter().zip(&axes).map(|(&k, a)| a[k]).collect());
        // odometer, last axis fastest
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(rec.finish())
}

/// Trial 0 at the initial point, then `budget - 1` uniform samples.
pub fn random_search<F>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if budget == 0 {
        return Err(Error::contract("trial budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = Recorder::new(objective);
    rec.eval(space.initial.clone());
    for _ in 1..budget {
        rec.eval(space.sample_uniform(&mut rng));
    }
    Ok(rec.finish())
}

/// TPE hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    /// Fraction of the history treated as "good".
    pub gamma: f64,
    /// Uniform random trials before the density model is used.
    pub n_startup: usize,
    /// Samples drawn from the good density per suggestion.
    pub n_ei_candidates: usize,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            n_startup: 10,
            n_ei_candidates: 24,
            seed: 0,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_startup == 0 || self.n_ei_candidates == 0 {
            return Err(Error::contract("n_startup and n_ei_candidates must be at least 1"));
        }
        Ok(())
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// One-dimensional mixture of Gaussians truncated to `[lo, hi]`: one kernel
/// per observation plus a wide prior kernel at the centre of the range.
#[derive(Debug)]
struct Parzen {
    lo: f64,
    hi: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    // log of each kernel's mass inside [lo, hi]
    log_mass: Vec<f64>,
    cdf_lo: Vec<f64>,
    cdf_hi: Vec<f64>,
}

impl Parzen {
    fn fit(points: &[f64], lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
        let mut sigmas = vec![width; points.len()];
        // floor shrinks with the sample size down to 1% of the range
        let min_sigma = width / (1.0 + points.len() as f64).min(100.0);
        for (p, &i) in order.iter().enumerate() {
            let left = (p > 0).then(|| points[i] - points[order[p - 1]]);
            let right = order.get(p + 1).map(|&j| points[j] - points[i]);
            let gap = match (left, right) {
                (Some(l), Some(r)) => l.max(r),
                (Some(g), None) | (None, Some(g)) => g,
                (None, None) => width,
            };
            sigmas[i] = gap.clamp(min_sigma, width);
        }
        // prior kernel: centred, one range wide, weighted like an observation
        let mut mus = points.to_vec();
        mus.push(0.5 * (lo + hi));
        sigmas.push(width);
        let normal = std_normal();
        let mut log_mass = Vec::with_capacity(mus.len());
        let mut cdf_lo = Vec::with_capacity(mus.len());
        let mut cdf_hi = Vec::with_capacity(mus.len());
        for (&mu, &s) in mus.iter().zip(&sigmas) {
            let a = normal.cdf((lo - mu) / s);
            let b = normal.cdf((hi - mu) / s);
            cdf_lo.push(a);
            cdf_hi.push(b);
            log_mass.push((b - a).max(f64::MIN_POSITIVE).ln());
        }
        Parzen {
            lo,
            hi,
            mus,
            sigmas,
            log_mass,
            cdf_lo,
            cdf_hi,
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
        let terms: Vec<f64> = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .zip(&self.log_mass)
            .map(|((&mu, &s), &lm)| {
                let z = (x - mu) / s;
                -0.5 * z * z - LN_SQRT_2PI - s.ln() - lm
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
        m + sum.ln() - (terms.len() as f64).ln()
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let k = rng.random_range(0..self.mus.len());
        let u: f64 = rng.random();
        let p = self.cdf_lo[k] + u * (self.cdf_hi[k] - self.cdf_lo[k]);
        let p = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        let x = self.mus[k] + self.sigmas[k] * std_normal().inverse_cdf(p);
        x.clamp(self.lo, self.hi)
    }
}

/// Proposes the next point to evaluate given the trials so far.
///
/// Objectives are maximized: the good set is the top `ceil(gamma * n)` trials
/// by `y`, widened to every trial tied with the last of them.
pub fn tpe_suggest(history: &[TrialRecord], space: &SearchSpace, config: &TpeConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if history.len() < config.n_startup {
        return space.sample_uniform(rng);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[b].y.total_cmp(&history[a].y).then(a.cmp(&b)));
    let n_good = ((config.gamma * history.len() as f64).ceil() as usize).clamp(1, history.len());
    let threshold = history[order[n_good - 1]].y;
    let (good, bad): (Vec<&TrialRecord>, Vec<&TrialRecord>) =
        history.iter().partition(|t| t.y >= threshold);

    let dims: Vec<(Parzen, Parzen)> = (0..space.dim())
        .map(|d| {
            let (lo, hi) = (space.lo[d], space.hi[d]);
            let g: Vec<f64> = good.iter().map(|t| t.x[d]).collect();
            let b: Vec<f64> = bad.iter().map(|t| t.x[d]).collect();
            (Parzen::fit(&g, lo, hi), Parzen::fit(&b, lo, hi))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.n_ei_candidates {
        let x: Vec<f64> = dims.iter().map(|(l, _)| l.sample(rng)).collect();
        let score: f64 = x.iter().zip(&dims).map(|(&v, (l, g))| l.log_pdf(v) - g.log_pdf(v)).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, x));
        }
    }
    best.expect("n_ei_candidates >= 1").1
}

/// Trial 0 at the initial point, then `budget - 1` TPE suggestions.
pub fn tpe_optimize<F>(objective: F, space: &SearchSpace, budget: usize, config: &TpeConfig) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    if budget == 0 {
        return Err(Error::contract("trial budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(objective);
    rec.eval(space.initial.clone());
    for _ in 1..budget {
        let x = tpe_suggest(&rec.history, space, config, &mut rng);
        rec.eval(x);
    }
    Ok(rec.finish())
}

/// The optimizer used for a weight search.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Tpe(TpeConfig),
    Random { seed: u64 },
    /// Exhaustive lattice; the trial budget is ignored.
    Grid { step: f64 },
}

impl Optimizer {
    pub fn maximize<F>(&self, objective: F, space: &SearchSpace, budget: usize) -> Result<SearchResult>
    where
        F: FnMut(&[f64]) -> f64,
    {
        match self {
            Optimizer::Tpe(cfg) => tpe_optimize(objective, space, budget, cfg),
            Optimizer::Random { seed } => random_search(objective, space, budget, *seed),
            Optimizer::Grid { step } => grid_search(objective, space, *step),
        }
    }

    /// Same optimizer with its random stream replaced.
    pub fn with_seed(&self, seed: u64) -> Optimizer {
        match self {
            Optimizer::Tpe(cfg) => Optimizer::Tpe(TpeConfig { seed, ..*cfg }),
            Optimizer::Random { .. } => Optimizer::Random { seed },
            Optimizer::Grid { step } => Optimizer::Grid { step: *step },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Tpe(_) => "tpe",
            Optimizer::Random { .. } => "random",
            Optimizer::Grid { .. } => "grid",
        }
    }
}

/// SplitMix64 finalizer; derives independent seeds for sub-searches.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
