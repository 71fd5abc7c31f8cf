//! Synthetic corpora with planted relation specialists.
//!
//! For a query of relation `r`, every model listed as a specialist of `r`
//! scores the true candidate 1 and the others 0, plus `N(0, sigma)` noise on
//! every candidate; all other models score candidates i.i.d. `N(0, 1)`.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Corpus, PredictionRecord, QueryRecord, SplitRecords};
use crate::search::mix_seed;
use crate::types::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_models: usize,
    pub val_per_relation: usize,
    pub test_per_relation: usize,
    pub n_candidates: usize,
    /// Relations each model specializes in, indexed by model.
    pub specialists: Vec<Vec<usize>>,
    pub sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Model `m` specializes in relations `r` with `r % n_models == m`.
    pub fn round_robin(n_models: usize, n_relations: usize) -> Vec<Vec<usize>> {
        (0..n_models)
            .map(|m| (0..n_relations).filter(|r| r % n_models == m).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.n_relations == 0 {
            return Err(Error::invalid("need at least one model and one relation"));
        }
        if self.n_candidates == 0 || self.n_candidates > self.n_entities {
            return Err(Error::invalid(format!(
                "{} candidates cannot be drawn from {} entities",
                self.n_candidates, self.n_entities
            )));
        }
        if self.val_per_relation == 0 {
            return Err(Error::invalid("need at least one validation query per relation"));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::invalid(format!("noise level {} must be finite and nonnegative", self.sigma)));
        }
        if self.specialists.len() != self.n_models {
            return Err(Error::invalid(format!(
                "{} specialization sets for {} models",
                self.specialists.len(),
                self.n_models
            )));
        }
        let mut covered = vec![false; self.n_relations];
        for (m, set) in self.specialists.iter().enumerate() {
            for &r in set {
                let slot = covered
                    .get_mut(r)
                    .ok_or_else(|| Error::invalid(format!("model {m} specializes in unknown relation {r}")))?;
                *slot = true;
            }
        }
        if let Some(r) = covered.iter().position(|c| !c) {
            return Err(Error::invalid(format!("relation {r} has no specialist")));
        }
        Ok(())
    }

    fn is_specialist(&self, model: usize, relation: usize) -> bool {
        self.specialists[model].contains(&relation)
    }
}

/// Generated records for both splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub val: SplitRecords,
    pub test: SplitRecords,
}

fn generate_split(config: &SynthConfig, split: &str, per_relation: usize, stream: u64) -> SplitRecords {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, stream));
    let c = config.n_candidates;
    let mut queries = Vec::with_capacity(per_relation * config.n_relations);
    let mut preds: Vec<Vec<PredictionRecord>> = vec![Vec::with_capacity(queries.capacity()); config.n_models];
    for r in 0..config.n_relations {
        for k in 0..per_relation {
            let qid = format!("{split}-{r}-{k}");
            let cands: Vec<usize> = sample(&mut rng, config.n_entities, c).into_vec();
            let true_idx = rng.random_range(0..c);
            let anchor = rng.random_range(0..config.n_entities);
            let dir = if k % 2 == 0 { Direction::Tail } else { Direction::Head };
            let (h, t) = match dir {
                Direction::Tail => (anchor, cands[true_idx]),
                Direction::Head => (cands[true_idx], anchor),
            };
            queries.push(QueryRecord {
                qid: qid.clone(),
                h: format!("e{h}"),
                r: format!("r{r}"),
                t: format!("e{t}"),
                dir,
                cands: cands.iter().map(|e| format!("e{e}")).collect(),
                true_idx,
            });
            for (m, out) in preds.iter_mut().enumerate() {
                let scores = if config.is_specialist(m, r) {
                    (0..c)
                        .map(|j| {
                            let base = if j == true_idx { 1.0 } else { 0.0 };
                            if config.sigma > 0.0 {
                                base + config.sigma * rng.sample::<f64, _>(StandardNormal)
                            } else {
                                base
                            }
                        })
                        .collect()
                } else {
                    (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
                };
                out.push(PredictionRecord { qid: qid.clone(), scores });
            }
        }
    }
    SplitRecords {
        source: PathBuf::from(format!("{split}.q.jsonl")),
        queries,
        predictions: preds
            .into_iter()
            .enumerate()
            .map(|(m, recs)| (PathBuf::from(format!("m{m}.{split}.p.jsonl")), recs))
            .collect(),
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    Ok(SyntheticData {
        val: generate_split(config, "val", config.val_per_relation, 0),
        test: generate_split(config, "test", config.test_per_relation, 1),
    })
}

impl SyntheticData {
    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::from_records(&self.val, Some(&self.test))
    }

    /// Writes `val.q.jsonl`, `test.q.jsonl`, `m{i}.val.p.jsonl` and
    /// `m{i}.test.p.jsonl` into `dir`, returning the paths written.
    pub fn write(&self, dir: &Path) -> Result<SyntheticPaths> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        let place = |split: &SplitRecords| -> Result<(PathBuf, Vec<PathBuf>)> {
            let q = dir.join(&split.source);
            let p: Vec<PathBuf> = split.predictions.iter().map(|(p, _)| dir.join(p)).collect();
            split.write(&q, &p)?;
            Ok((q, p))
        };
        let (val_queries, val_preds) = place(&self.val)?;
        let (test_queries, test_preds) = place(&self.test)?;
        Ok(SyntheticPaths { val_queries, val_preds, test_queries, test_preds })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub val_queries: PathBuf,
    pub val_preds: Vec<PathBuf>,
    pub test_queries: PathBuf,
    pub test_preds: Vec<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::RankedDataset;
    use crate::metrics::TiePolicy;
    use crate::types::{ModelId, RelationId};

    fn config(sigma: f64) -> SynthConfig {
        SynthConfig {
            n_entities: 100,
            n_relations: 2,
            n_models: 2,
            val_per_relation: 20,
            test_per_relation: 10,
            n_candidates: 15,
            specialists: vec![vec![0], vec![1]],
            sigma,
            seed: 3,
        }
    }

    #[test]
    fn exact_specialists_are_perfect_on_their_relations() {
        let corpus = generate_synthetic(&config(0.0)).unwrap().corpus().unwrap();
        let ranked = RankedDataset::new(&corpus.val.dataset, TiePolicy::Average);
        for m in 0..2 {
            let report = ranked.evaluate_model(ModelId::from(m)).unwrap();
            let r = corpus.vocab.relation_id(&format!("r{m}")).unwrap();
            assert_eq!(report.per_relation[&r].mrr, 1.0);
            let other = RelationId::from(1 - r.index());
            assert!(report.per_relation[&other].mrr < 1.0);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = generate_synthetic(&config(0.3)).unwrap().write(a.path()).unwrap();
        let pb = generate_synthetic(&config(0.3)).unwrap().write(b.path()).unwrap();
        let files = |p: &SyntheticPaths| {
            let mut v = vec![p.val_queries.clone(), p.test_queries.clone()];
            v.extend(p.val_preds.iter().cloned());
            v.extend(p.test_preds.iter().cloned());
            v
        };
        for (x, y) in files(&pa).iter().zip(files(&pb)) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn written_files_reload_to_the_same_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&config(0.5)).unwrap();
        let p = data.write(dir.path()).unwrap();
        let loaded = Corpus::load(&p.val_queries, &p.val_preds, Some((&p.test_queries, &p.test_preds))).unwrap();
        let direct = data.corpus().unwrap();
        assert_eq!(loaded.vocab, direct.vocab);
        assert_eq!(loaded.models, direct.models);
        assert_eq!(loaded.val.dataset, direct.val.dataset);
        assert_eq!(loaded.test.unwrap().dataset, direct.test.unwrap().dataset);
    }

    #[test]
    fn invalid_configs() {
        let mut c = config(0.0);
        c.specialists = vec![vec![0], vec![0]];
        assert!(c.validate().unwrap_err().to_string().contains("relation 1 has no specialist"));
        let mut c = config(0.0);
        c.specialists[1] = vec![5];
        assert!(c.validate().is_err());
        let mut c = config(-1.0);
        assert!(c.validate().is_err());
        c = config(0.0);
        c.n_candidates = 101;
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_robin_covers_everything() {
        let s = SynthConfig::round_robin(3, 7);
        assert_eq!(s, vec![vec![0, 3, 6], vec![1, 4], vec![2, 5]]);
    }
}
