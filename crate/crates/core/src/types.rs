//! Domain types shared by every stage: identifiers, queries, and the
//! in-memory dataset of per-model candidate scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! dense_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(i: usize) -> Self {
                $name(u32::try_from(i).expect("identifier exceeds u32 range"))
            }
        }
    };
}

dense_id!(
    /// Entity identifier, dense in `[0, n_entities)`.
    EntityId
);
dense_id!(
    /// Relation identifier, dense in `[0, n_relations)`.
    RelationId
);
dense_id!(
    /// Base model identifier, dense in `[0, n_models)`.
    ModelId
);
dense_id!(
    /// Query identifier, dense in `[0, n_queries)` within one split.
    QueryId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub h: EntityId,
    pub r: RelationId,
    pub t: EntityId,
}

/// Which side of the triplet is being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Tail,
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

/// One ranking task: the true answer plus its filtered negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: QueryId,
    pub triplet: Triplet,
    pub direction: Direction,
    pub candidates: Vec<EntityId>,
    pub true_index: usize,
}

impl Query {
    pub fn relation(&self) -> RelationId {
        self.triplet.r
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// The entity the query asks for.
    pub fn answer(&self) -> EntityId {
        match self.direction {
            Direction::Tail => self.triplet.t,
            Direction::Head => self.triplet.h,
        }
    }

    fn validate(&self, n_entities: usize, n_relations: usize) -> Result<()> {
        let Triplet { h, r, t } = self.triplet;
        if h.index() >= n_entities || t.index() >= n_entities {
            return Err(Error::invalid(format!(
                "query {}: entity id out of range (V = {n_entities})",
                self.id.0
            )));
        }
        if r.index() >= n_relations {
            return Err(Error::invalid(format!(
                "query {}: relation id {} out of range (R = {n_relations})",
                self.id.0, r.0
            )));
        }
        if self.candidates.is_empty() {
            return Err(Error::invalid(format!(
                "query {}: empty candidate list",
                self.id.0
            )));
        }
        if self.true_index >= self.candidates.len() {
            return Err(Error::invalid(format!(
                "query {}: true_idx {} outside {} candidates",
                self.id.0,
                self.true_index,
                self.candidates.len()
            )));
        }
        if self.candidates[self.true_index] != self.answer() {
            return Err(Error::invalid(format!(
                "query {}: candidate at true_idx is not the {} entity",
                self.id.0,
                self.direction.as_str()
            )));
        }
        let mut seen = self.candidates.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!(
                "query {}: duplicate candidate entities",
                self.id.0
            )));
        }
        if self.candidates.iter().any(|e| e.index() >= n_entities) {
            return Err(Error::invalid(format!(
                "query {}: candidate entity id out of range",
                self.id.0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_models: usize,
    pub split: SplitName,
}

/// A split's queries together with every model's aligned candidate scores.
///
/// Immutable once constructed; `scores[m][q][j]` is model `m`'s score for
/// candidate `j` of query `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    queries: Vec<Query>,
    scores: Vec<Vec<Vec<f64>>>,
}

impl Dataset {
    /// Builds a dataset, auditing identifier ranges and score alignment.
    pub fn new(meta: DatasetMeta, queries: Vec<Query>, scores: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if meta.n_models == 0 {
            return Err(Error::invalid("dataset needs at least one model"));
        }
        if scores.len() != meta.n_models {
            return Err(Error::invalid(format!(
                "expected score sets for {} models, got {}",
                meta.n_models,
                scores.len()
            )));
        }
        for (qi, q) in queries.iter().enumerate() {
            if q.id.index() != qi {
                return Err(Error::invalid(format!(
                    "query ids must be dense: position {qi} holds id {}",
                    q.id.0
                )));
            }
            q.validate(meta.n_entities, meta.n_relations)?;
        }
        for (m, per_model) in scores.iter().enumerate() {
            if per_model.len() != queries.len() {
                return Err(Error::invalid(format!(
                    "model {m}: {} score vectors for {} queries",
                    per_model.len(),
                    queries.len()
                )));
            }
            for (q, s) in queries.iter().zip(per_model) {
                if s.len() != q.n_candidates() {
                    return Err(Error::invalid(format!(
                        "model {m}, query {}: {} scores for {} candidates",
                        q.id.0,
                        s.len(),
                        q.n_candidates()
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "model {m}, query {}: non-finite score",
                        q.id.0
                    )));
                }
            }
        }
        Ok(Dataset {
            meta,
            queries,
            scores,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn n_models(&self) -> usize {
        self.meta.n_models
    }

    pub fn n_relations(&self) -> usize {
        self.meta.n_relations
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn scores(&self, model: ModelId, query: QueryId) -> &[f64] {
        &self.scores[model.index()][query.index()]
    }

    /// Restricts the dataset to a subset of its models, in the given order.
    pub fn select_models(&self, models: &[ModelId]) -> Result<Dataset> {
        let scores = models
            .iter()
            .map(|m| {
                self.scores
                    .get(m.index())
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no model {}", m.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            DatasetMeta {
                n_models: models.len(),
                ..self.meta
            },
            self.queries.clone(),
            scores,
        )
    }

    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            relation: None,
            indices: (0..self.queries.len()).collect(),
        }
    }
}

/// A borrowed subset of a dataset's queries.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    dataset: &'a Dataset,
    relation: Option<RelationId>,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn relation(&self) -> Option<RelationId> {
        self.relation
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn queries(&self) -> impl Iterator<Item = &'a Query> + '_ {
        self.indices.iter().map(|&i| &self.dataset.queries[i])
    }
}

/// Splits a dataset into one view per relation, indexed by relation id.
/// Relations without queries get empty views.
pub fn partition_by_relation(dataset: &Dataset) -> Vec<DatasetView<'_>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_relations()];
    for (i, q) in dataset.queries.iter().enumerate() {
        buckets[q.relation().index()].push(i);
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(r, indices)| DatasetView {
            dataset,
            relation: Some(RelationId::from(r)),
            indices,
        })
        .collect()
}
