//! On-disk formats: JSON Lines query and prediction files, and JSON weight,
//! report, dictionary and trial-history documents.
//!
//! Parsing failures are [`Error::Malformed`]; files that parse but disagree
//! with each other (misaligned scores, duplicate or missing query ids,
//! negative weights, mismatched model counts) are [`Error::Invalid`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::{IndexMap, IndexSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dsc::RelationSearch;
use crate::ensemble::{Provenance, WeightTable};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, Metrics};
use crate::search::TrialRecord;
use crate::types::{
    Dataset, DatasetMeta, Direction, EntityId, Query, QueryId, RelationId, SplitName, Triplet,
};

/// One line of a queries file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub qid: String,
    pub h: String,
    pub r: String,
    pub t: String,
    pub dir: Direction,
    pub cands: Vec<String>,
    pub true_idx: usize,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub qid: String,
    pub scores: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSON Lines file; every non-final line must hold one record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            pending_blank.get_or_insert(i + 1);
            continue;
        }
        if let Some(blank) = pending_blank {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: blank,
                message: "blank line".into(),
            });
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

/// Model label for a predictions path: the file name up to its first dot,
/// so `m0.val.p.jsonl` and `m0.test.p.jsonl` both name model `m0`.
pub fn model_name(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// String to dense-id dictionaries, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub entities: IndexSet<String>,
    pub relations: IndexSet<String>,
}

impl Vocab {
    fn entity(&mut self, name: &str) -> EntityId {
        EntityId::from(self.entities.insert_full(name.to_string()).0)
    }

    fn relation(&mut self, name: &str) -> RelationId {
        RelationId::from(self.relations.insert_full(name.to_string()).0)
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        &self.relations[r.index()]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get_index_of(name).map(RelationId::from)
    }
}

/// The dictionary persisted beside outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub models: Vec<String>,
}

/// Raw records of one split, before interning.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecords {
    pub source: PathBuf,
    pub queries: Vec<QueryRecord>,
    /// Per model: the file it came from and its records.
    pub predictions: Vec<(PathBuf, Vec<PredictionRecord>)>,
}

impl SplitRecords {
    pub fn read(queries: &Path, predictions: &[PathBuf]) -> Result<Self> {
        Ok(SplitRecords {
            source: queries.to_path_buf(),
            queries: read_jsonl(queries)?,
            predictions: predictions
                .iter()
                .map(|p| read_jsonl(p).map(|r| (p.clone(), r)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn write(&self, queries: &Path, predictions: &[PathBuf]) -> Result<()> {
        if predictions.len() != self.predictions.len() {
            return Err(Error::contract("one output path per model"));
        }
        write_jsonl(queries, &self.queries)?;
        for (path, (_, recs)) in predictions.iter().zip(&self.predictions) {
            write_jsonl(path, recs)?;
        }
        Ok(())
    }
}

/// Query ids of a split, parallel to its dataset's queries.
#[derive(Debug, Clone)]
pub struct Split {
    pub qids: Vec<String>,
    pub dataset: Dataset,
}

/// Validation and (optionally) test data with a shared dictionary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub models: Vec<String>,
    pub val: Split,
    pub test: Option<Split>,
}

struct Interned {
    qids: Vec<String>,
    queries: Vec<Query>,
    scores: Vec<Vec<Vec<f64>>>,
}

fn intern_split(records: &SplitRecords, vocab: &mut Vocab) -> Result<Interned> {
    let src = records.source.display();
    let mut qids = Vec::with_capacity(records.queries.len());
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(records.queries.len());
    let mut queries = Vec::with_capacity(records.queries.len());
    for (i, rec) in records.queries.iter().enumerate() {
        let line = i + 1;
        if index.insert(rec.qid.as_str(), i).is_some() {
            return Err(Error::invalid(format!("{src}:{line}: duplicate qid `{}`", rec.qid)));
        }
        if rec.cands.is_empty() {
            return Err(Error::invalid(format!("{src}:{line}: empty candidate list")));
        }
        if rec.true_idx >= rec.cands.len() {
            return Err(Error::invalid(format!(
                "{src}:{line}: true_idx {} outside {} candidates",
                rec.true_idx,
                rec.cands.len()
            )));
        }
        let answer = match rec.dir {
            Direction::Tail => &rec.t,
            Direction::Head => &rec.h,
        };
        if &rec.cands[rec.true_idx] != answer {
            return Err(Error::invalid(format!(
                "{src}:{line}: cands[true_idx] is `{}`, expected {} entity `{answer}`",
                rec.cands[rec.true_idx],
                rec.dir.as_str()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(rec.cands.len());
        if let Some(dup) = rec.cands.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::invalid(format!("{src}:{line}: duplicate candidate `{dup}`")));
        }
        let triplet = Triplet {
            h: vocab.entity(&rec.h),
            r: vocab.relation(&rec.r),
            t: vocab.entity(&rec.t),
        };
        queries.push(Query {
            id: QueryId::from(i),
            triplet,
            direction: rec.dir,
            candidates: rec.cands.iter().map(|c| vocab.entity(c)).collect(),
            true_index: rec.true_idx,
        });
        qids.push(rec.qid.clone());
    }

    let mut scores = Vec::with_capacity(records.predictions.len());
    for (path, recs) in &records.predictions {
        let psrc = path.display();
        let mut aligned: Vec<Option<Vec<f64>>> = vec![None; queries.len()];
        for (i, rec) in recs.iter().enumerate() {
            let line = i + 1;
            let Some(&q) = index.get(rec.qid.as_str()) else {
                return Err(Error::invalid(format!("{psrc}:{line}: qid `{}` not in {src}", rec.qid)));
            };
            if aligned[q].is_some() {
                return Err(Error::invalid(format!("{psrc}:{line}: duplicate qid `{}`", rec.qid)));
            }
            let c = queries[q].n_candidates();
            if rec.scores.len() != c {
                return Err(Error::invalid(format!(
                    "{psrc}:{line}: {} scores for {c} candidates of `{}`",
                    rec.scores.len(),
                    rec.qid
                )));
            }
            if rec.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::invalid(format!("{psrc}:{line}: non-finite score")));
            }
            aligned[q] = Some(rec.scores.clone());
        }
        if let Some(missing) = aligned.iter().position(Option::is_none) {
            return Err(Error::invalid(format!("{psrc}: no scores for qid `{}`", qids[missing])));
        }
        scores.push(aligned.into_iter().map(Option::unwrap).collect());
    }
    Ok(Interned { qids, queries, scores })
}

impl Corpus {
    /// Interns and validates validation (and optional test) records. Model
    /// names come from the validation prediction paths; test predictions are
    /// matched to them by name.
    pub fn from_records(val: &SplitRecords, test: Option<&SplitRecords>) -> Result<Corpus> {
        if val.predictions.is_empty() {
            return Err(Error::invalid("at least one predictions file is required"));
        }
        let models: Vec<String> = val.predictions.iter().map(|(p, _)| model_name(p)).collect();
        if let Some(dup) = models.iter().enumerate().find(|(i, m)| models[..*i].contains(m)) {
            return Err(Error::invalid(format!("model name `{}` used twice", dup.1)));
        }
        let mut vocab = Vocab::default();
        let v = intern_split(val, &mut vocab)?;
        let t = match test {
            Some(t) => {
                if t.predictions.len() != models.len() {
                    return Err(Error::invalid(format!(
                        "{} validation prediction files but {} test prediction files",
                        models.len(),
                        t.predictions.len()
                    )));
                }
                let mut interned = intern_split(t, &mut vocab)?;
                let test_models: Vec<String> = t.predictions.iter().map(|(p, _)| model_name(p)).collect();
                if test_models != models {
                    let mut reordered = Vec::with_capacity(models.len());
                    for m in &models {
                        let pos = test_models.iter().position(|x| x == m).ok_or_else(|| {
                            Error::invalid(format!("no test predictions for model `{m}`"))
                        })?;
                        reordered.push(std::mem::take(&mut interned.scores[pos]));
                    }
                    interned.scores = reordered;
                }
                Some(interned)
            }
            None => None,
        };
        let meta = |split| DatasetMeta {
            n_entities: vocab.entities.len(),
            n_relations: vocab.relations.len(),
            n_models: models.len(),
            split,
        };
        let val = Split {
            dataset: Dataset::new(meta(SplitName::Valid), v.queries, v.scores)?,
            qids: v.qids,
        };
        let test = t
            .map(|t| {
                Dataset::new(meta(SplitName::Test), t.queries, t.scores).map(|dataset| Split {
                    qids: t.qids,
                    dataset,
                })
            })
            .transpose()?;
        Ok(Corpus {
            vocab,
            models,
            val,
            test,
        })
    }

    pub fn load(
        val_queries: &Path,
        val_preds: &[PathBuf],
        test: Option<(&Path, &[PathBuf])>,
    ) -> Result<Corpus> {
        let val = SplitRecords::read(val_queries, val_preds)?;
        let test = test.map(|(q, p)| SplitRecords::read(q, p)).transpose()?;
        Corpus::from_records(&val, test.as_ref())
    }

    pub fn dictionary(&self) -> DictionaryFile {
        DictionaryFile {
            entities: self.vocab.entities.iter().cloned().collect(),
            relations: self.vocab.relations.iter().cloned().collect(),
            models: self.models.clone(),
        }
    }

    pub fn relation_names(&self) -> Vec<String> {
        self.vocab.relations.iter().cloned().collect()
    }
}

/// Weight table on disk, keyed by relation name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub n_models: usize,
    pub models: Vec<String>,
    pub relations: IndexMap<String, Vec<f64>>,
    pub provenance: String,
    pub seed: u64,
}

impl WeightsFile {
    pub fn from_table(table: &WeightTable, models: &[String], relations: &[String], seed: u64) -> Result<Self> {
        if models.len() != table.n_models() || relations.len() != table.n_relations() {
            return Err(Error::contract("labels do not match the weight table shape"));
        }
        Ok(WeightsFile {
            n_models: table.n_models(),
            models: models.to_vec(),
            relations: relations
                .iter()
                .zip(table.columns())
                .map(|(r, c)| (r.clone(), c.to_vec()))
                .collect(),
            provenance: table.provenance().to_string(),
            seed,
        })
    }

    /// Checks internal consistency: model count, column lengths, and that
    /// every column is nonnegative with a positive entry.
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.models.len() != self.n_models {
            return Err(Error::invalid(format!(
                "n_models is {} but {} model names are listed",
                self.n_models,
                self.models.len()
            )));
        }
        self.provenance.parse::<Provenance>()?;
        for (name, col) in &self.relations {
            if col.len() != self.n_models {
                return Err(Error::invalid(format!(
                    "relation `{name}`: {} weights for {} models",
                    col.len(),
                    self.n_models
                )));
            }
            if let Some(bad) = col.iter().find(|a| !a.is_finite() || **a < 0.0) {
                return Err(Error::invalid(format!("relation `{name}`: negative or non-finite weight {bad}")));
            }
            if col.iter().all(|&a| a == 0.0) {
                return Err(Error::invalid(format!("relation `{name}`: all weights are zero")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: WeightsFile = read_json(path)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Builds the table for a corpus: columns ordered by the corpus's relation
    /// ids and entries by its model order. Every corpus relation must be present.
    pub fn to_table(&self, models: &[String], vocab: &Vocab) -> Result<WeightTable> {
        self.validate()?;
        if models.len() != self.n_models {
            return Err(Error::invalid(format!(
                "weights cover {} models, data has {}",
                self.n_models,
                models.len()
            )));
        }
        let order: Vec<usize> = models
            .iter()
            .map(|m| {
                self.models
                    .iter()
                    .position(|x| x == m)
                    .ok_or_else(|| Error::invalid(format!("weights have no model `{m}`")))
            })
            .collect::<Result<_>>()?;
        let columns = vocab
            .relations
            .iter()
            .map(|r| {
                let col = self
                    .relations
                    .get(r)
                    .ok_or_else(|| Error::invalid(format!("weights have no relation `{r}`")))?;
                Ok(order.iter().map(|&i| col[i]).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        WeightTable::from_columns(columns, self.provenance.parse()?)
    }
}

/// Evaluation report on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub overall: Metrics,
    pub per_relation: IndexMap<String, Metrics>,
}

impl ReportFile {
    pub fn from_report(report: &EvalReport, vocab: &Vocab) -> Self {
        ReportFile {
            overall: report.overall,
            per_relation: report
                .per_relation
                .iter()
                .map(|(r, m)| (vocab.relation_name(*r).to_string(), *m))
                .collect(),
        }
    }
}

/// One search's trials on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub relation: Option<String>,
    pub n_queries: usize,
    pub start_offset: f64,
    pub trials: Vec<TrialRecord>,
}

/// Trial histories of one weight-search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFile {
    pub method: String,
    pub optimizer: String,
    pub n_val: usize,
    pub searches: Vec<SearchLog>,
}

impl HistoryFile {
    pub fn new(method: &str, optimizer: &str, n_val: usize, searches: &[RelationSearch], vocab: &Vocab) -> Self {
        HistoryFile {
            method: method.to_string(),
            optimizer: optimizer.to_string(),
            n_val,
            searches: searches
                .iter()
                .map(|s| SearchLog {
                    relation: s.relation.map(|r| vocab.relation_name(r).to_string()),
                    n_queries: s.n_queries,
                    start_offset: s.start_offset,
                    trials: s.history.clone(),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let h: HistoryFile = read_json(path)?;
        if h.searches.is_empty() || h.searches.iter().any(|s| s.trials.is_empty()) {
            return Err(Error::invalid(format!("{}: history has no trials", path.display())));
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(qid: &str, r: &str, cands: &[&str], true_idx: usize) -> QueryRecord {
        QueryRecord {
            qid: qid.into(),
            h: "a".into(),
            r: r.into(),
            t: cands[true_idx].into(),
            dir: Direction::Tail,
            cands: cands.iter().map(|s| s.to_string()).collect(),
            true_idx,
        }
    }

    fn p(qid: &str, scores: &[f64]) -> PredictionRecord {
        PredictionRecord { qid: qid.into(), scores: scores.to_vec() }
    }

    fn records() -> SplitRecords {
        SplitRecords {
            source: "val.q.jsonl".into(),
            queries: vec![q("q1", "likes", &["x", "y", "z"], 1), q("q2", "owns", &["y", "w"], 0)],
            predictions: vec![
                ("m0.val.p.jsonl".into(), vec![p("q2", &[0.1, 0.2]), p("q1", &[0.3, 0.2, 0.1])]),
                ("m1.val.p.jsonl".into(), vec![p("q1", &[1.0, 2.0, 3.0]), p("q2", &[5.0, -1.0])]),
            ],
        }
    }

    #[test]
    fn interns_and_aligns() {
        let c = Corpus::from_records(&records(), None).unwrap();
        assert_eq!(c.models, vec!["m0", "m1"]);
        assert_eq!(c.vocab.relations.len(), 2);
        let ds = &c.val.dataset;
        assert_eq!(ds.scores(crate::types::ModelId(0), QueryId(1)), &[0.1, 0.2]);
        assert_eq!(ds.queries()[0].answer(), ds.queries()[0].candidates[1]);
    }

    #[test]
    fn duplicate_prediction_qid_reports_line() {
        let mut r = records();
        r.predictions[1].1.push(p("q1", &[0.0, 0.0, 0.0]));
        let err = Corpus::from_records(&r, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("m1.val.p.jsonl:3: duplicate qid"), "{err}");
    }

    #[test]
    fn misaligned_and_missing_scores() {
        let mut r = records();
        r.predictions[0].1[0].scores.push(0.5);
        assert!(Corpus::from_records(&r, None).unwrap_err().to_string().contains("3 scores for 2"));
        let mut r = records();
        r.predictions[0].1.pop();
        assert!(Corpus::from_records(&r, None).unwrap_err().to_string().contains("no scores for qid `q1`"));
        let mut r = records();
        r.predictions[0].1[0].qid = "zz".into();
        assert_eq!(Corpus::from_records(&r, None).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn bad_queries() {
        let mut r = records();
        r.queries[1].qid = "q1".into();
        assert!(Corpus::from_records(&r, None).unwrap_err().to_string().contains("duplicate qid"));
        let mut r = records();
        r.queries[0].true_idx = 0;
        assert_eq!(Corpus::from_records(&r, None).unwrap_err().exit_code(), 2);
        let mut r = records();
        r.queries[0].cands[2] = "x".into();
        assert!(Corpus::from_records(&r, None).unwrap_err().to_string().contains("duplicate candidate"));
    }

    #[test]
    fn test_split_model_count_must_match() {
        let val = records();
        let mut test = records();
        test.predictions.pop();
        let err = Corpus::from_records(&val, Some(&test)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn test_models_matched_by_name() {
        let val = records();
        let mut test = records();
        test.predictions.reverse();
        let c = Corpus::from_records(&val, Some(&test)).unwrap();
        let t = &c.test.unwrap().dataset;
        assert_eq!(t.scores(crate::types::ModelId(1), QueryId(0)), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_line_is_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        std::fs::write(&path, "{\"qid\": \"a\"}\nnot json\n").unwrap();
        let err = read_jsonl::<QueryRecord>(&path).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn weights_file_validation() {
        let mut w = WeightsFile {
            n_models: 2,
            models: vec!["m0".into(), "m1".into()],
            relations: [("likes".to_string(), vec![0.2, 0.8])].into_iter().collect(),
            provenance: "dsc".into(),
            seed: 1,
        };
        w.validate().unwrap();
        w.relations.insert("owns".into(), vec![-0.1, 1.0]);
        assert_eq!(w.validate().unwrap_err().exit_code(), 2);
        w.relations.insert("owns".into(), vec![0.0, 0.0]);
        assert!(w.validate().is_err());
        w.relations.insert("owns".into(), vec![1.0]);
        assert!(w.validate().is_err());
    }

    #[test]
    fn weights_to_table_reorders_models() {
        let c = Corpus::from_records(&records(), None).unwrap();
        let w = WeightsFile {
            n_models: 2,
            models: vec!["m1".into(), "m0".into()],
            relations: [("owns".to_string(), vec![0.9, 0.1]), ("likes".to_string(), vec![0.3, 0.7])]
                .into_iter()
                .collect(),
            provenance: "manual".into(),
            seed: 0,
        };
        let t = w.to_table(&c.models, &c.vocab).unwrap();
        assert_eq!(t.column(RelationId(0)), &[0.7, 0.3]);
        assert_eq!(t.column(RelationId(1)), &[0.1, 0.9]);
    }

    fn weights_strategy() -> impl Strategy<Value = WeightsFile> {
        (1usize..5, 1usize..6, any::<u64>()).prop_flat_map(|(n, r, seed)| {
            prop::collection::vec(prop::collection::vec(1e-300f64..1e300, n), r).prop_map(move |cols| WeightsFile {
                n_models: n,
                models: (0..n).map(|i| format!("model-{i}")).collect(),
                relations: cols.into_iter().enumerate().map(|(i, c)| (format!("rel/{i}"), c)).collect(),
                provenance: "dsc".into(),
                seed,
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn weights_round_trip(w in weights_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("w.json");
            w.save(&path).unwrap();
            prop_assert_eq!(WeightsFile::load(&path).unwrap(), w);
        }
    }
}
