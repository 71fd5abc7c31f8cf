use std::io::Write;
use std::path::Path;

use relens_core::curve::learning_curve;
use relens_core::dsc::{relens_basic, relens_dsc, relens_simple, DscConfig};
use relens_core::ensemble::{mean_weights, mrr_mean_weights, simple_ens_search, RankedDataset, WeightTable};
use relens_core::io::{write_json, Corpus, HistoryFile, ReportFile, WeightsFile};
use relens_core::metrics::EvalReport;
use relens_core::search::{mix_seed, Optimizer, TpeConfig};
use relens_core::stacking::{stacking_fit, StackingConfig};
use relens_core::synth::{generate_synthetic, SynthConfig};
use relens_core::types::RelationId;
use relens_core::{Error, Result};
use serde::Serialize;

use crate::{CurveArgs, EvalArgs, ExportArgs, Fallback, Method, OptimizerKind, SearchArgs, SynthArgs};

#[derive(Serialize)]
struct SearchReport {
    method: &'static str,
    /// Query scorings spent by the search.
    evaluations: u64,
    val: ReportFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<ReportFile>,
}

fn optimizer(args: &SearchArgs) -> Result<Optimizer> {
    Ok(match args.optimizer {
        OptimizerKind::Tpe => {
            let config = TpeConfig {
                gamma: args.gamma,
                n_startup: args.startup,
                n_ei_candidates: args.ei_candidates,
                seed: args.seed,
            };
            config.validate()?;
            Optimizer::Tpe(config)
        }
        OptimizerKind::Random => Optimizer::Random { seed: args.seed },
        OptimizerKind::Grid => Optimizer::Grid { step: args.grid_step },
    })
}

fn threads(flag: usize) -> Result<usize> {
    match std::env::var("RELENS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("RELENS_THREADS must be a positive integer, got `{v}`"))),
        Err(_) if flag == 0 => Err(Error::invalid("--parallel must be positive")),
        Err(_) => Ok(flag),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: "<output>".into(), source },
        other => Error::invalid(format!("{other:?}")),
    }
}

pub fn search(args: &SearchArgs) -> Result<()> {
    if args.trials == 0 {
        return Err(Error::invalid("--trials must be positive"));
    }
    let parallelism = threads(args.parallel)?;
    let test = args.test_queries.as_deref().map(|q| (q, args.test_preds.as_slice()));
    let corpus = Corpus::load(&args.data.queries, &args.data.preds, test)?;
    let policy = args.data.tie_policy;
    let val = RankedDataset::new(&corpus.val.dataset, policy);
    let test = corpus.test.as_ref().map(|t| RankedDataset::new(&t.dataset, policy));
    let relations = corpus.relation_names();
    let n_val = val.len();

    create_dir(&args.out)?;
    write_json(&args.out.join("dictionary.json"), &corpus.dictionary())?;

    let report = |val_report: &EvalReport, test_report: Option<&EvalReport>, evaluations| SearchReport {
        method: args.method.as_str(),
        evaluations,
        val: ReportFile::from_report(val_report, &corpus.vocab),
        test: test_report.map(|r| ReportFile::from_report(r, &corpus.vocab)),
    };
    let fixed = |table: WeightTable| -> Result<()> {
        let val_report = val.evaluate(&table)?;
        let test_report = test.as_ref().map(|t| t.evaluate(&table)).transpose()?;
        WeightsFile::from_table(&table, &corpus.models, &relations, args.seed)?.save(&args.out.join("weights.json"))?;
        write_json(&args.out.join("report.json"), &report(&val_report, test_report.as_ref(), 0))
    };

    let n = corpus.models.len();
    let r = relations.len();
    let outcome = match args.method {
        Method::Mean => return fixed(mean_weights(n, r)?),
        Method::MrrMean => return fixed(mrr_mean_weights(&val.model_mrrs()?, r)?),
        Method::Stacking => {
            let config = StackingConfig {
                max_iterations: args.stacking_iterations,
                learning_rate: args.stacking_lr,
                negatives_per_query: args.stacking_negatives,
                seed: args.seed,
            };
            let model = stacking_fit(&val, &config)?;
            let val_report = model.evaluate(&val)?;
            let test_report = test.as_ref().map(|t| model.evaluate(t)).transpose()?;
            write_json(&args.out.join("stacking.json"), &model)?;
            return write_json(&args.out.join("report.json"), &report(&val_report, test_report.as_ref(), 0));
        }
        Method::Simple => relens_simple(&val, test.as_ref(), &optimizer(args)?, args.trials)?,
        Method::Basic => relens_basic(&val, test.as_ref(), &optimizer(args)?, args.trials)?,
        Method::Dsc => {
            let optimizer = optimizer(args)?;
            let fallback = match args.fallback {
                Fallback::Uniform => None,
                Fallback::Simple => {
                    let flat_seed = mix_seed(args.seed, u64::MAX);
                    let flat = simple_ens_search(&val, &optimizer.with_seed(flat_seed), args.trials)?;
                    Some(flat.weights.column(RelationId(0)).to_vec())
                }
            };
            let config = DscConfig {
                optimizer,
                budget: args.trials,
                budget_mode: args.budget_mode,
                parallelism,
                seed: args.seed,
                fallback,
            };
            relens_dsc(&val, test.as_ref(), &config)?
        }
    };
    WeightsFile::from_table(&outcome.weights, &corpus.models, &relations, args.seed)?
        .save(&args.out.join("weights.json"))?;
    write_json(
        &args.out.join("report.json"),
        &report(&outcome.val_report, outcome.test_report.as_ref(), outcome.evaluation_count),
    )?;
    let optimizer_name = optimizer(args)?.name();
    let history = HistoryFile::new(args.method.as_str(), optimizer_name, n_val, &outcome.searches, &corpus.vocab);
    write_json(&args.out.join("history.json"), &history)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let weights = WeightsFile::load(&args.weights)?;
    let corpus = Corpus::load(&args.data.queries, &args.data.preds, None)?;
    let table = weights.to_table(&corpus.models, &corpus.vocab)?;
    let ranked = RankedDataset::new(&corpus.val.dataset, args.data.tie_policy);
    let report = ReportFile::from_report(&ranked.evaluate(&table)?, &corpus.vocab);
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

pub fn curve(args: &CurveArgs) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer(args.out.as_deref())?);
    for path in &args.history {
        let history = HistoryFile::load(path)?;
        for row in learning_curve(&history)? {
            w.serialize(row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io { path: "<output>".into(), source })
}

#[derive(Serialize)]
struct WeightRow<'a> {
    relation: &'a str,
    model: &'a str,
    alpha: f64,
}

pub fn weights_export(args: &ExportArgs) -> Result<()> {
    let weights = WeightsFile::load(&args.weights)?;
    let mut w = csv::Writer::from_writer(writer(args.out.as_deref())?);
    for (relation, column) in &weights.relations {
        let total: f64 = column.iter().sum();
        for (model, a) in weights.models.iter().zip(column) {
            w.serialize(WeightRow { relation, model, alpha: a / total }).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io { path: "<output>".into(), source })
}

fn parse_specialists(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|group| {
            group
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad relation index `{t}` in --specialists"))))
                .collect()
        })
        .collect()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let specialists = match &args.specialists {
        Some(s) => parse_specialists(s)?,
        None => SynthConfig::round_robin(args.models, args.relations),
    };
    let config = SynthConfig {
        n_entities: args.entities,
        n_relations: args.relations,
        n_models: args.models,
        val_per_relation: args.val_per_relation,
        test_per_relation: args.test_per_relation,
        n_candidates: args.candidates,
        specialists,
        sigma: args.sigma,
        seed: args.seed,
    };
    let data = generate_synthetic(&config)?;
    data.write(&args.out)?;
    write_json(&args.out.join("synth.json"), &config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specialists_syntax() {
        assert_eq!(parse_specialists("0,3;1;2,5").unwrap(), vec![vec![0, 3], vec![1], vec![2, 5]]);
        assert!(parse_specialists("0,x").is_err());
    }
}
