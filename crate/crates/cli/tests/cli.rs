use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn relens() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relens"));
    c.env_remove("RELENS_THREADS");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn relens");
    assert!(
        out.status.success(),
        "relens failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Data {
    dir: PathBuf,
    models: usize,
}

impl Data {
    fn val_q(&self) -> PathBuf {
        self.dir.join("val.q.jsonl")
    }
    fn test_q(&self) -> PathBuf {
        self.dir.join("test.q.jsonl")
    }
    fn preds(&self, split: &str) -> Vec<PathBuf> {
        (0..self.models).map(|m| self.dir.join(format!("m{m}.{split}.p.jsonl"))).collect()
    }
}

fn synth(root: &Path, name: &str, models: usize, relations: usize, sigma: &str, seed: &str) -> Data {
    let dir = root.join(name);
    run(relens().args(["synth", "--entities", "300", "--val-per-relation", "30", "--test-per-relation", "20"]).args([
        "--candidates",
        "20",
        "--models",
        &models.to_string(),
        "--relations",
        &relations.to_string(),
        "--sigma",
        sigma,
        "--seed",
        seed,
        "--out",
    ])
    .arg(&dir));
    Data { dir, models }
}

fn search(data: &Data, method: &str, out: &Path, extra: &[&str]) -> Output {
    let out = relens()
        .args(["search", "--method", method, "--queries"])
        .arg(data.val_q())
        .arg("--preds")
        .args(data.preds("val"))
        .arg("--test-queries")
        .arg(data.test_q())
        .arg("--test-preds")
        .args(data.preds("test"))
        .args(extra)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    out
}

fn eval(data: &Data, weights: &Path, out: &Path) {
    run(relens()
        .arg("eval")
        .arg("--weights")
        .arg(weights)
        .arg("--queries")
        .arg(data.val_q())
        .arg("--preds")
        .args(data.preds("val"))
        .arg("--out")
        .arg(out));
}

#[test]
fn dsc_search_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 3, "0.2", "1");
    let out = tmp.path().join("run1");
    let res = search(&data, "dsc", &out, &["--trials", "20", "--parallel", "4", "--seed", "7"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["weights.json", "report.json", "history.json", "dictionary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = json(&out.join("report.json"));
    assert_eq!(report["method"], "dsc");
    assert_eq!(report["evaluations"], 20 * 90);
    assert_eq!(report["test"]["overall"]["n"], 60);
    let weights = json(&out.join("weights.json"));
    assert_eq!(weights["provenance"], "dsc");
    assert_eq!(weights["relations"].as_object().unwrap().len(), 3);
}

#[test]
fn mean_weights_are_one_over_n() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 3, 2, "0.5", "2");
    let out = tmp.path().join("mean");
    assert!(search(&data, "mean", &out, &[]).status.success());
    let w = json(&out.join("weights.json"));
    for col in w["relations"].as_object().unwrap().values() {
        for a in col.as_array().unwrap() {
            assert_eq!(a.as_f64().unwrap(), 1.0 / 3.0);
        }
    }
    assert!(!out.join("history.json").exists());
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 3, "0.3", "3");
    for method in ["dsc", "simple", "basic", "mrr-mean", "stacking"] {
        let a = tmp.path().join(format!("{method}-a"));
        let b = tmp.path().join(format!("{method}-b"));
        assert!(search(&data, method, &a, &["--trials", "15", "--seed", "5"]).status.success());
        assert!(search(&data, method, &b, &["--trials", "15", "--seed", "5", "--parallel", "3"]).status.success());
        for f in ["weights.json", "report.json", "dictionary.json", "stacking.json"] {
            if a.join(f).exists() {
                assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{method}/{f}");
            }
        }
    }
    let again = synth(tmp.path(), "d2", 2, 3, "0.3", "3");
    for f in ["val.q.jsonl", "m0.val.p.jsonl", "m1.test.p.jsonl"] {
        assert_eq!(std::fs::read(data.dir.join(f)).unwrap(), std::fs::read(again.dir.join(f)).unwrap());
    }
}

#[test]
fn stacking_writes_meta_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 2, "0.3", "4");
    let out = tmp.path().join("st");
    assert!(search(&data, "stacking", &out, &["--stacking-iterations", "50"]).status.success());
    assert!(out.join("stacking.json").exists());
    assert!(!out.join("weights.json").exists());
    assert_eq!(json(&out.join("stacking.json"))["coefficients"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_on_single_model_matches_base_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 1, 2, "0.5", "5");
    let out = tmp.path().join("mean");
    assert!(search(&data, "mean", &out, &[]).status.success());
    let report = tmp.path().join("eval.json");
    eval(&data, &out.join("weights.json"), &report);
    let r = json(&report);

    // independent oracle: average-rank of the truth under the single model's scores
    let queries: Vec<Value> = std::fs::read_to_string(data.val_q())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let preds: Vec<Value> = std::fs::read_to_string(&data.preds("val")[0])
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut rr = 0.0;
    for (q, p) in queries.iter().zip(&preds) {
        assert_eq!(q["qid"], p["qid"]);
        let t = q["true_idx"].as_u64().unwrap() as usize;
        let s: Vec<f64> = p["scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        let better = s.iter().filter(|&&x| x > s[t]).count() as f64;
        let tied = s.iter().filter(|&&x| x == s[t]).count() as f64;
        rr += 1.0 / (better + (tied + 1.0) / 2.0);
    }
    let expected = rr / queries.len() as f64;
    assert!((r["overall"]["mrr"].as_f64().unwrap() - expected).abs() < 1e-12);
}

#[test]
fn eval_report_is_scale_invariant_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 3, 4, "0.4", "6");
    let out = tmp.path().join("dsc");
    assert!(search(&data, "dsc", &out, &["--trials", "10"]).status.success());
    let base = tmp.path().join("base.json");
    eval(&data, &out.join("weights.json"), &base);

    let mut w = json(&out.join("weights.json"));
    for col in w["relations"].as_object_mut().unwrap().values_mut() {
        for a in col.as_array_mut().unwrap() {
            *a = Value::from(a.as_f64().unwrap() * 10.0);
        }
    }
    let scaled_w = tmp.path().join("scaled.json");
    std::fs::write(&scaled_w, serde_json::to_string(&w).unwrap()).unwrap();
    let scaled = tmp.path().join("scaled-report.json");
    eval(&data, &scaled_w, &scaled);
    assert_eq!(std::fs::read(&base).unwrap(), std::fs::read(&scaled).unwrap());

    let r = json(&base);
    let (mut sum, mut n) = (0.0, 0.0);
    for m in r["per_relation"].as_object().unwrap().values() {
        let k = m["n"].as_f64().unwrap();
        sum += k * m["mrr"].as_f64().unwrap();
        n += k;
    }
    assert!((sum / n - r["overall"]["mrr"].as_f64().unwrap()).abs() < 1e-12);
}

fn curve_rows(text: &str) -> Vec<(String, usize, f64)> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["method", "elapsed", "trial", "scorings", "best_mrr"]
    );
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[2].parse().unwrap(), r[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn curves_start_together_and_never_decrease() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 3, 3, "0.3", "7");
    let dsc = tmp.path().join("dsc");
    let simple = tmp.path().join("simple");
    let basic = tmp.path().join("basic");
    assert!(search(&data, "dsc", &dsc, &["--trials", "12"]).status.success());
    assert!(search(&data, "simple", &simple, &["--trials", "12"]).status.success());
    assert!(search(&data, "basic", &basic, &["--trials", "12"]).status.success());
    let out = run(relens()
        .args(["curve", "--history"])
        .arg(dsc.join("history.json"))
        .arg(simple.join("history.json"))
        .arg(basic.join("history.json")));
    let rows = curve_rows(&String::from_utf8(out.stdout).unwrap());
    for method in ["dsc", "simple", "basic"] {
        let ys: Vec<f64> = rows.iter().filter(|r| r.0 == method).map(|r| r.2).collect();
        assert_eq!(ys.len(), if method == "dsc" { 36 } else { 12 });
        assert!(ys.windows(2).all(|w| w[1] >= w[0]), "{method} curve decreases");
    }
    let first = |m: &str| rows.iter().find(|r| r.0 == m).unwrap().2;
    assert!((first("dsc") - first("simple")).abs() < 1e-12);
    assert!((first("basic") - first("simple")).abs() < 1e-12);
}

#[test]
fn single_trial_curve_has_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 1, "0.3", "8");
    let out = tmp.path().join("s");
    assert!(search(&data, "simple", &out, &["--trials", "1"]).status.success());
    let csv_path = tmp.path().join("curve.csv");
    run(relens().args(["curve", "--history"]).arg(out.join("history.json")).arg("--out").arg(&csv_path));
    assert_eq!(curve_rows(&std::fs::read_to_string(csv_path).unwrap()).len(), 1);
}

fn export(weights: &Path) -> Vec<(String, String, f64)> {
    let out = run(relens().args(["weights-export", "--weights"]).arg(weights));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string(), r[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn weights_export_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 3, 6, "0", "9");

    let simple = tmp.path().join("simple");
    assert!(search(&data, "simple", &simple, &["--trials", "20"]).status.success());
    let rows = export(&simple.join("weights.json"));
    assert_eq!(rows.len(), 18);
    let first: Vec<f64> = rows[..3].iter().map(|r| r.2).collect();
    for chunk in rows.chunks(3) {
        assert_eq!(chunk.iter().map(|r| r.2).collect::<Vec<_>>(), first);
    }

    let dsc = tmp.path().join("dsc");
    assert!(search(&data, "dsc", &dsc, &["--trials", "50", "--seed", "3"]).status.success());
    let rows = export(&dsc.join("weights.json"));
    for chunk in rows.chunks(3) {
        let total: f64 = chunk.iter().map(|r| r.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let top = chunk.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        // round robin: relation rK is specialised by model m(K mod 3)
        let k: usize = top.0[1..].parse().unwrap();
        assert_eq!(top.1, format!("m{}", k % 3), "relation {}", top.0);
    }
}

#[test]
fn planted_exact_instance_grid_reaches_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 2, "0", "10");
    let out = tmp.path().join("g");
    assert!(search(&data, "dsc", &out, &["--optimizer", "grid", "--grid-step", "0.1"]).status.success());
    assert_eq!(json(&out.join("report.json"))["val"]["overall"]["mrr"], 1.0);
}

#[test]
fn env_threads_override_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 2, "0.3", "11");
    let out = tmp.path().join("x");
    let res = relens()
        .env("RELENS_THREADS", "zero")
        .args(["search", "--method", "dsc", "--parallel", "2", "--queries"])
        .arg(data.val_q())
        .arg("--preds")
        .args(data.preds("val"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("RELENS_THREADS"));
    let res = relens()
        .env("RELENS_THREADS", "3")
        .args(["search", "--method", "dsc", "--trials", "5", "--queries"])
        .arg(data.val_q())
        .arg("--preds")
        .args(data.preds("val"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
}

#[test]
fn malformed_json_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 2, "0.3", "12");
    let broken = tmp.path().join("m0.val.p.jsonl");
    let mut text = std::fs::read_to_string(&data.preds("val")[0]).unwrap();
    text.push_str("{\"qid\": \"x\", \"scores\": [1.0,\n");
    std::fs::write(&broken, text).unwrap();
    let res = relens()
        .args(["search", "--method", "mean", "--queries"])
        .arg(data.val_q())
        .arg("--preds")
        .arg(&broken)
        .arg(&data.preds("val")[1])
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains(":61:"));
    let res = relens().args(["curve", "--history"]).arg(tmp.path().join("nope.json")).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn duplicate_prediction_is_line_numbered() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 2, "0.3", "13");
    let dup = tmp.path().join("m0.val.p.jsonl");
    let text = std::fs::read_to_string(&data.preds("val")[0]).unwrap();
    let first = text.lines().next().unwrap().to_string();
    std::fs::write(&dup, format!("{text}{first}\n")).unwrap();
    let res = relens()
        .args(["search", "--method", "dsc", "--queries"])
        .arg(data.val_q())
        .arg("--preds")
        .arg(&dup)
        .arg(&data.preds("val")[1])
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("m0.val.p.jsonl:61: duplicate qid"), "{stderr}");
}

#[test]
fn total_budget_mode_and_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", 2, 3, "0.3", "14");
    let out = tmp.path().join("t");
    let res = search(&data, "dsc", &out, &["--trials", "30", "--budget-mode", "total", "--fallback", "simple"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let h = json(&out.join("history.json"));
    let trials: usize = h["searches"].as_array().unwrap().iter().map(|s| s["trials"].as_array().unwrap().len()).sum();
    assert_eq!(trials, 30);
}
