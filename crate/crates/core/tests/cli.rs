use std::path::Path;
use std::process::{Command, Output};

use selgam::data::{Dataset, ModelSpec};
use selgam::optimizer::{fit_with_options, Equation, FitOptions, FittedModel};
use selgam::simulate::{generate, DgpSpec};

const MODEL: &str = r#"{
  "selection": [{"column": "x1", "kind": "smooth"}, {"column": "x2", "kind": "smooth"}, {"column": "x4", "kind": "linear"}, {"column": "x5", "kind": "linear"}],
  "outcome": [{"column": "x1", "kind": "smooth"}, {"column": "x3", "kind": "smooth"}, {"column": "x4", "kind": "linear"}, {"column": "x5", "kind": "linear"}],
  "margin": "gamma",
  "copula": "gumbel"
}"#;

fn selgam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selgam")).args(args).env_remove("SELGAM_OUT_DIR").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

/// Simulated consistency data and the model spec, written into `dir`.
fn inputs(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data.csv");
    generate(&DgpSpec::consistency(n, 17)).unwrap().write_csv(&data).unwrap();
    let model = dir.join("model_spec.json");
    std::fs::write(&model, MODEL).unwrap();
    (data, model)
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap()
}

#[test]
fn fit_matches_the_in_memory_fit_and_reloads_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let (data_path, model_path) = inputs(tmp.path(), 600);
    let out = tmp.path().join("out");
    let o = selgam(&["fit", "--data", path(&data_path), "--model", path(&model_path), "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let data = Dataset::read_csv(&data_path).unwrap();
    let spec = ModelSpec::from_json(MODEL).unwrap();
    let direct = fit_with_options(&data, &spec, &FitOptions::default()).unwrap();
    let written = read(&out.join("model.json"));
    assert_eq!(written, direct.to_json().unwrap() + "\n");

    let reloaded = FittedModel::from_json(&written).unwrap();
    for eq in [Equation::Selection, Equation::Outcome] {
        let a = reloaded.predict(eq, &data).unwrap();
        let b = direct.predict(eq, &data).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
    // predictions file carries the same linear predictors
    let preds = read(&out.join("predictions.csv"));
    let mut lines = preds.lines();
    assert_eq!(lines.next().unwrap(), "row,sel,eta1,var_eta1,eta2,var_eta2");
    let eta2 = direct.predict(Equation::Outcome, &data).unwrap();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert!((f[4].parse::<f64>().unwrap() - eta2[i]).abs() <= 1e-12);
        assert!(f[5].parse::<f64>().unwrap() >= 0.0);
    }
    for name in ["curve_selection_x1.csv", "curve_selection_x2.csv", "curve_outcome_x1.csv", "curve_outcome_x3.csv"] {
        let c = read(&out.join(name));
        assert!(c.starts_with("x,estimate,se,lower,upper\n"));
        assert_eq!(c.lines().count(), 1 + selgam::cli::CURVE_POINTS);
        assert!(!c.contains('\r'));
    }
}

#[test]
fn missing_outcome_is_a_parse_error_naming_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    std::fs::write(&data, "sel,out,x1,x2,x3,x4,x5\n0,,20,20,5,0,1\n1,,30,40,6,1,0\n").unwrap();
    let model = tmp.path().join("m.json");
    std::fs::write(&model, MODEL).unwrap();
    let o = selgam(&["fit", "--data", path(&data), "--model", path(&model), "--out-dir", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "parse");
    assert!(e["message"].as_str().unwrap().contains("row 2"));
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn bad_arguments_and_inputs_exit_with_code_two() {
    let o = selgam(&["fit", "--data"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");
    let o = selgam(&["mc", "--study", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let o = selgam(&["fit", "--data", "/nonexistent.csv", "--model", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = selgam(&["report"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "input");
}

#[test]
fn degenerate_fit_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    // selection never varies: the design cannot identify the selection equation
    let mut s = String::from("sel,out,x\n");
    for i in 0..30 {
        s.push_str(&format!("1,{},{}\n", 1.0 + i as f64 * 0.1, i));
    }
    std::fs::write(&data, s).unwrap();
    let model = tmp.path().join("m.json");
    std::fs::write(&model, r#"{"selection":[{"column":"x","kind":"linear"}],"outcome":[{"column":"x","kind":"linear"}],"margin":"gaussian","copula":"normal"}"#).unwrap();
    let o = selgam(&["fit", "--data", path(&data), "--model", path(&model), "--out-dir", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_json(&o)["exit_code"], 3);
}

#[test]
fn copula_margin_and_tau_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = inputs(tmp.path(), 400);
    let out = tmp.path().join("clayton");
    let o = selgam(&["fit", "--data", path(&data), "--model", path(&model), "--copula", "clayton", "--tau", "0.5", "--fix-theta", "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = FittedModel::from_json(&read(&out.join("model.json"))).unwrap();
    // Clayton: theta = 2 tau / (1 - tau)
    assert_eq!(m.spec.theta_start, Some(2.0));
    assert!((m.theta.unwrap() - 2.0).abs() < 1e-9);

    let out = tmp.path().join("frank");
    let o = selgam(&["fit", "--data", path(&data), "--model", path(&model), "--copula", "frank", "--margin", "gamma", "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = FittedModel::from_json(&read(&out.join("model.json"))).unwrap();
    assert_eq!(m.spec.copula, selgam::data::Dependence::Frank);
}

#[test]
fn output_directory_defaults_to_the_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_selgam"))
        .args(["simulate", "--study", "logged", "--n", "50", "--seed", "4"])
        .env("SELGAM_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let d = Dataset::read_csv(tmp.path().join("logged_n50_seed4.csv")).unwrap();
    assert_eq!(d.n(), 50);
}

#[test]
fn mc_with_one_replication_reports_null_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let o = selgam(&["mc", "--study", "logged", "--copula", "clayton", "--tau", "0.7", "--n", "300", "--reps", "1", "--out-dir", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("mc_logged.json"))).unwrap();
    let params = v[0]["estimators"][0]["params"].as_array().unwrap();
    assert!(params.iter().all(|p| p["sd"].is_null()));
    let csv = read(&tmp.path().join("mc_logged.csv"));
    assert!(csv.starts_with(selgam::simulate::CSV_HEADER));
    // Table-3 layout: both estimators with beta0, beta1, beta2 and tau
    for est in ["g", "l"] {
        for q in ["beta0", "beta1", "beta2", "tau"] {
            assert!(csv.lines().any(|l| l.contains(&format!(",{est},{q},"))), "{est} {q}");
        }
    }
}

#[test]
fn report_groups_studies_and_flags_reference_values() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = selgam(&["mc", "--study", "consistency", "--n", "500", "--reps", "3", "--out-dir", path(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = selgam(&["mc", "--study", "logged", "--n", "300", "--reps", "2", "--out-dir", path(&b)]);
    assert_eq!(o.status.code(), Some(0));
    let r = tmp.path().join("r");
    let o = selgam(&["report", path(&a.join("mc_consistency.json")), path(&b.join("mc_logged.json")), "--out-dir", path(&r)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let c = text.find("== consistency study ==").unwrap();
    let l = text.find("== logged study ==").unwrap();
    assert!(c < l);
    assert!(text.lines().any(|x| (x.starts_with("PASS") || x.starts_with("FAIL")) && x.contains("gassm beta4 sd reference 0.0778")));
    let checks = read(&r.join("reference_checks.csv"));
    assert!(checks.lines().any(|x| x.starts_with("consistency,500,gumbel,") && x.contains(",gassm,beta4,sd,0.0778,0.3,")));
}
