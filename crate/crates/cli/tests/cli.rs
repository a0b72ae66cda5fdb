use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use regime_switch::model::{Model, ModelDocument, ModelMetadata, ModelParams, ModelSpec};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regime-switch"));
    c.env_remove("REGIME_SWITCH_SEED").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_model(dir: &Path, name: &str, model: &Model) -> PathBuf {
    let doc = ModelDocument::from_model(model, ModelMetadata { fit_method: "truth".into(), ..ModelMetadata::default() });
    let path = dir.join(name);
    fs::write(&path, doc.to_json().unwrap()).unwrap();
    path
}

fn two_regime_model() -> Model {
    let spec = ModelSpec::new(2, 2, 1);
    let mut params = ModelParams::baseline(&spec, DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.10, 0.90]));
    params.intercepts[0] = DVector::from_row_slice(&[1.0, 0.5]);
    params.intercepts[1] = DVector::from_row_slice(&[-1.0, -0.5]);
    params.coeffs[0][0] = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
    params.coeffs[1][0] = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.1, 0.4]);
    params.covariances[0] = DMatrix::from_row_slice(2, 2, &[0.10, 0.02, 0.02, 0.10]);
    params.covariances[1] = DMatrix::from_row_slice(2, 2, &[0.40, -0.10, -0.10, 0.40]);
    Model::new(spec, params).unwrap()
}

/// Simulated series in `<tmp>/data`; returns the series csv path.
fn simulated(tmp: &Path, length: usize) -> PathBuf {
    let model = write_model(tmp, "truth.json", &two_regime_model());
    let out = tmp.join("data");
    let o = run(&["simulate", "--model", s(&model), "--length", &length.to_string(), "--seed", "7", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("series.csv")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_with_manifests_and_rerun() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 400);
    let data = series.parent().unwrap();
    for f in ["series.csv", "series.csv.json", "true_states.csv", "stability.json", "manifest.json"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let fit_dir = tmp.path().join("fit");
    let o = run(&["fit", "--input", s(&series), "--lags", "1", "--regimes", "2", "--seed", "3", "--out", s(&fit_dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "probabilities.csv", "report.json", "report.csv", "report.txt", "em_trace.csv"] {
        assert!(fit_dir.join(f).exists(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("duration") && stdout.contains("percent"), "{stdout}");

    let m = manifest(&fit_dir);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config"]["seed"], 3);
    assert_eq!(m["config"]["model"]["regimes"], 2);
    assert_eq!(m["inputs"][0]["path"], s(&series));
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "model.json"));

    let o = run(&["rerun", s(&fit_dir.join("manifest.json")), "--out", s(&tmp.path().join("again"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(fit_dir.join("model.json")).unwrap(), fs::read(tmp.path().join("again/model.json")).unwrap());

    let model = fit_dir.join("model.json");
    let cls = tmp.path().join("classify");
    let o = run(&["classify", "--input", s(&series), "--model", s(&model), "--out", s(&cls)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(cls.join("probabilities.csv")).unwrap(), fs::read(fit_dir.join("probabilities.csv")).unwrap());

    let rep = tmp.path().join("report");
    let o = run(&["report", "--input", s(&series), "--model", s(&model), "--out", s(&rep)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(rep.join("report.csv")).unwrap(), fs::read(fit_dir.join("report.csv")).unwrap());

    let truth = tmp.path().join("truth.json");
    let fc = tmp.path().join("forecast");
    let o = run(&[
        "forecast", "--input", s(&series), "--model", s(&model), "--steps", "9", "--compare", s(&truth), "--emit-plot-data", "--out", s(&fc),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mse = fs::read_to_string(fc.join("mse.csv")).unwrap();
    let mut lines = mse.lines();
    assert_eq!(lines.next().unwrap(), "model,y1,y2");
    assert!(lines.next().unwrap().starts_with("model,"));
    assert!(lines.next().unwrap().starts_with("truth,"));
    let plot = fs::read_to_string(fc.join("plot_data.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "h,lead_time,channel,observed,predicted,lo,hi");
    assert_eq!(plot.lines().count(), 1 + 9 * 2);
    assert!(plot.lines().skip(1).all(|l| !l.split(',').nth(3).unwrap().is_empty()));
}

#[test]
fn single_cell_selection_equals_fit() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let sel = tmp.path().join("select");
    let fit = tmp.path().join("fit");
    let o = run(&["select", "--input", s(&series), "--lags", "1", "--regimes", "2", "--out", s(&sel)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["fit", "--input", s(&series), "--lags", "1", "--regimes", "2", "--out", s(&fit)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(sel.join("best_model.json")).unwrap(), fs::read(fit.join("model.json")).unwrap());
    let grid = fs::read_to_string(sel.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next().unwrap(), "p,M,loglik,aic,bic,hqc,k,status");
    assert!(sel.join("lag_curve_m2.csv").exists());
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(sel.join("best.json")).unwrap()).unwrap();
    assert_eq!(best["best"]["lags"], 1);
}

#[test]
fn grid_selection_layout() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let sel = tmp.path().join("select");
    let o = run(&[
        "select", "--input", s(&series), "--lags", "1..3", "--regimes", "1..2", "--criterion", "hqc", "--restarts", "1", "--out", s(&sel),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(sel.join("likelihood_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "M,p1,p2,p3");
    assert_eq!(table.lines().count(), 3);
    let curve = fs::read_to_string(sel.join("lag_curve_m1.csv")).unwrap();
    assert!(curve.starts_with("p,lag_seconds,"));
    assert_eq!(curve.lines().nth(2).unwrap().split(',').nth(1).unwrap(), "0.20000000000000001");
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(sel.join("best.json")).unwrap()).unwrap();
    assert_eq!(best["criterion"], "hqc");
}

#[test]
fn seeds_are_deterministic_and_env_is_a_fallback() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let fit = |dir: &str, seed: Option<&str>, env: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut c = bin();
        c.args(["fit", "--input", s(&series), "--init", "random", "--restarts", "2", "--out", s(&out)]);
        if let Some(v) = seed {
            c.args(["--seed", v]);
        }
        if let Some(v) = env {
            c.env("REGIME_SWITCH_SEED", v);
        }
        assert_eq!(code(&c.output().unwrap()), 0);
        fs::read(out.join("model.json")).unwrap()
    };
    let a = fit("a", Some("11"), None);
    let b = fit("b", Some("11"), None);
    let c = fit("c", None, Some("11"));
    let d = fit("d", Some("11"), Some("12"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);
    assert!(run(&["fit", "--input", s(&series), "--out", s(&tmp.path().join("e"))]).status.success());
    assert_eq!(manifest(&tmp.path().join("e"))["config"]["seed"], 0);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[model]\nlags = 1\nregimes = 3\n[em]\nn_restarts = 2\n").unwrap();
    let out = tmp.path().join("fit");
    let o = run(&["fit", "--config", s(&cfg), "--input", s(&series), "--regimes", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["config"]["model"]["regimes"], 2);
    assert_eq!(m["config"]["em"]["n_restarts"], 2);
    assert_eq!(m["config"]["seed"], 5);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(doc["spec"]["n_regimes"], 2);

    fs::write(&cfg, "[model]\nlagz = 1\n").unwrap();
    assert_eq!(code(&run(&["fit", "--config", s(&cfg), "--input", s(&series), "--out", s(&out)])), 2);
}

#[test]
fn single_regime_fit_is_ols() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let out = tmp.path().join("fit");
    let o = run(&["fit", "--input", s(&series), "--regimes", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let doc = ModelDocument::from_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let model = doc.to_model().unwrap();
    let data = regime_switch::dataio::ObservationSeries::read_canonical(&series).unwrap();
    let x = regime_switch::model::design_matrix(data.data(), 1);
    let y = data.data().rows(1, data.len() - 1).into_owned();
    let b = ((x.transpose() * &x).try_inverse().unwrap() * x.transpose() * y).transpose();
    assert!((model.params.coef_matrix(0) - b).amax() < 1e-8);
}

#[test]
fn gibbs_writes_chain_and_summary() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 200);
    let out = tmp.path().join("gibbs");
    let o = run(&[
        "fit", "--input", s(&series), "--method", "gibbs", "--samples", "300", "--burn-in", "100", "--chains", "2", "--out", s(&out),
    ]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    let chain = fs::read_to_string(out.join("chain.csv")).unwrap();
    assert!(chain.starts_with("chain,draw,loglik,"));
    assert_eq!(chain.lines().count(), 1 + 2 * 100);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("posterior_summary.json")).unwrap()).unwrap();
    assert!(summary[0]["rhat"].is_number());
    assert_eq!(manifest(&out)["status"], if code(&o) == 0 { "ok" } else { "not_converged" });
}

#[test]
fn non_convergence_exits_3_and_keeps_artifacts() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 300);
    let out = tmp.path().join("fit");
    let o = run(&["fit", "--input", s(&series), "--max-iters", "1", "--restarts", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("model.json").exists());
    assert_eq!(manifest(&out)["status"], "not_converged");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["converged"], false);
}

#[test]
fn explosive_simulation_exits_4() {
    let tmp = TempDir::new().unwrap();
    let spec = ModelSpec::new(1, 1, 1);
    let mut params = ModelParams::baseline(&spec, DMatrix::identity(1, 1));
    params.coeffs[0][0][(0, 0)] = 1.5;
    let model = write_model(tmp.path(), "explosive.json", &Model::new(spec, params).unwrap());
    let o = run(&["simulate", "--model", s(&model), "--length", "5000", "--out", s(&tmp.path().join("sim"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn input_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = s(tmp.path()).to_string();
    assert_eq!(code(&run(&["fit", "--input", "/nonexistent/series.csv", "--out", &out])), 2);
    assert_eq!(code(&run(&["fit", "--out", &out])), 2);
    assert_eq!(code(&run(&["fit", "--bogus"])), 2);

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "time,v,dv,h\n0.0,10,0.1,20\n0.1,abc,0.1,20\n").unwrap();
    let o = run(&["ingest", "--format", "fcd", s(&bad), "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"), "{}", String::from_utf8_lossy(&o.stderr));

    let series = simulated(tmp.path(), 20);
    let model = tmp.path().join("truth.json");
    let o = run(&["forecast", "--input", s(&series), "--model", s(&model), "--steps", "25", "--holdout", "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hold-out"));

    let one = write_model(tmp.path(), "one.json", &regime_switch::model::Model::new(
        ModelSpec::new(3, 1, 0),
        ModelParams::baseline(&ModelSpec::new(3, 1, 0), DMatrix::identity(1, 1)),
    ).unwrap());
    assert_eq!(code(&run(&["classify", "--input", s(&series), "--model", s(&one), "--out", &out])), 2);
    let mut c = bin();
    c.env("REGIME_SWITCH_SEED", "abc").args(["fit", "--input", s(&series), "--out", &out]);
    assert_eq!(code(&c.output().unwrap()), 2);
}

#[test]
fn ingest_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let raw = tmp.path().join("fcd.csv");
    let mut text = String::from("time,v,dv,h\n");
    for i in 0..200 {
        let t = i as f64 * 0.1;
        text.push_str(&format!("{t:.1},{},{},{}\n", 10.0 + (t * 0.3).sin(), 0.2 * (t * 0.5).cos(), 20.0 + t * 0.05));
    }
    fs::write(&raw, text).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = run(&["ingest", "--format", "fcd", s(&raw), "--out", s(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("200 rows"));
    }
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    let header = fs::read_to_string(a.join("series.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,v,a,dv,h");
    let o = run(&["rerun", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    fs::write(&raw, "time,v,dv,h\n0,1,1,1\n").unwrap();
    assert_eq!(code(&run(&["rerun", s(&a)])), 2);
}

#[test]
fn one_step_single_regime_forecast_is_the_var_step() {
    let tmp = TempDir::new().unwrap();
    let series = simulated(tmp.path(), 100);
    let spec = ModelSpec::new(2, 1, 1);
    let mut params = ModelParams::baseline(&spec, DMatrix::identity(1, 1));
    params.intercepts[0] = DVector::from_row_slice(&[0.5, -0.25]);
    params.coeffs[0][0] = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.0, 0.75]);
    let model = Model::new(spec, params).unwrap();
    let path = write_model(tmp.path(), "var.json", &model);
    let out = tmp.path().join("fc");
    let o = run(&["forecast", "--input", s(&series), "--model", s(&path), "--steps", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let data = regime_switch::dataio::ObservationSeries::read_canonical(&series).unwrap();
    let y = &model.params.intercepts[0] + &model.params.coeffs[0][0] * data.row(99);
    let csv = fs::read_to_string(out.join("forecast.csv")).unwrap();
    for (k, line) in csv.lines().skip(1).enumerate() {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(v, y[k]);
    }
}

#[test]
fn smartphone_pair_ingest() {
    let tmp = TempDir::new().unwrap();
    let log = |name: &str, offset_m: f64| {
        let mut text = String::from("timestamp,lat,lon,speed,heading\n");
        for i in 0..40 {
            let t = 1_700_000_000.0 + i as f64;
            // eastward along the equator at 10 m/s
            let lon = (offset_m + 10.0 * i as f64) / 111_194.93;
            text.push_str(&format!("{t},0.0,{lon:.9},10.0,90\n"));
        }
        let path = tmp.path().join(name);
        fs::write(&path, text).unwrap();
        path
    };
    let leader = log("leader.csv", 25.0);
    let follower = log("follower.csv", 0.0);
    let out = tmp.path().join("pair");
    let o = run(&["ingest", "--format", "smartphone", "--leader", s(&leader), "--follower", s(&follower), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = regime_switch::dataio::ObservationSeries::read_canonical(&out.join("series.csv")).unwrap();
    let h = series.channel_index("h").unwrap();
    assert!(series.data().column(h).iter().all(|x| (x - 25.0).abs() < 0.1));
    assert_eq!(manifest(&out)["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(code(&run(&["ingest", "--format", "smartphone", "--leader", s(&leader), "--out", s(&out)])), 2);
}
