use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::{info, warn};
use regime_switch::dataio::{
    default_channel_names, ingest_fcd_csv, ingest_smartphone_pair, ObservationSeries, CAR_FOLLOWING_CHANNELS,
    CAR_FOLLOWING_UNITS,
};
use regime_switch::em::{fit_em, FitResult};
use regime_switch::export::{csv_text, fmt_g17, fmt_g4};
use regime_switch::forecast::{compare_models, evaluate_mse, forecast_with, ForecastOptions, MseRow, MseTable};
use regime_switch::gibbs::fit_gibbs;
use regime_switch::inference::{classify, infer, probabilities_csv, regime_report, RegimeReport};
use regime_switch::model::{Model, ModelDocument};
use regime_switch::select::grid_search;
use regime_switch::simulate::{simulate, spectral_check};

use crate::args::{IngestFormat, Method};
use crate::config::{parse_range, RunConfig};
use crate::exit::{InputError, NumericalFailure};

/// Files written by a command and whether its estimator converged.
pub struct Outcome {
    pub outputs: Vec<String>,
    pub converged: bool,
    pub note: String,
}

struct Writer<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, names: Vec::new() })
    }

    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn series(&mut self, name: &str, series: &ObservationSeries) -> Result<()> {
        let path = self.dir.join(name);
        let meta = series.write_canonical(&path)?;
        self.names.push(name.to_string());
        self.names.push(meta.file_name().expect("sidecar file name").to_string_lossy().into_owned());
        Ok(())
    }

    fn done(self, converged: bool, note: impl Into<String>) -> Outcome {
        Outcome { outputs: self.names, converged, note: note.into() }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| InputError(format!("missing {what}")).into())
}

fn load_series(cfg: &RunConfig) -> Result<ObservationSeries> {
    let path = required(&cfg.inputs.series, "--input series")?;
    ObservationSeries::read_canonical(path).with_context(|| format!("reading series {}", path.display()))
}

fn load_model(path: &Path) -> Result<(Model, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let doc = ModelDocument::from_json(&text).with_context(|| format!("parsing model {}", path.display()))?;
    let model = doc.to_model().with_context(|| format!("invalid model {}", path.display()))?;
    Ok((model, doc.metadata.channels))
}

fn check_shape(series: &ObservationSeries, model: &Model, channels: &[String]) -> Result<()> {
    if model.spec.n_channels != series.n_channels() {
        return Err(InputError(format!(
            "model has {} channels but the series has {}",
            model.spec.n_channels,
            series.n_channels()
        ))
        .into());
    }
    if !channels.is_empty() && channels != series.channels() {
        warn!("model was fitted on channels {:?}, series has {:?}", channels, series.channels());
    }
    Ok(())
}

fn report_files(w: &mut Writer, report: &RegimeReport) -> Result<()> {
    w.put("report.json", &(report.to_json()? + "\n"))?;
    w.put("report.csv", &report.to_csv())?;
    w.put("report.txt", &report.to_text())
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.subcommand.as_str() {
        "ingest" => ingest(cfg),
        "simulate" => simulate_cmd(cfg),
        "fit" => fit(cfg),
        "classify" => classify_cmd(cfg, false),
        "report" => classify_cmd(cfg, true),
        "forecast" => forecast_cmd(cfg),
        "select" => select(cfg),
        other => Err(InputError(format!("unknown subcommand `{other}`")).into()),
    }
}

fn ingest(cfg: &RunConfig) -> Result<Outcome> {
    let series = match cfg.ingest.format {
        IngestFormat::Fcd => {
            let path = required(&cfg.inputs.fcd, "FCD input file")?;
            ingest_fcd_csv(path, &cfg.ingest.fcd).with_context(|| format!("ingesting {}", path.display()))?
        }
        IngestFormat::Smartphone => {
            let leader = required(&cfg.inputs.leader, "--leader log")?;
            let follower = required(&cfg.inputs.follower, "--follower log")?;
            ingest_smartphone_pair(leader, follower, &cfg.ingest.smartphone).context("aligning phone logs")?
        }
    };
    let mut w = Writer::new(&cfg.out_dir)?;
    w.series("series.csv", &series)?;
    println!("{} rows at {} s, source {}", series.len(), fmt_g4(series.sample_interval()), series.source());
    println!("{:<8}{:>12}{:>12}{:>12}{:>12}", "channel", "mean", "sd", "min", "max");
    for (k, name) in series.channels().iter().enumerate() {
        let col = series.data().column(k);
        let mean = col.mean();
        let n = series.len() as f64;
        let sd = if series.len() > 1 { (col.variance() * n / (n - 1.0)).sqrt() } else { 0.0 };
        println!("{:<8}{:>12}{:>12}{:>12}{:>12}", name, fmt_g4(mean), fmt_g4(sd), fmt_g4(col.min()), fmt_g4(col.max()));
    }
    for warning in series.warnings() {
        warn!("{warning}");
    }
    Ok(w.done(true, ""))
}

fn simulate_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let (model, channels) = load_model(required(&cfg.inputs.model, "--model")?)?;
    let stability = spectral_check(&model);
    for s in stability.iter().filter(|s| !s.stable) {
        warn!("regime {} is explosive (spectral radius {})", s.regime, fmt_g4(s.spectral_radius));
    }
    let sim = simulate(&model, cfg.simulate.length, cfg.seed(), cfg.simulate.burn_in)?;
    let n = model.spec.n_channels;
    let names = if channels.len() == n { channels } else { default_channel_names(n) };
    let units = names
        .iter()
        .map(|c| CAR_FOLLOWING_CHANNELS.iter().position(|x| x == c).map_or(String::new(), |i| CAR_FOLLOWING_UNITS[i].to_string()))
        .collect();
    let dt = cfg.simulate.dt;
    let times = (0..sim.series.len()).map(|i| i as f64 * dt).collect();
    let series = ObservationSeries::new(names, units, sim.series.data().clone(), times, dt)?
        .with_source(format!("simulated (seed {})", cfg.seed()));
    let mut w = Writer::new(&cfg.out_dir)?;
    w.series("series.csv", &series)?;
    w.put("true_states.csv", &sim.true_states_csv())?;
    w.put("stability.json", &(serde_json::to_string_pretty(&stability)? + "\n"))?;
    println!("simulated {} rows from {} regimes", series.len(), model.n_regimes());
    Ok(w.done(true, ""))
}

fn fit(cfg: &RunConfig) -> Result<Outcome> {
    let series = load_series(cfg)?;
    let spec = cfg.model.spec(series.n_channels());
    let mut w = Writer::new(&cfg.out_dir)?;
    let fit: FitResult = match cfg.method {
        Method::Em => {
            let fit = fit_em(&series, &spec, &cfg.em)?;
            if let Some(trace) = &fit.em_trace {
                let rows: Vec<Vec<String>> =
                    trace.log_likelihood.iter().enumerate().map(|(i, ll)| vec![i.to_string(), fmt_g17(*ll)]).collect();
                w.put("em_trace.csv", &csv_text(&["iteration", "loglik"], &rows))?;
            }
            fit
        }
        Method::Gibbs => {
            let (samples, fit) = fit_gibbs(&series, &spec, &cfg.gibbs)?;
            w.put("chain.csv", &samples.chain_csv())?;
            w.put("posterior_summary.json", &(samples.summary_json()? + "\n"))?;
            fit
        }
    };
    w.put("model.json", &fit.document(&series).to_json()?)?;
    w.put("probabilities.csv", &probabilities_csv(&fit.probabilities, &fit.classification, series.timestamps()))?;
    let report = regime_report(&fit.classification, &fit.model.params.transition, series.sample_interval());
    report_files(&mut w, &report)?;
    println!("log-likelihood {}", fmt_g4(fit.log_likelihood()));
    print!("{}", report.to_text());
    for warning in &fit.warnings {
        warn!("{warning}");
    }
    let note = format!("{} fit with {} regimes and {} lags", cfg.method_name(), spec.n_regimes, spec.lags);
    Ok(w.done(fit.converged, note))
}

fn classify_cmd(cfg: &RunConfig, print_report: bool) -> Result<Outcome> {
    let series = load_series(cfg)?;
    let (model, channels) = load_model(required(&cfg.inputs.model, "--model")?)?;
    check_shape(&series, &model, &channels)?;
    let probs = infer(&series, &model)?;
    let cls = classify(&probs.smoothed);
    let report = regime_report(&cls, &model.params.transition, series.sample_interval());
    let mut w = Writer::new(&cfg.out_dir)?;
    if print_report {
        report_files(&mut w, &report)?;
        print!("{}", report.to_text());
    } else {
        w.put("probabilities.csv", &probabilities_csv(&probs, &cls, series.timestamps()))?;
        w.put("report.json", &(report.to_json()? + "\n"))?;
        println!("classified {} rows, log-likelihood {}", cls.len(), fmt_g4(probs.log_likelihood));
    }
    Ok(w.done(true, ""))
}

fn model_name(path: &Path, taken: &[String]) -> String {
    let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let mut name = stem.clone();
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{stem}_{k}");
        k += 1;
    }
    name
}

fn print_mse(table: &MseTable) {
    print!("{:<16}", "model");
    for c in &table.channels {
        print!("{c:>12}");
    }
    println!();
    for r in &table.rows {
        print!("{:<16}", r.model);
        for x in &r.mse {
            print!("{:>12}", fmt_g4(*x));
        }
        println!();
    }
}

fn forecast_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let series = load_series(cfg)?;
    let model_path = required(&cfg.inputs.model, "--model")?;
    let (model, channels) = load_model(model_path)?;
    check_shape(&series, &model, &channels)?;
    let fc = &cfg.forecast;
    let opts = ForecastOptions { exact_paths: fc.exact_paths, coverage: fc.coverage };
    let steps = fc.steps;
    let holdout = fc.holdout || !cfg.inputs.compare.is_empty();
    let mut w = Writer::new(&cfg.out_dir)?;

    let (forecast, actual) = if holdout {
        let mut models = vec![(model_name(model_path, &[]), model.clone())];
        for p in &cfg.inputs.compare {
            let (m, ch) = load_model(p)?;
            check_shape(&series, &m, &ch)?;
            let taken: Vec<String> = models.iter().map(|x| x.0.clone()).collect();
            models.push((model_name(p, &taken), m));
        }
        let max_lags = models.iter().map(|(_, m)| m.lags()).max().unwrap_or(0);
        if steps == 0 || steps + max_lags >= series.len() {
            return Err(InputError(format!(
                "{steps} steps exceed the available hold-out: the series has {} rows and the models need {max_lags} lags",
                series.len()
            ))
            .into());
        }
        let cut = series.len() - steps;
        let prefix = series.slice(0, cut)?;
        let tail = series.slice(cut, series.len())?;
        let forecast = forecast_with(&prefix, &model, steps, &opts)?;
        let table = if models.len() > 1 {
            compare_models(&series, &models, steps)?
        } else {
            let mse = evaluate_mse(&forecast, &tail)?;
            MseTable { horizon: steps, channels: mse.channels, rows: vec![MseRow { model: models[0].0.clone(), mse: mse.mse }] }
        };
        w.put("mse.csv", &table.to_csv())?;
        w.put("mse.json", &(table.to_json()? + "\n"))?;
        println!("mean squared error over {steps} held-out steps");
        print_mse(&table);
        (forecast, Some(tail))
    } else {
        let forecast = forecast_with(&series, &model, steps, &opts)?;
        println!("forecast {steps} steps from row {}", forecast.origin + 1);
        (forecast, None)
    };
    w.put("forecast.csv", &forecast.to_csv())?;
    w.put("forecast.json", &(forecast.to_json()? + "\n"))?;
    if fc.emit_plot_data {
        w.put("plot_data.csv", &forecast.plot_data_csv(actual.as_ref(), series.sample_interval()))?;
    }
    Ok(w.done(true, ""))
}

fn select(cfg: &RunConfig) -> Result<Outcome> {
    let series = load_series(cfg)?;
    let lags = parse_range(&cfg.select.lags).map_err(|e| InputError(format!("--lags: {e}")))?;
    let regimes = parse_range(&cfg.select.regimes).map_err(|e| InputError(format!("--regimes: {e}")))?;
    let template = cfg.model.spec(series.n_channels());
    let by = cfg.select.criterion;
    let grid = grid_search(&series, &lags, &regimes, &template, &cfg.em)?;

    let mut w = Writer::new(&cfg.out_dir)?;
    w.put("grid.csv", &grid.to_csv())?;
    w.put("likelihood_table.csv", &grid.likelihood_table_csv())?;
    for &m in &regimes {
        w.put(&format!("lag_curve_m{m}.csv"), &grid.lag_curve_csv(m))?;
    }
    w.put("best.json", &(grid.best_json(by)? + "\n"))?;

    let failed = grid.failed();
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(|c| format!("(p={}, M={}): {}", c.lags, c.regimes, c.status)).collect();
        warn!("{} of {} cells failed: {}", failed.len(), grid.cells.len(), list.join("; "));
    }
    for c in &grid.cells {
        for warning in &c.warnings {
            info!("(p={}, M={}): {warning}", c.lags, c.regimes);
        }
    }
    println!("{:>4}{:>4}{:>14}{:>14}{:>14}{:>14}  status", "p", "M", "loglik", "aic", "bic", "hqc");
    for c in &grid.cells {
        let num = |x: Option<f64>| x.map(fmt_g4).unwrap_or_else(|| "-".into());
        println!(
            "{:>4}{:>4}{:>14}{:>14}{:>14}{:>14}  {}",
            c.lags,
            c.regimes,
            num(c.log_likelihood),
            num(c.criteria.map(|x| x.aic)),
            num(c.criteria.map(|x| x.bic)),
            num(c.criteria.map(|x| x.hqc)),
            c.status
        );
    }
    let best = grid
        .best(by)
        .ok_or_else(|| anyhow!(NumericalFailure(format!("all {} grid cells failed", grid.cells.len()))))?;
    println!("best by {}: p = {}, M = {}", by, best.lags, best.regimes);
    let fit = fit_em(&series, &template.with_shape(best.regimes, best.lags), &cfg.em)?;
    w.put("best_model.json", &fit.document(&series).to_json()?)?;
    let note = format!("best by {by}: p = {}, M = {}", best.lags, best.regimes);
    Ok(w.done(fit.converged, note))
}

impl RunConfig {
    fn method_name(&self) -> &'static str {
        match self.method {
            Method::Em => "EM",
            Method::Gibbs => "Gibbs",
        }
    }
}
