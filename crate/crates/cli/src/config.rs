use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use regime_switch::dataio::{AlignConfig, FcdSchema};
use regime_switch::em::EmConfig;
use regime_switch::gibbs::GibbsConfig;
use regime_switch::model::ModelSpec;
use regime_switch::select::Criterion;
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, EmArgs, IngestFormat, Method, SpecArgs};
use crate::exit::InputError;

pub const SEED_ENV: &str = "REGIME_SWITCH_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub series: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub compare: Vec<PathBuf>,
    pub fcd: Option<PathBuf>,
    pub leader: Option<PathBuf>,
    pub follower: Option<PathBuf>,
}

impl Inputs {
    pub fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = [&self.series, &self.model, &self.fcd, &self.leader, &self.follower]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect();
        v.extend(self.compare.iter().map(PathBuf::as_path));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub lags: usize,
    pub regimes: usize,
    pub switch_intercept: bool,
    pub switch_coeffs: bool,
    pub switch_cov: bool,
    pub diagonal_var: bool,
    /// Car-following regression of v on lagged (a, dv, h).
    pub regression: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            lags: 1,
            regimes: 2,
            switch_intercept: true,
            switch_coeffs: true,
            switch_cov: true,
            diagonal_var: false,
            regression: false,
        }
    }
}

impl ModelSection {
    pub fn spec(&self, n_channels: usize) -> ModelSpec {
        let base = if self.regression {
            ModelSpec::car_following_regression(self.regimes)
        } else {
            ModelSpec::new(n_channels, self.regimes, self.lags)
        };
        let mut spec = base.with_shape(self.regimes, self.lags);
        spec.switch_intercept = self.switch_intercept;
        spec.switch_coeffs = self.switch_coeffs;
        spec.switch_cov = self.switch_cov;
        spec.diagonal_var = self.diagonal_var;
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub format: IngestFormat,
    pub fcd: FcdSchema,
    pub smartphone: AlignConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub length: usize,
    pub burn_in: usize,
    pub dt: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { length: 1000, burn_in: regime_switch::simulate::DEFAULT_BURN_IN, dt: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub steps: usize,
    pub holdout: bool,
    pub emit_plot_data: bool,
    pub exact_paths: bool,
    pub coverage: Option<f64>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { steps: 9, holdout: false, emit_plot_data: false, exact_paths: false, coverage: Some(0.95) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub lags: String,
    pub regimes: String,
    pub criterion: Criterion,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self { lags: "1..5".into(), regimes: "2..6".into(), criterion: Criterion::Bic }
    }
}

/// Fully resolved settings of one run; also the on-disk TOML layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: Inputs,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub verbosity: u8,
    pub method: Method,
    pub model: ModelSection,
    pub em: EmConfig,
    pub gibbs: GibbsConfig,
    pub ingest: IngestSection,
    pub simulate: SimulateSection,
    pub forecast: ForecastSection,
    pub select: SelectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            inputs: Inputs::default(),
            out_dir: PathBuf::from("out"),
            seed: None,
            jobs: None,
            verbosity: 0,
            method: Method::Em,
            model: ModelSection::default(),
            em: EmConfig::default(),
            gibbs: GibbsConfig::default(),
            ingest: IngestSection::default(),
            simulate: SimulateSection::default(),
            forecast: ForecastSection::default(),
            select: SelectSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Builds the configuration of a run: file values first, then flags.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = Some(s);
        }
        if cfg.seed.is_none() {
            if let Ok(raw) = std::env::var(SEED_ENV) {
                let s = raw
                    .trim()
                    .parse()
                    .map_err(|_| InputError(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
                cfg.seed = Some(s);
            }
        }
        cfg.seed = Some(cfg.seed());
        cfg.em.seed = cfg.seed();
        cfg.gibbs.seed = cfg.seed();
        if let Some(j) = cli.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(o) = &cli.out {
            cfg.out_dir = o.clone();
        }
        cfg.verbosity = cfg.verbosity.max(cli.verbose);
        cfg.apply(&cli.command)?;
        Ok(cfg)
    }

    fn apply(&mut self, command: &Command) -> Result<()> {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        match command {
            Command::Ingest(a) => {
                self.subcommand = "ingest".into();
                set(&mut self.inputs.fcd, &a.input);
                set(&mut self.inputs.leader, &a.leader);
                set(&mut self.inputs.follower, &a.follower);
                if let Some(f) = a.format {
                    self.ingest.format = f;
                }
                if let Some(r) = a.rate_hz {
                    self.ingest.smartphone.rate_hz = r;
                }
            }
            Command::Simulate(a) => {
                self.subcommand = "simulate".into();
                set(&mut self.inputs.model, &a.model);
                if let Some(v) = a.length {
                    self.simulate.length = v;
                }
                if let Some(v) = a.burn_in {
                    self.simulate.burn_in = v;
                }
                if let Some(v) = a.dt {
                    self.simulate.dt = v;
                }
            }
            Command::Fit(a) => {
                self.subcommand = "fit".into();
                set(&mut self.inputs.series, &a.input);
                if let Some(m) = a.method {
                    self.method = m;
                }
                self.apply_spec(&a.spec);
                self.apply_em(&a.em);
                let g = &mut self.gibbs;
                for (slot, v) in [(&mut g.n_samples, a.samples), (&mut g.burn_in, a.burn_in), (&mut g.thin, a.thin), (&mut g.n_chains, a.chains)] {
                    if let Some(v) = v {
                        *slot = v;
                    }
                }
            }
            Command::Classify(a) | Command::Report(a) => {
                self.subcommand = if matches!(command, Command::Classify(_)) { "classify" } else { "report" }.into();
                set(&mut self.inputs.series, &a.input);
                set(&mut self.inputs.model, &a.model);
            }
            Command::Forecast(a) => {
                self.subcommand = "forecast".into();
                set(&mut self.inputs.series, &a.input);
                set(&mut self.inputs.model, &a.model);
                if !a.compare.is_empty() {
                    self.inputs.compare.clone_from(&a.compare);
                }
                let f = &mut self.forecast;
                if let Some(s) = a.steps {
                    f.steps = s;
                }
                f.holdout |= a.holdout;
                f.emit_plot_data |= a.emit_plot_data;
                f.exact_paths |= a.exact;
                if a.coverage.is_some() {
                    f.coverage = a.coverage;
                }
            }
            Command::Select(a) => {
                self.subcommand = "select".into();
                set(&mut self.inputs.series, &a.input);
                if let Some(l) = &a.lags {
                    self.select.lags.clone_from(l);
                }
                if let Some(r) = &a.regimes {
                    self.select.regimes.clone_from(r);
                }
                if let Some(c) = a.criterion {
                    self.select.criterion = c;
                }
                self.model.regression |= a.regression;
                self.apply_em(&a.em);
            }
            Command::Rerun(_) => bail!("rerun takes its configuration from the manifest"),
        }
        Ok(())
    }

    fn apply_spec(&mut self, a: &SpecArgs) {
        if let Some(p) = a.lags {
            self.model.lags = p;
        }
        if let Some(m) = a.regimes {
            self.model.regimes = m;
        }
        self.model.regression |= a.regression;
        self.model.diagonal_var |= a.diagonal;
    }

    fn apply_em(&mut self, a: &EmArgs) {
        if let Some(v) = a.restarts {
            self.em.n_restarts = v;
        }
        if let Some(v) = a.max_iters {
            self.em.max_iters = v;
        }
        if let Some(v) = a.tol {
            self.em.rel_tol = v;
        }
        if let Some(v) = a.init {
            self.em.init_strategy = v.into();
        }
    }
}

/// Parses `a..b` (inclusive), a single value, or a comma list.
pub fn parse_range(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    let values: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().with_context(|| format!("bad range start in `{text}`"))?;
        let b: usize = b.trim_start_matches('=').trim().parse().with_context(|| format!("bad range end in `{text}`"))?;
        if a > b {
            bail!("empty range `{text}`");
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad value `{s}` in `{text}`")))
            .collect::<Result<_>>()?
    };
    if values.is_empty() {
        bail!("empty range `{text}`");
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_range("1..=3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_range("4").unwrap(), vec![4]);
        assert_eq!(parse_range("1, 3,7").unwrap(), vec![1, 3, 7]);
        assert!(parse_range("5..1").is_err());
        assert!(parse_range("x").is_err());
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("lagz = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[em]\nrestarts = 3").is_err());
    }
}
