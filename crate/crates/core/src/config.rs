//! Run configuration: a flat TOML file, strictly validated, plus the glue
//! that turns a configuration into a finished run and its output files.
//!
//! Every key is optional. Unknown keys are rejected all at once, and the
//! configuration actually used (defaults filled in) is written next to the
//! results so that each output directory reproduces itself.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{selection_metrics, SelectionMetrics};
use crate::arms::{golden_cost, CostModel, CostParams, SuperArm};
use crate::datagen::{generate, Dataset, Setup, SIGNALS};
use crate::engine::{run_offline, run_online, stream_rng, EngineParams, RegretOracle, RunRecord, Stream};
use crate::error::{Result, TvsError};
use crate::feedback::{
    FeedbackRule, ForestMode, ForestParams, ForestRule, Lambda, LassoRule, Mtry, SetDependentBernoulli,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    Bernoulli,
    Forest,
    Lasso,
}

impl fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackKind::Bernoulli => "bernoulli",
            FeedbackKind::Forest => "forest",
            FeedbackKind::Lasso => "lasso",
        })
    }
}

impl FromStr for FeedbackKind {
    type Err = TvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(FeedbackKind::Bernoulli),
            "forest" => Ok(FeedbackKind::Forest),
            "lasso" => Ok(FeedbackKind::Lasso),
            other => Err(TvsError::Config(format!(
                "feedback must be bernoulli, forest or lasso, got '{other}'"
            ))),
        }
    }
}

/// All run settings. See [`KEYS`] for the accepted key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub horizon: usize,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<f64>>,
    pub a0: f64,
    pub b0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_star: Option<usize>,
    pub stop_window: usize,
    pub early_stop: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_iteration_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub rounds: usize,

    pub feedback: FeedbackKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub num_signals: usize,
    pub signal_theta: f64,
    pub noise_theta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identifiable_alpha: Option<f64>,
    pub coupling: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    pub setup: Setup,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub correlated: bool,

    pub forest_trees: usize,
    pub forest_max_depth: usize,
    pub forest_min_leaf: usize,
    pub forest_mtry: Mtry,
    pub forest_split_candidates: usize,
    pub forest_bootstrap: bool,
    pub forest_importance_threshold: f64,
    pub forest_min_gain: f64,
    pub forest_split_significance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forest_mode: Option<ForestMode>,

    pub lasso_lambda: Lambda,
    pub lasso_bootstrap: bool,

    pub write_trajectory: bool,
}

/// Every key the configuration file may contain.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "horizon",
    "cost",
    "costs",
    "a0",
    "b0",
    "q_star",
    "stop_window",
    "early_stop",
    "first_iteration_cap",
    "batch_size",
    "rounds",
    "feedback",
    "p",
    "num_signals",
    "signal_theta",
    "noise_theta",
    "theta",
    "identifiable_alpha",
    "coupling",
    "instance_seed",
    "data_path",
    "setup",
    "n",
    "sigma2",
    "correlated",
    "forest_trees",
    "forest_max_depth",
    "forest_min_leaf",
    "forest_mtry",
    "forest_split_candidates",
    "forest_bootstrap",
    "forest_importance_threshold",
    "forest_min_gain",
    "forest_split_significance",
    "forest_mode",
    "lasso_lambda",
    "lasso_bootstrap",
    "write_trajectory",
];

impl Default for RunConfig {
    fn default() -> Self {
        let forest = ForestParams::default();
        RunConfig {
            mode: Mode::Offline,
            seed: 0,
            horizon: 1000,
            cost: golden_cost(),
            costs: None,
            a0: 1.0,
            b0: 1.0,
            q_star: None,
            stop_window: 100,
            early_stop: true,
            first_iteration_cap: None,
            batch_size: None,
            rounds: 1,
            feedback: FeedbackKind::Forest,
            p: None,
            num_signals: SIGNALS,
            signal_theta: 0.7,
            noise_theta: 0.3,
            theta: None,
            identifiable_alpha: None,
            coupling: 0.05,
            instance_seed: None,
            data_path: None,
            setup: Setup::Friedman,
            n: 300,
            sigma2: None,
            correlated: false,
            forest_trees: forest.num_trees,
            forest_max_depth: forest.max_depth,
            forest_min_leaf: forest.min_leaf,
            forest_mtry: forest.mtry,
            forest_split_candidates: forest.split_candidates,
            forest_bootstrap: forest.bootstrap,
            forest_importance_threshold: forest.importance_threshold,
            forest_min_gain: forest.min_gain,
            forest_split_significance: forest.split_significance,
            forest_mode: None,
            lasso_lambda: Lambda::Auto,
            lasso_bootstrap: true,
            write_trajectory: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| TvsError::Parse {
            path: origin.to_path_buf(),
            msg: e.message().to_string(),
        })?;
        let unknown: Vec<&str> = table
            .keys()
            .map(String::as_str)
            .filter(|k| !KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(TvsError::Config(format!(
                "unknown keys in {}: {}",
                origin.display(),
                unknown.join(", ")
            )));
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| TvsError::Parse {
            path: origin.to_path_buf(),
            msg: e.message().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TvsError::io(path, e))?;
        RunConfig::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            num_trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            min_leaf: self.forest_min_leaf,
            mtry: self.forest_mtry,
            split_candidates: self.forest_split_candidates,
            bootstrap: self.forest_bootstrap,
            importance_threshold: self.forest_importance_threshold,
            min_gain: self.forest_min_gain,
            split_significance: self.forest_split_significance,
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        match &self.costs {
            Some(v) => Ok(CostModel::PerArm(
                v.iter().map(|&c| CostParams::new(c)).collect::<Result<_>>()?,
            )),
            None => Ok(CostModel::Shared(CostParams::new(self.cost)?)),
        }
    }

    pub fn engine_params(&self) -> Result<EngineParams> {
        Ok(EngineParams {
            horizon: self.horizon,
            costs: self.cost_model()?,
            a0: self.a0,
            b0: self.b0,
            q_star: self.q_star,
            stop_window: self.stop_window,
            early_stop: self.early_stop,
            first_iteration_cap: self.first_iteration_cap,
            seed: self.seed,
        })
    }

    fn needs_data(&self) -> bool {
        self.feedback != FeedbackKind::Bernoulli || self.mode == Mode::Online
    }

    /// Checks cross-field consistency and fills in data-dependent defaults
    /// (`p`, `sigma2`, `forest_mode`, `batch_size`).
    pub fn resolve(&self, data: Option<&Dataset>) -> Result<RunConfig> {
        let mut cfg = self.clone();
        if cfg.stop_window == 0 {
            return Err(TvsError::Config("stop_window must be at least 1".into()));
        }
        if cfg.rounds == 0 {
            return Err(TvsError::Config("rounds must be at least 1".into()));
        }
        if cfg.sigma2.is_none() && cfg.data_path.is_none() && cfg.needs_data() {
            cfg.sigma2 = Some(cfg.setup.default_sigma2());
        }
        if let Some(d) = data {
            cfg.n = d.n();
            cfg.setup = d.setup();
            cfg.sigma2 = Some(d.sigma2());
            match cfg.p {
                Some(p) if p != d.p() => {
                    return Err(TvsError::Config(format!(
                        "p = {p} but the dataset has {} columns",
                        d.p()
                    )))
                }
                _ => cfg.p = Some(d.p()),
            }
        }
        if let Some(theta) = &cfg.theta {
            match cfg.p {
                Some(p) if p != theta.len() => {
                    return Err(TvsError::Config(format!(
                        "p = {p} but theta has {} entries",
                        theta.len()
                    )))
                }
                _ => cfg.p = Some(theta.len()),
            }
        }
        let Some(p) = cfg.p else {
            return Err(TvsError::Config("p is required for bernoulli feedback without theta".into()));
        };
        if let Some(c) = &cfg.costs {
            if c.len() != p {
                return Err(TvsError::Config(format!("{} costs given for p = {p}", c.len())));
            }
        }
        if cfg.feedback == FeedbackKind::Forest && cfg.forest_mode.is_none() {
            cfg.forest_mode = Some(match cfg.mode {
                Mode::Offline => ForestMode::Offline,
                Mode::Online => ForestMode::Online,
            });
        }
        if cfg.mode == Mode::Online && cfg.batch_size.is_none() {
            return Err(TvsError::Config("online mode needs batch_size".into()));
        }
        cfg.forest_params().validate()?;
        cfg.cost_model()?;
        Ok(cfg)
    }

    /// The Bernoulli arms this configuration describes.
    pub fn bernoulli_rule(&self, p: usize) -> Result<SetDependentBernoulli> {
        if let Some(theta) = &self.theta {
            return SetDependentBernoulli::independent(theta.clone());
        }
        match self.identifiable_alpha {
            Some(alpha) => {
                let signals = SuperArm::range(self.num_signals.min(p));
                let seed = self.instance_seed.unwrap_or(self.seed);
                SetDependentBernoulli::strongly_identifiable(
                    p,
                    &signals,
                    alpha,
                    self.coupling,
                    &mut stream_rng(seed, Stream::Instance),
                )
            }
            None => SetDependentBernoulli::two_level(p, self.num_signals, self.signal_theta, self.noise_theta),
        }
    }
}

/// The dataset a configuration refers to: loaded from `data_path` or
/// generated from the run seed.
pub fn load_data(cfg: &RunConfig) -> Result<Option<Dataset>> {
    if let Some(path) = &cfg.data_path {
        return Dataset::load(path).map(Some);
    }
    if !cfg.needs_data() {
        return Ok(None);
    }
    let Some(p) = cfg.p else {
        return Err(TvsError::Config("p is required to generate data".into()));
    };
    let sigma2 = cfg.sigma2.unwrap_or_else(|| cfg.setup.default_sigma2());
    generate(cfg.setup, cfg.n, p, sigma2, cfg.correlated, &mut stream_rng(cfg.seed, Stream::Data)).map(Some)
}

/// A finished run with everything needed to write its outputs.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub record: RunRecord,
    pub truth: Option<SuperArm>,
    pub metrics: Option<SelectionMetrics>,
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    seed: u64,
    mode: Mode,
    feedback: FeedbackKind,
    #[serde(flatten)]
    run: crate::engine::RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<&'a SuperArm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<&'a SelectionMetrics>,
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        let file = SummaryFile {
            seed: self.config.seed,
            mode: self.config.mode,
            feedback: self.config.feedback,
            run: self.record.summary(),
            truth: self.truth.as_ref(),
            metrics: self.metrics.as_ref(),
        };
        serde_json::to_string_pretty(&file).expect("summary serialises to JSON")
    }

    /// Writes `summary.json`, `config.used.toml`, `trajectory.csv` (unless
    /// disabled) and `regret.csv` (when regret was tracked) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TvsError::io(dir, e))?;
        let write = |name: &str, text: &str| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| TvsError::io(path, e))
        };
        write("summary.json", &self.summary_json())?;
        write("config.used.toml", &self.config.to_toml())?;
        if self.config.write_trajectory {
            self.record.save_trajectory(&dir.join("trajectory.csv"))?;
        }
        if let Some(ledger) = &self.record.regret {
            let path = dir.join("regret.csv");
            write_regret_curve(&path, &ledger.cumulative)?;
        }
        Ok(())
    }
}

/// `t,reg` with `reg` the cumulative regret after `t` iterations.
pub fn write_regret_curve(path: &Path, cumulative: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["t", "reg"]).map_err(|e| csv_io(path, e))?;
    for (t, r) in cumulative.iter().enumerate() {
        w.write_record([(t + 1).to_string(), r.to_string()])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| TvsError::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> TvsError {
    TvsError::io(path, std::io::Error::other(e.to_string()))
}

/// Resolves, loads data, runs and scores one configuration. `track_regret`
/// requires Bernoulli feedback, whose mean rewards are known.
pub fn execute(cfg: &RunConfig, track_regret: bool) -> Result<RunOutput> {
    let data = load_data(cfg)?;
    let cfg = cfg.resolve(data.as_ref())?;
    let p = cfg.p.expect("resolved config has p");
    let params = cfg.engine_params()?;
    let rule: Box<dyn FeedbackRule> = match cfg.feedback {
        FeedbackKind::Bernoulli => Box::new(cfg.bernoulli_rule(p)?),
        FeedbackKind::Forest => Box::new(ForestRule::new(
            cfg.forest_params(),
            cfg.forest_mode.unwrap_or(ForestMode::Offline),
        )?),
        FeedbackKind::Lasso => Box::new(LassoRule {
            lambda: cfg.lasso_lambda,
            bootstrap: cfg.lasso_bootstrap,
            ..LassoRule::default()
        }),
    };
    let oracle = if track_regret || (cfg.feedback == FeedbackKind::Bernoulli && p <= 20) {
        if cfg.feedback != FeedbackKind::Bernoulli {
            return Err(TvsError::Config(format!(
                "regret needs known mean rewards; {} feedback has none",
                cfg.feedback
            )));
        }
        let independent = cfg.identifiable_alpha.is_none() || cfg.theta.is_some();
        Some(RegretOracle::for_rule(&rule, p, &params.costs, cfg.q_star, independent)?)
    } else {
        None
    };
    let record = match (cfg.mode, data.as_ref()) {
        (Mode::Offline, d) => run_offline(&params, &rule, p, d, oracle.as_ref())?,
        (Mode::Online, Some(d)) => run_online(
            &params,
            &rule,
            d,
            cfg.batch_size.expect("resolved online config has batch_size"),
            cfg.rounds,
            oracle.as_ref(),
        )?,
        (Mode::Online, None) => return Err(TvsError::Config("online mode needs a dataset".into())),
    };
    let truth = match (&data, cfg.feedback) {
        (Some(d), FeedbackKind::Forest | FeedbackKind::Lasso) => Some(d.true_support().clone()),
        (_, FeedbackKind::Bernoulli) => Some(match oracle.as_ref() {
            Some(o) => o.optimal.clone(),
            None => SuperArm::range(cfg.num_signals.min(p)),
        }),
        _ => None,
    };
    let metrics = truth
        .as_ref()
        .map(|t| selection_metrics(record.final_selected(), t, p))
        .transpose()?;
    Ok(RunOutput {
        config: cfg,
        record,
        truth,
        metrics,
    })
}
