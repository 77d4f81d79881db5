//! Python bindings: cost parameters, the bandit state, oracles, rewards,
//! metrics, bound evaluators, data generation and configured runs.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::ChaCha8Rng;
use tvs::analysis;
use tvs::config::RunConfig;
use tvs::engine::{stream_rng, Stream};
use tvs::{RewardVector, SuperArm, TvsError};

fn to_py(e: TvsError) -> PyErr {
    match e {
        TvsError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn cost_or_golden(cost: Option<f64>) -> PyResult<tvs::CostParams> {
    cost.map_or_else(|| Ok(tvs::CostParams::golden()), |c| tvs::CostParams::new(c).map_err(to_py))
}

fn rewards(subset: &SuperArm, bits: Vec<bool>) -> PyResult<RewardVector> {
    RewardVector::new(subset, bits).map_err(to_py)
}

/// Cost `C` with its selection threshold, gain and penalty.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct CostParams(tvs::CostParams);

#[pymethods]
impl CostParams {
    /// Defaults to the golden cost, whose threshold is exactly one half.
    #[new]
    #[pyo3(signature = (cost = None))]
    fn new(cost: Option<f64>) -> PyResult<Self> {
        cost_or_golden(cost).map(CostParams)
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.0.cost()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold()
    }

    #[getter]
    fn gain(&self) -> f64 {
        self.0.gain()
    }

    #[getter]
    fn penalty(&self) -> f64 {
        self.0.penalty()
    }

    fn contribution(&self, theta: f64) -> f64 {
        self.0.contribution(theta)
    }

    fn __repr__(&self) -> String {
        format!("CostParams(cost={}, threshold={})", self.0.cost(), self.0.threshold())
    }
}

/// Beta posteriors over `p` arms plus a private random stream.
#[pyclass]
struct BanditState {
    state: tvs::BanditState,
    cost: tvs::CostParams,
    rng: ChaCha8Rng,
}

#[pymethods]
impl BanditState {
    #[new]
    #[pyo3(signature = (p, a0 = 1.0, b0 = 1.0, cost = None, seed = 0))]
    fn new(p: usize, a0: f64, b0: f64, cost: Option<f64>, seed: u64) -> PyResult<Self> {
        let cost = cost_or_golden(cost)?;
        let state = tvs::BanditState::new(p, a0, b0, tvs::CostModel::Shared(cost)).map_err(to_py)?;
        Ok(BanditState {
            state,
            cost,
            rng: stream_rng(seed, Stream::Bandit),
        })
    }

    #[getter]
    fn p(&self) -> usize {
        self.state.p()
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.state.iteration()
    }

    /// One Beta draw per arm.
    fn sample_theta(&mut self) -> Vec<f64> {
        self.state.sample_theta(&mut self.rng)
    }

    /// Draws from the posteriors and returns the subset to play.
    #[pyo3(signature = (q_star = None))]
    fn choose(&mut self, q_star: Option<usize>) -> Vec<usize> {
        let theta = self.state.sample_theta(&mut self.rng);
        match q_star {
            Some(q) => tvs::oracle_constrained(&theta, &self.cost, q),
            None => tvs::oracle_unconstrained(&theta, &self.cost),
        }
        .into_vec()
    }

    /// Credits each arm of `subset` with the matching entry of `hits`.
    fn update(&mut self, subset: Vec<usize>, hits: Vec<bool>) -> PyResult<()> {
        let s = SuperArm::checked(subset, self.state.p()).map_err(to_py)?;
        let r = rewards(&s, hits)?;
        self.state.update(&s, &r).map_err(to_py)
    }

    fn inclusion_probabilities(&self) -> Vec<f64> {
        self.state.inclusion_probabilities()
    }

    /// The median-probability model under this state's cost.
    fn selected(&self) -> Vec<usize> {
        tvs::extract_model(&self.state.inclusion_probabilities(), &self.cost).into_vec()
    }

    /// `(a, b)` per arm.
    fn counts(&self) -> Vec<(f64, f64)> {
        self.state.arms().iter().map(|a| (a.a(), a.b())).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (theta, cost = None))]
fn oracle_unconstrained(theta: Vec<f64>, cost: Option<f64>) -> PyResult<Vec<usize>> {
    Ok(tvs::oracle_unconstrained(&theta, &cost_or_golden(cost)?).into_vec())
}

#[pyfunction]
#[pyo3(signature = (theta, q_star, cost = None))]
fn oracle_constrained(theta: Vec<f64>, q_star: usize, cost: Option<f64>) -> PyResult<Vec<usize>> {
    if q_star == 0 {
        return Err(PyValueError::new_err("q_star must be at least 1"));
    }
    Ok(tvs::oracle_constrained(&theta, &cost_or_golden(cost)?, q_star).into_vec())
}

#[pyfunction]
#[pyo3(signature = (subset, hits, cost = None))]
fn global_reward(subset: Vec<usize>, hits: Vec<bool>, cost: Option<f64>) -> PyResult<f64> {
    let s = SuperArm::from_indices(subset);
    tvs::global_reward(&s, &rewards(&s, hits)?, &cost_or_golden(cost)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (subset, theta, cost = None))]
fn expected_reward(subset: Vec<usize>, theta: Vec<f64>, cost: Option<f64>) -> PyResult<f64> {
    let s = SuperArm::checked(subset, theta.len()).map_err(to_py)?;
    Ok(tvs::expected_reward(&s, &theta, &cost_or_golden(cost)?))
}

#[pyfunction]
fn kl_divergence(a: f64, b: f64) -> f64 {
    analysis::kl_divergence(a, b)
}

/// `{"fdp", "power", "hamming", "false_positives", "false_negatives"}`.
#[pyfunction]
fn selection_metrics<'py>(
    py: Python<'py>,
    selected: Vec<usize>,
    truth: Vec<usize>,
    p: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let m = analysis::selection_metrics(&SuperArm::from_indices(selected), &SuperArm::from_indices(truth), p)
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("fdp", m.fdp)?;
    d.set_item("power", m.power)?;
    d.set_item("hamming", m.hamming)?;
    d.set_item("false_positives", m.false_positives)?;
    d.set_item("false_negatives", m.false_negatives)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (alpha, p, q_star, horizon, delta_max, c1 = 1.0, c2 = 1.0))]
fn bound_theorem1(alpha: f64, p: usize, q_star: usize, horizon: f64, delta_max: f64, c1: f64, c2: f64) -> PyResult<f64> {
    analysis::bound_theorem1(alpha, p, q_star, horizon, delta_max, c1, c2).map_err(to_py)
}

/// `gaps` is a list of `(arm, gap)` pairs.
#[pyfunction]
#[pyo3(signature = (gaps, horizon, epsilon, p, const_c = 0.0))]
fn bound_lemma2(gaps: Vec<(usize, f64)>, horizon: f64, epsilon: f64, p: usize, const_c: f64) -> PyResult<f64> {
    analysis::bound_lemma2(&gaps, horizon, epsilon, const_c, p).map_err(to_py)
}

/// `gaps` is a list of `(subset, gap)` pairs.
#[pyfunction]
#[pyo3(signature = (gaps, q_star, epsilon, horizon, delta_max, p, const_c = 0.0, cost = None))]
#[allow(clippy::too_many_arguments)]
fn bound_lemma3(
    gaps: Vec<(Vec<usize>, f64)>,
    q_star: usize,
    epsilon: f64,
    horizon: f64,
    delta_max: f64,
    p: usize,
    const_c: f64,
    cost: Option<f64>,
) -> PyResult<f64> {
    let gaps: Vec<(SuperArm, f64)> = gaps.into_iter().map(|(s, g)| (SuperArm::from_indices(s), g)).collect();
    let params = analysis::Lemma3Params {
        q_star,
        epsilon,
        const_c,
        horizon,
        delta_max,
        p,
    };
    analysis::bound_lemma3(&gaps, &params, &cost_or_golden(cost)?).map_err(to_py)
}

/// Synthetic dataset as `{"x": rows, "y", "support", "sigma2", "setup"}`.
#[pyfunction]
#[pyo3(signature = (setup, n, p, sigma2 = None, correlated = false, seed = 0))]
fn generate<'py>(
    py: Python<'py>,
    setup: &str,
    n: usize,
    p: usize,
    sigma2: Option<f64>,
    correlated: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let setup: tvs::Setup = setup.parse().map_err(to_py)?;
    let sigma2 = sigma2.unwrap_or_else(|| setup.default_sigma2());
    let data = tvs::datagen::generate(setup, n, p, sigma2, correlated, &mut stream_rng(seed, Stream::Data))
        .map_err(to_py)?;
    let rows: Vec<Vec<f64>> = data.x().rows().into_iter().map(|r| r.to_vec()).collect();
    let d = PyDict::new(py);
    d.set_item("x", rows)?;
    d.set_item("y", data.y().to_vec())?;
    d.set_item("support", data.true_support().members().to_vec())?;
    d.set_item("sigma2", data.sigma2())?;
    d.set_item("setup", setup.as_str())?;
    Ok(d)
}

/// Runs a configuration given as TOML text. Returns the run summary as a
/// dict; with `out_dir` the usual output files are written there too.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None, track_regret = false))]
fn run<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: Option<std::path::PathBuf>,
    track_regret: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_toml_str(config, std::path::Path::new("<config>")).map_err(to_py)?;
    let out = py.detach(|| tvs::execute(&cfg, track_regret)).map_err(to_py)?;
    if let Some(dir) = &out_dir {
        out.write(dir).map_err(to_py)?;
    }
    let rec = &out.record;
    let d = PyDict::new(py);
    d.set_item("iterations", rec.iterations())?;
    d.set_item("selected", rec.final_selected().members().to_vec())?;
    d.set_item("pi", rec.final_pi())?;
    d.set_item("converged_at", rec.converged_at)?;
    d.set_item("stopped_early", rec.stopped_early)?;
    d.set_item("total_regret", rec.regret.as_ref().map(|l| l.total()))?;
    d.set_item("truth", out.truth.as_ref().map(|t| t.members().to_vec()))?;
    if let Some(m) = &out.metrics {
        d.set_item("fdp", m.fdp)?;
        d.set_item("power", m.power)?;
        d.set_item("hamming", m.hamming)?;
    }
    d.set_item("config_used", out.config.to_toml())?;
    Ok(d)
}

#[pymodule]
fn tvs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CostParams>()?;
    m.add_class::<BanditState>()?;
    m.add_function(wrap_pyfunction!(oracle_unconstrained, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_constrained, m)?)?;
    m.add_function(wrap_pyfunction!(global_reward, m)?)?;
    m.add_function(wrap_pyfunction!(expected_reward, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(selection_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(bound_theorem1, m)?)?;
    m.add_function(wrap_pyfunction!(bound_lemma2, m)?)?;
    m.add_function(wrap_pyfunction!(bound_lemma3, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("GOLDEN_COST", tvs::golden_cost())?;
    Ok(())
}
