//! Python bindings.
//!
//! Exposes the Gaussian preference operations, the run configuration, the
//! simulator world, saved checkpoints and the end-to-end seed runner.
//!
//! ```python
//! import qsalign
//! cfg = qsalign.RunConfig.from_toml("seed = 1")
//! world = qsalign.simulate(cfg)
//! rm = qsalign.RewardModel.load("run/rm_garm.json")
//! mu, sigma = rm.score(world, 0, world.pool(0)[0])
//! ```

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;

use qsalign::clicksim;
use qsalign::evalkit;
use qsalign::fusion;
use qsalign::grpo::{self, Action};
use qsalign::pipeline::{self, artifacts};
use qsalign::probcore;
use qsalign::rmodels;
use qsalign::textrewards::{self, N_COMPONENTS};
use qsalign::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Data(_) | Error::Json(_) | Error::Csv(_) => PyValueError::new_err(e.to_string()),
    }
}

fn action_from(a: Action) -> Option<[usize; 3]> {
    match a {
        Action::Refuse => None,
        Action::Triple(t) => Some(t),
    }
}

/// A Gaussian preference score `N(mu, sigma^2)`.
#[pyclass(frozen, skip_from_py_object, module = "qsalign")]
#[derive(Clone, Copy)]
struct GaussianScore(probcore::GaussianScore);

#[pymethods]
impl GaussianScore {
    #[new]
    fn new(mu: f64, sigma: f64) -> PyResult<Self> {
        probcore::GaussianScore::new(mu, sigma).map(Self).map_err(py_err)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.0.mu()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma()
    }

    fn __repr__(&self) -> String {
        format!("GaussianScore(mu={}, sigma={})", self.0.mu(), self.0.sigma())
    }
}

/// Closed-form probability that `w` is preferred over `l`.
#[pyfunction]
fn pref_prob(w: PyRef<'_, GaussianScore>, l: PyRef<'_, GaussianScore>) -> f64 {
    probcore::pref_prob_closed(&w.0, &l.0).value
}

/// Monte-Carlo estimate of the same probability from `n` seeded draws.
#[pyfunction]
#[pyo3(signature = (w, l, n=100_000, seed=0))]
fn pref_prob_mc(w: PyRef<'_, GaussianScore>, l: PyRef<'_, GaussianScore>, n: u64, seed: u64) -> PyResult<f64> {
    probcore::pref_prob_mc(&w.0, &l.0, n, seed).map(|e| e.value).map_err(py_err)
}

#[pyfunction]
fn bhattacharyya_coeff(a: PyRef<'_, GaussianScore>, b: PyRef<'_, GaussianScore>) -> f64 {
    probcore::bhattacharyya_coeff(&a.0, &b.0)
}

/// Uncertainty lower bound of `w` over `l`.
#[pyfunction]
fn ulb(w: PyRef<'_, GaussianScore>, l: PyRef<'_, GaussianScore>) -> f64 {
    probcore::ulb(&w.0, &l.0)
}

/// Weighted sum of a full reward component vector.
#[pyfunction]
fn fuse(weights: Vec<f64>, components: Vec<f64>) -> PyResult<f64> {
    let c: [f64; N_COMPONENTS] = components
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("expected {N_COMPONENTS} components")))?;
    textrewards::fuse(&weights, &c).map_err(py_err)
}

#[pyfunction]
fn component_names() -> Vec<&'static str> {
    textrewards::COMPONENT_NAMES.to_vec()
}

/// A validated run configuration.
#[pyclass(frozen, skip_from_py_object, module = "qsalign")]
#[derive(Clone)]
struct RunConfig(pipeline::RunConfig);

#[pymethods]
impl RunConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let c = pipeline::RunConfig::from_toml(text).map_err(py_err)?;
        c.validate().map_err(py_err)?;
        Ok(Self(c))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = pipeline::RunConfig::load(&path).map_err(py_err)?;
        c.validate().map_err(py_err)?;
        Ok(Self(c))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml().map_err(py_err)
    }

    /// Defaults with the given seed.
    #[staticmethod]
    fn defaults(seed: u64) -> Self {
        Self(pipeline::RunConfig::with_seed(seed))
    }

    /// A copy with the seed replaced.
    fn reseed(&self, seed: u64) -> Self {
        Self(pipeline::RunConfig { seed, ..self.0.clone() })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    /// Stable hash of the configuration.
    fn hash(&self) -> String {
        self.0.hash()
    }
}

/// A simulated world: training contexts with their candidate pools and the
/// hidden user model.
#[pyclass(frozen, module = "qsalign")]
struct World(clicksim::World);

impl World {
    fn context(&self, i: usize) -> PyResult<&clicksim::Context> {
        self.0
            .contexts
            .contexts
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("context {i} out of range")))
    }
}

#[pymethods]
impl World {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        artifacts::load_world(&path).map(Self).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.contexts.len()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn prior_query(&self, i: usize) -> PyResult<String> {
        Ok(self.context(i)?.prior_query.clone())
    }

    fn is_unsafe(&self, i: usize) -> PyResult<bool> {
        Ok(self.context(i)?.is_unsafe)
    }

    /// Candidate texts of context `i`.
    fn pool(&self, i: usize) -> PyResult<Vec<String>> {
        self.context(i)?;
        Ok(self.0.contexts.pools[i].iter().map(|s| s.text.clone()).collect())
    }

    /// Hidden utility of candidate `j` in context `i`.
    fn utility(&self, i: usize, j: usize) -> PyResult<f64> {
        let ctx = self.context(i)?;
        let s = self.0.contexts.pools[i]
            .get(j)
            .ok_or_else(|| PyIndexError::new_err(format!("candidate {j} out of range")))?;
        Ok(self.0.user_model.utility(ctx, s))
    }
}

/// Simulate the world and return it (the click logs are discarded).
#[pyfunction]
fn simulate(cfg: PyRef<'_, RunConfig>) -> PyResult<World> {
    pipeline::simulate(&cfg.0).map(|s| World(s.world)).map_err(py_err)
}

/// A trained reward model.
#[pyclass(frozen, module = "qsalign")]
struct RewardModel(rmodels::RewardModel);

#[pymethods]
impl RewardModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = rmodels::RmCheckpoint::load(&path).map_err(py_err)?;
        ck.model().map(Self).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.as_str()
    }

    /// `(mu, sigma)` for `text` in context `i`; sigma is 0 for heads
    /// without a variance.
    fn score(&self, world: PyRef<'_, World>, i: usize, text: &str) -> PyResult<(f64, f64)> {
        let out = self.0.score_text(world.context(i)?, text).map_err(py_err)?;
        Ok((out.mu, out.sigma))
    }
}

/// The smoothed bigram reference language model.
#[pyclass(frozen, module = "qsalign")]
struct ReferenceModel(textrewards::ReferenceModel);

#[pymethods]
impl ReferenceModel {
    #[staticmethod]
    fn fit(corpus: Vec<String>, k: f64) -> PyResult<Self> {
        textrewards::ReferenceModel::fit(corpus.iter().map(String::as_str), k).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        textrewards::ReferenceModel::load(&path).map(Self).map_err(py_err)
    }

    fn mean_logprob(&self, text: &str) -> PyResult<f64> {
        self.0.mean_logprob(text).map_err(py_err)
    }

    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }
}

#[pyfunction]
fn load_fusion_weights(path: PathBuf) -> PyResult<Vec<f64>> {
    fusion::FusionWeights::load(&path).map(|w| w.w).map_err(py_err)
}

/// A suggestion policy checkpoint.
#[pyclass(frozen, module = "qsalign")]
struct Policy {
    stage: String,
    pool_fingerprint: String,
    policy: grpo::Policy,
}

impl Policy {
    fn inputs(&self, world: &World, i: usize) -> PyResult<grpo::PolicyInputs> {
        world.context(i)?;
        if self.pool_fingerprint != grpo::pool_fingerprint(&world.0.contexts) {
            return Err(PyValueError::new_err("policy was trained on different candidate pools"));
        }
        let set = world.0.contexts.subset("one", i..i + 1);
        Ok(grpo::build_inputs(&set).remove(0))
    }
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = grpo::PolicyCheckpoint::load(&path).map_err(py_err)?;
        Ok(Self { stage: ck.stage, pool_fingerprint: ck.pool_fingerprint, policy: ck.policy })
    }

    #[getter]
    fn stage(&self) -> &str {
        &self.stage
    }

    /// The greedy action for context `i`: `None` to refuse, else three
    /// candidate indices in display order.
    fn greedy(&self, world: PyRef<'_, World>, i: usize) -> PyResult<Option<[usize; 3]>> {
        let inp = self.inputs(&world, i)?;
        Ok(action_from(grpo::greedy_action(&self.policy.scores(&inp))))
    }

    /// Log-probability of an action (`None` for refusal).
    fn logprob(&self, world: PyRef<'_, World>, i: usize, action: Option<[usize; 3]>) -> PyResult<f64> {
        let inp = self.inputs(&world, i)?;
        let a = action.map_or(Action::Refuse, Action::Triple);
        grpo::logprob(&self.policy, &inp, &a).map_err(py_err)
    }

    /// Probability of refusing on context `i`.
    fn refuse_prob(&self, world: PyRef<'_, World>, i: usize) -> PyResult<f64> {
        let inp = self.inputs(&world, i)?;
        grpo::logprob(&self.policy, &inp, &Action::Refuse).map(f64::exp).map_err(py_err)
    }
}

/// Evaluation tables of one or more seeds.
#[pyclass(frozen, module = "qsalign")]
struct Report(evalkit::EvalReport);

#[pymethods]
impl Report {
    fn summary(&self) -> String {
        evalkit::summary(&self.0)
    }

    /// Exact CTR of a policy on the first seed, if it was evaluated.
    fn ctr(&self, policy: &str) -> Option<f64> {
        pipeline::ctr_of(&self.0, policy).map(|r| r.ctr_exact)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| py_err(e.into()))
    }

    /// Write the report tables into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        evalkit::report(&self.0, &dir).map_err(py_err)
    }
}

/// Run every stage for the configuration's seed. With `out`, every
/// artifact is written there as well.
#[pyfunction]
#[pyo3(signature = (cfg, full=false, out=None))]
fn run_seed(py: Python<'_>, cfg: PyRef<'_, RunConfig>, full: bool, out: Option<PathBuf>) -> PyResult<Report> {
    let c = cfg.0.clone();
    let opts = if full { pipeline::RunOptions::full() } else { pipeline::RunOptions::default() };
    py.detach(|| {
        let run = pipeline::run_seed(&c, opts)?;
        if let Some(dir) = out {
            artifacts::write_seed_run(&artifacts::RunDir::new(dir), &c, &run)?;
        }
        Ok(Report(run.report))
    })
    .map_err(py_err)
}

#[pymodule(name = "qsalign")]
pub fn qsalign_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GaussianScore>()?;
    m.add_class::<RunConfig>()?;
    m.add_class::<World>()?;
    m.add_class::<RewardModel>()?;
    m.add_class::<ReferenceModel>()?;
    m.add_class::<Policy>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(pref_prob, m)?)?;
    m.add_function(wrap_pyfunction!(pref_prob_mc, m)?)?;
    m.add_function(wrap_pyfunction!(bhattacharyya_coeff, m)?)?;
    m.add_function(wrap_pyfunction!(ulb, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(component_names, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(load_fusion_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_seed, m)?)?;
    Ok(())
}
