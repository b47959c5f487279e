//! Python bindings: configs, task generation, the model, PHi/KL math, the
//! entropy coder and the pipeline stages.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::Value;

use philab_core::analysis::coder;
use philab_core::cli::config::{self as cfgmod, ExperimentConfig};
use philab_core::cli::pipeline;
use philab_core::model::{Arch, SeqModel};
use philab_core::phi::{kl_elem, PhiMode};
use philab_core::rng::{stream, Purpose};
use philab_core::tasks::{build_sequence_with_pfa, description_bits, sample_pfa, FixedPools, Mode, Task};
use philab_core::train::{load_for_eval, Preset};

create_exception!(philab, PhilabError, PyException);

fn py_err(e: philab_core::Error) -> PyErr {
    PhilabError::new_err(e.to_string())
}

fn enum_from<T: DeserializeOwned>(name: &str, raw: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(raw.to_string())).map_err(|_| PhilabError::new_err(format!("unknown {name} `{raw}`")))
}

fn json_err(e: serde_json::Error) -> PyErr {
    PhilabError::new_err(e.to_string())
}

/// Full experiment configuration. Fields are reached through dotted paths.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// `preset` is "desk" or "paper", `arch` "transformer" or "lstm".
    #[new]
    #[pyo3(signature = (preset = "desk", arch = "transformer"))]
    fn new(preset: &str, arch: &str) -> PyResult<Self> {
        let preset: Preset = enum_from("preset", preset)?;
        let arch: Arch = enum_from("arch", arch)?;
        Ok(PyConfig {
            inner: ExperimentConfig::preset(preset, arch),
        })
    }

    /// The pinned recipe behind `repro-fig <figure>`.
    #[staticmethod]
    #[pyo3(signature = (figure, arch = "transformer", copy = false))]
    fn recipe(figure: u8, arch: &str, copy: bool) -> PyResult<Self> {
        let arch: Arch = enum_from("arch", arch)?;
        Ok(PyConfig {
            inner: cfgmod::recipe(figure, arch, copy).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: Value = serde_json::from_str(text).map_err(json_err)?;
        Ok(PyConfig {
            inner: cfgmod::from_value(v).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Sets a dotted path, e.g. `set("train.lr", "1e-4")`. The value is
    /// parsed as JSON, falling back to a string.
    fn set(&mut self, path: &str, value: &str) -> PyResult<()> {
        let mut v = self.inner.to_value();
        cfgmod::set_path(&mut v, path, cfgmod::parse_value(value)).map_err(py_err)?;
        self.inner = cfgmod::from_value(v).map_err(py_err)?;
        Ok(())
    }

    fn run_id(&self) -> String {
        pipeline::run_id(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Config(run_id={})", pipeline::run_id(&self.inner))
    }
}

/// A generated task sequence.
#[pyclass(name = "TaskSequence", get_all)]
struct PySequence {
    tokens: Vec<u32>,
    task: String,
    spans: Vec<(usize, usize)>,
    complexity_bits: Option<f64>,
}

/// One sequence of `task` drawn from stream `index` of `seed`. Memorized
/// tasks use the config's fixed pools.
#[pyfunction]
#[pyo3(signature = (config, task, seed, index = 0))]
fn generate(config: &PyConfig, task: &str, seed: u64, index: u64) -> PyResult<PySequence> {
    let task: Task = task.parse().map_err(py_err)?;
    let data = &config.inner.data;
    let pools = FixedPools::new(data).map_err(py_err)?;
    let mut rng = stream(seed, Purpose::EvalData, index);
    let g = build_sequence_with_pfa(task, Some(&pools), &mut rng, data, Mode::Eval).map_err(py_err)?;
    let s = g.sequence;
    Ok(PySequence {
        tokens: s.tokens,
        task: s.task.as_str().to_string(),
        spans: s.spans,
        complexity_bits: s.complexity_bits,
    })
}

/// Complexity in bits of a random automaton drawn with the config's ranges,
/// returned with its (states, edges, vocab) counts.
#[pyfunction]
fn sample_automaton(config: &PyConfig, seed: u64) -> PyResult<(usize, usize, usize, f64)> {
    let data = &config.inner.data;
    let mut rng = stream(seed, Purpose::EvalData, 0);
    let pfa = sample_pfa(&mut rng, &data.pfa_ranges()).map_err(py_err)?;
    let bits = pfa.complexity_bits(data.total_vocab).map_err(py_err)?;
    Ok((pfa.num_states, pfa.num_edges(), pfa.vocab_len(), bits))
}

/// Description length in bits of an automaton with `n` states, `m` edges
/// and `v` of `total_vocab` symbols.
#[pyfunction]
fn complexity_bits(n: usize, m: usize, v: usize, total_vocab: usize) -> PyResult<f64> {
    description_bits(n, m, v, total_vocab).map_err(py_err)
}

/// Per-element KL(q || p) of diagonal Gaussians, in nats.
#[pyfunction]
fn gaussian_kl(mq: Vec<f64>, sq: Vec<f64>, mp: Vec<f64>, sp: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = mq.len();
    if sq.len() != n || mp.len() != n || sp.len() != n {
        return Err(PhilabError::new_err("length mismatch"));
    }
    if sq.iter().chain(&sp).any(|&s| !(s > 0.0)) {
        return Err(PhilabError::new_err("standard deviations must be positive"));
    }
    Ok((0..n).map(|i| kl_elem(mq[i], sq[i], mp[i], sp[i])).collect())
}

/// Arithmetic-code `tokens` under per-step distributions; returns
/// (bits written, ideal bits).
#[pyfunction]
fn code_length(probs: Vec<Vec<f64>>, tokens: Vec<u32>) -> PyResult<(u64, f64)> {
    let c = coder::arithmetic_code_length(&probs, &tokens).map_err(py_err)?;
    Ok((c.bits, c.ideal_bits))
}

/// Encode then decode; returns the decoded tokens.
#[pyfunction]
fn code_round_trip(probs: Vec<Vec<f64>>, tokens: Vec<u32>) -> PyResult<Vec<u32>> {
    let enc = coder::encode(&probs, &tokens).map_err(py_err)?;
    coder::decode(&enc, &probs).map_err(py_err)
}

/// Sequence model with a PHi layer and its parameters.
#[pyclass(name = "Model")]
struct PyModel {
    model: SeqModel,
    params: Vec<f32>,
}

#[pymethods]
impl PyModel {
    /// Fresh parameters initialised from `seed`.
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let model = SeqModel::new(config.inner.model.clone()).map_err(py_err)?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let params = model.init_params(&mut rng);
        Ok(PyModel { model, params })
    }

    /// Parameters from a checkpoint written by `train`.
    #[staticmethod]
    fn load(config: &PyConfig, checkpoint: PathBuf) -> PyResult<Self> {
        let model = SeqModel::new(config.inner.model.clone()).map_err(py_err)?;
        let params = load_for_eval(&checkpoint, &model).map_err(py_err)?;
        Ok(PyModel { model, params })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    /// Per-token (nll, phi) for one sequence with posterior-mean latents.
    /// `nll[i]` is the loss of token `i + 1`; `phi[i]` the PHi loss at `i`.
    fn losses(&self, tokens: Vec<u32>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let out = self
            .model
            .evaluate_batch(&self.params, &[tokens.as_slice()], PhiMode::EvalMean, None)
            .map_err(py_err)?;
        let b = out.into_iter().next().ok_or_else(|| PhilabError::new_err("empty batch"))?;
        Ok((b.nll, b.phi))
    }

    /// Next-token logits, one row of `vocab_size` per input position.
    fn logits(&self, tokens: Vec<u32>) -> PyResult<Vec<Vec<f32>>> {
        let l = self.model.logits(&self.params, &tokens, PhiMode::EvalMean, None).map_err(py_err)?;
        Ok(l.chunks(self.model.config.vocab_size).map(<[f32]>::to_vec).collect())
    }
}

/// Writes pools and the evaluation set; returns the number of sequences.
#[pyfunction]
fn gen_data(config: &PyConfig) -> PyResult<usize> {
    Ok(pipeline::gen_data(&config.inner).map_err(py_err)?.len())
}

/// Trains to `train.steps`; returns the per-step objective.
#[pyfunction]
#[pyo3(signature = (config, resume = false))]
fn train(config: &PyConfig, resume: bool) -> PyResult<Vec<f64>> {
    let logs = pipeline::train(&config.inner, resume).map_err(py_err)?;
    Ok(logs.iter().map(|l| l.objective).collect())
}

/// Writes token records; returns how many.
#[pyfunction]
fn evaluate(config: &PyConfig) -> PyResult<usize> {
    Ok(pipeline::eval(&config.inner, None).map_err(py_err)?.len())
}

/// Writes the figure tables; returns `(check name, passed)` pairs.
#[pyfunction]
fn analyze(config: &PyConfig) -> PyResult<Vec<(String, bool)>> {
    let out = pipeline::analyze(&config.inner).map_err(py_err)?;
    Ok(out.checks.into_iter().map(|c| (c.name, c.pass)).collect())
}

#[pymodule]
fn philab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PhilabError", m.py().get_type::<PhilabError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_automaton, m)?)?;
    m.add_function(wrap_pyfunction!(complexity_bits, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kl, m)?)?;
    m.add_function(wrap_pyfunction!(code_length, m)?)?;
    m.add_function(wrap_pyfunction!(code_round_trip, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    Ok(())
}
