//! Python bindings. Matrices cross the boundary as lists of row lists.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spikequant::accounting::{self, CodeScheme, OpsReport};
use spikequant::harness::{self, DemoSpec, Selector, StepConfig, WeightMethod};
use spikequant::kernels::{self, GemmResult};
use spikequant::neuron::{self, Rounding};
use spikequant::quant::{self, PlanGranularity};
use spikequant::saliency::{self, ChannelAxis};
use spikequant::{spkt, Error, Granularity, Rng, Tensor2D};

type Rows = Vec<Vec<f64>>;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(rows: Rows) -> PyResult<Tensor2D> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix must have at least one row"));
    }
    Tensor2D::from_rows(&rows).map_err(err)
}

fn rows_of(t: &Tensor2D) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn rounding(name: &str) -> PyResult<Rounding> {
    match name {
        "floor" => Ok(Rounding::Floor),
        "nearest" => Ok(Rounding::Nearest),
        _ => Err(PyValueError::new_err(format!("unknown rounding {name:?}, expected floor or nearest"))),
    }
}

fn selector(name: &str) -> PyResult<Selector> {
    match name {
        "obspiking" => Ok(Selector::ObSpiking),
        "random" => Ok(Selector::Random),
        _ => Err(PyValueError::new_err(format!("unknown selector {name:?}, expected obspiking or random"))),
    }
}

fn gemm_dict<'py>(py: Python<'py>, g: &GemmResult<f64>) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("values", rows_of(&g.to_tensor().map_err(err)?))?;
    d.set_item("accumulated_events", g.accumulated_events)?;
    Ok(d)
}

fn ops_dict<'py>(py: Python<'py>, o: &OpsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("macs", o.macs)?;
    d.set_item("bits_weight", o.bits_weight)?;
    d.set_item("bits_act", o.bits_act)?;
    d.set_item("ace", o.ace)?;
    d.set_item("ace_ratio_vs_fp16", o.ace_ratio_vs_fp16)?;
    d.set_item("sparse_ace", o.sparse_ace)?;
    d.set_item("sparsity", o.sparsity)?;
    d.set_item("equal_steps", o.equal_steps)?;
    d.set_item("code_bits_total", o.code_bits_total)?;
    d.set_item("accumulated_events", o.accumulated_events)?;
    Ok(d)
}

#[pyclass(name = "SpikeTrain", frozen, module = "spikequant_py")]
struct PySpikeTrain(spikequant::SpikeTrain);

#[pymethods]
impl PySpikeTrain {
    #[getter]
    fn tokens(&self) -> usize {
        self.0.tokens()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    #[getter]
    fn slots(&self) -> usize {
        self.0.slots()
    }

    #[getter]
    fn levels(&self) -> u32 {
        self.0.levels()
    }

    #[getter]
    fn form(&self) -> &'static str {
        self.0.form().name()
    }

    #[getter]
    fn steps(&self) -> Vec<u32> {
        self.0.steps().to_vec()
    }

    #[getter]
    fn scale(&self) -> Vec<f64> {
        self.0.scale().to_vec()
    }

    #[getter]
    fn zero_points(&self) -> Vec<f64> {
        self.0.zero_points().to_vec()
    }

    /// Codes of neuron `(t, c)`, one per slot.
    fn codes(&self, t: usize, c: usize) -> PyResult<Vec<i32>> {
        if t >= self.0.tokens() || c >= self.0.channels() {
            return Err(PyValueError::new_err(format!("neuron ({t}, {c}) out of range")));
        }
        Ok(self.0.neuron_codes(t, c).to_vec())
    }

    /// Per-neuron spike totals, tokens × channels.
    fn totals(&self) -> Vec<Vec<i64>> {
        self.0.totals().chunks(self.0.channels().max(1)).map(<[i64]>::to_vec).collect()
    }

    fn nonzero_spikes(&self) -> u64 {
        self.0.nonzero_spikes()
    }

    fn __repr__(&self) -> String {
        format!(
            "SpikeTrain(form={}, tokens={}, channels={}, slots={}, levels={})",
            self.0.form().name(),
            self.0.tokens(),
            self.0.channels(),
            self.0.slots(),
            self.0.levels()
        )
    }
}

#[pyclass(name = "ChannelPlan", frozen, module = "spikequant_py")]
struct PyChannelPlan(quant::ChannelPlan);

#[pymethods]
impl PyChannelPlan {
    #[new]
    fn new(channels: usize, salient: Vec<usize>, salient_steps: u32, levels: u32) -> PyResult<Self> {
        quant::ChannelPlan::structured(channels, salient, salient_steps, levels).map(Self).map_err(err)
    }

    /// Per-element steps for a `rows × channels` weight matrix.
    #[staticmethod]
    fn unstructured(rows: usize, channels: usize, element_steps: Vec<u32>, levels: u32) -> PyResult<Self> {
        quant::ChannelPlan::unstructured(rows, channels, element_steps, levels).map(Self).map_err(err)
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    #[getter]
    fn salient_steps(&self) -> u32 {
        self.0.salient_steps()
    }

    #[getter]
    fn levels(&self) -> u32 {
        self.0.levels()
    }

    #[getter]
    fn salient(&self) -> Vec<usize> {
        self.0.salient_set().to_vec()
    }

    #[getter]
    fn structured(&self) -> bool {
        matches!(self.0.granularity(), PlanGranularity::Structured)
    }

    fn salient_ratio(&self) -> f64 {
        self.0.salient_ratio()
    }

    fn mean_steps(&self) -> f64 {
        self.0.mean_steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "ChannelPlan(channels={}, salient={}, salient_steps={}, levels={})",
            self.0.channels(),
            self.0.salient_set().len(),
            self.0.salient_steps(),
            self.0.levels()
        )
    }
}

#[pyclass(name = "QuantizedTensor", frozen, module = "spikequant_py")]
struct PyQuantizedTensor(quant::QuantizedTensor);

#[pymethods]
impl PyQuantizedTensor {
    #[getter]
    fn codes(&self) -> Vec<Vec<i32>> {
        let m = self.0.codes();
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.0.bits()
    }

    #[getter]
    fn levels(&self) -> u32 {
        self.0.levels()
    }

    #[getter]
    fn scales(&self) -> Vec<f64> {
        self.0.scales().to_vec()
    }

    #[getter]
    fn zero_points(&self) -> Vec<f64> {
        self.0.zero_points().to_vec()
    }

    fn dequantize(&self) -> Rows {
        rows_of(&self.0.dequantize())
    }
}

#[pyclass(name = "SaliencyReport", frozen, get_all, module = "spikequant_py")]
struct PySaliencyReport {
    per_channel: Vec<f64>,
    rank: Vec<usize>,
    selected: Vec<usize>,
    ratio: f64,
}

impl From<spikequant::SaliencyReport> for PySaliencyReport {
    fn from(r: spikequant::SaliencyReport) -> Self {
        Self { per_channel: r.per_channel, rank: r.rank, selected: r.selected, ratio: r.ratio }
    }
}

#[pyfunction]
#[pyo3(signature = (x, steps, levels, rounding = "floor"))]
fn gif_encode(x: Rows, steps: u32, levels: u32, rounding: &str) -> PyResult<PySpikeTrain> {
    neuron::gif_encode_with(&tensor(x)?, steps, levels, self::rounding(rounding)?).map(PySpikeTrain).map_err(err)
}

#[pyfunction]
fn gif_decode(s: &PySpikeTrain) -> Rows {
    rows_of(&neuron::gif_decode(&s.0))
}

#[pyfunction]
fn expand(s: &PySpikeTrain) -> PyResult<PySpikeTrain> {
    neuron::expand(&s.0).map(PySpikeTrain).map_err(err)
}

#[pyfunction]
fn merge(s: &PySpikeTrain, levels: u32) -> PyResult<PySpikeTrain> {
    neuron::merge(&s.0, levels).map(PySpikeTrain).map_err(err)
}

/// `granularity` is "per-token", "per-channel" or "per-group" (with `group`).
#[pyfunction]
#[pyo3(signature = (x, bits, granularity = "per-token", group = None, rounding = "nearest"))]
fn uniform_quantize(
    x: Rows,
    bits: u32,
    granularity: &str,
    group: Option<usize>,
    rounding: &str,
) -> PyResult<PyQuantizedTensor> {
    let g = match (granularity, group) {
        ("per-token", None) => Granularity::PerToken,
        ("per-channel", None) => Granularity::PerChannel,
        ("per-group", Some(n)) => Granularity::PerGroup(n),
        _ => return Err(PyValueError::new_err("granularity must be per-token, per-channel, or per-group with a group size")),
    };
    quant::uniform_quantize(&tensor(x)?, bits, g, self::rounding(rounding)?).map(PyQuantizedTensor).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, plan, group = None, rounding = "floor"))]
fn mixed_step_quantize(x: Rows, plan: &PyChannelPlan, group: Option<usize>, rounding: &str) -> PyResult<PySpikeTrain> {
    let x = tensor(x)?;
    let group = group.unwrap_or(x.cols());
    quant::mixed_step_quantize_with(&x, &plan.0, group, self::rounding(rounding)?).map(PySpikeTrain).map_err(err)
}

#[pyfunction]
fn mixed_step_dequantize(s: &PySpikeTrain, plan: &PyChannelPlan) -> PyResult<Rows> {
    quant::mixed_step_dequantize(&s.0, &plan.0).map(|t| rows_of(&t)).map_err(err)
}

/// Per-channel `|X ∘ WᵀWX|` scores; `x` is tokens × channels, `w` out × channels.
#[pyfunction]
#[pyo3(signature = (x, w, ratio = 0.1))]
fn activation_saliency(x: Rows, w: Rows, ratio: f64) -> PyResult<PySaliencyReport> {
    let s = saliency::activation_saliency(&tensor(x)?.transpose(), &tensor(w)?).map_err(err)?;
    let scores = saliency::aggregate_per_channel(&s, ChannelAxis::Rows);
    saliency::select_salient(&scores, ratio).map(Into::into).map_err(err)
}

/// Per-input-channel `W² / ([H⁻¹]_jj)²` scores with `H = 2XXᵀ + λI`.
#[pyfunction]
#[pyo3(signature = (w, x, ratio = 0.1, damping = 0.01))]
fn weight_saliency(w: Rows, x: Rows, ratio: f64, damping: f64) -> PyResult<PySaliencyReport> {
    let h = saliency::hessian(&tensor(x)?.transpose(), damping).map_err(err)?;
    let s = saliency::weight_saliency(&tensor(w)?, &h).map_err(err)?;
    let scores = saliency::aggregate_per_channel(&s, ChannelAxis::Cols);
    saliency::select_salient(&scores, ratio).map(Into::into).map_err(err)
}

#[pyfunction]
fn select_salient(scores: Vec<f64>, ratio: f64) -> PyResult<PySaliencyReport> {
    saliency::select_salient(&scores, ratio).map(Into::into).map_err(err)
}

#[pyfunction]
fn random_plan(channels: usize, ratio: f64, seed: u64) -> PyResult<PySaliencyReport> {
    saliency::random_plan(channels, ratio, &mut Rng::new(seed)).map(Into::into).map_err(err)
}

/// Bit-serial `X Ŵᵀ` for a merged mixed-step train; returns out × tokens.
#[pyfunction]
fn mixed_step_matmul<'py>(
    py: Python<'py>,
    x: &PySpikeTrain,
    w: &PyQuantizedTensor,
    plan: &PyChannelPlan,
) -> PyResult<Bound<'py, PyDict>> {
    let g = kernels::mixed_step_gemm(&x.0, &w.0, &plan.0).map_err(err)?;
    gemm_dict(py, &g)
}

/// Event-driven `W Xᵀ` for an expanded train; returns out × tokens.
#[pyfunction]
fn event_driven_matmul<'py>(py: Python<'py>, x: &PySpikeTrain, w: Rows) -> PyResult<Bound<'py, PyDict>> {
    let g = kernels::event_driven_gemm(&x.0, &tensor(w)?).map_err(err)?;
    gemm_dict(py, &g)
}

#[pyfunction]
#[pyo3(signature = (bits_weight, bits_act, fp_bits = 16.0))]
fn ace_ratio(bits_weight: f64, bits_act: f64, fp_bits: f64) -> f64 {
    accounting::ace_ratio(bits_weight, bits_act, fp_bits)
}

/// `scheme` is "if", "gif", "quant" or "mixed".
#[pyfunction]
#[pyo3(signature = (scheme, t, l, ratio = 0.0))]
fn code_length(scheme: &str, t: u32, l: u32, ratio: f64) -> PyResult<f64> {
    let s = match scheme {
        "if" => CodeScheme::If,
        "gif" => CodeScheme::Gif,
        "quant" => CodeScheme::Quant,
        "mixed" => CodeScheme::Mixed,
        _ => return Err(PyValueError::new_err(format!("unknown scheme {scheme:?}"))),
    };
    accounting::code_length(s, t, l, ratio).map_err(err)
}

#[pyfunction]
fn equal_steps(fractions: Vec<f64>, steps: Vec<u32>) -> PyResult<f64> {
    accounting::equal_steps(&fractions, &steps).map_err(err)
}

/// Mixed-step activations with RTN weights; `x` is tokens × channels.
#[pyfunction]
#[pyo3(signature = (w, x, ratio, t_prime, levels, selector = "obspiking", seed = 0, weight_bits = None))]
#[allow(clippy::too_many_arguments)]
fn run_activation_pipeline<'py>(
    py: Python<'py>,
    w: Rows,
    x: Rows,
    ratio: f64,
    t_prime: u32,
    levels: u32,
    selector: &str,
    seed: u64,
    weight_bits: Option<u32>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = StepConfig::new(ratio, t_prime, levels, self::selector(selector)?, seed);
    let r = harness::run_activation_pipeline(&tensor(w)?, &tensor(x)?, &cfg, weight_bits).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("layerwise_error", r.layerwise_error)?;
    d.set_item("ops", ops_dict(py, &r.ops)?)?;
    d.set_item("salient", r.plan.salient_set().to_vec())?;
    Ok(d)
}

/// Paired OBSpiking vs Random-Spike errors for `seeds` seeds on synthetic data.
#[pyfunction]
#[pyo3(signature = (seeds, tokens = None, channels = None, out_features = None, gptq = false))]
fn run_demo<'py>(
    py: Python<'py>,
    seeds: usize,
    tokens: Option<usize>,
    channels: Option<usize>,
    out_features: Option<usize>,
    gptq: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = DemoSpec::default();
    spec.synthetic.tokens = tokens.unwrap_or(spec.synthetic.tokens);
    spec.synthetic.channels = channels.unwrap_or(spec.synthetic.channels);
    spec.out_features = out_features.unwrap_or(spec.out_features);
    if gptq {
        spec.weight_method = WeightMethod::Gptq;
    }
    let rows = py.detach(|| harness::run_demo(&spec, seeds)).map_err(err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("seed", r.seed)?;
            d.set_item("act_obspiking", r.act_obspiking)?;
            d.set_item("act_random", r.act_random)?;
            d.set_item("weight_obspiking", r.weight_obspiking)?;
            d.set_item("weight_random", r.weight_random)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn read_tensor(path: std::path::PathBuf) -> PyResult<Rows> {
    spkt::tensor_read(path).map(|t| rows_of(&t)).map_err(err)
}

#[pyfunction]
fn write_tensor(x: Rows, path: std::path::PathBuf) -> PyResult<()> {
    spkt::tensor_write(&tensor(x)?, path).map_err(err)
}

#[pymodule]
fn spikequant_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpikeTrain>()?;
    m.add_class::<PyChannelPlan>()?;
    m.add_class::<PyQuantizedTensor>()?;
    m.add_class::<PySaliencyReport>()?;
    m.add_function(wrap_pyfunction!(gif_encode, m)?)?;
    m.add_function(wrap_pyfunction!(gif_decode, m)?)?;
    m.add_function(wrap_pyfunction!(expand, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_step_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_step_dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(activation_saliency, m)?)?;
    m.add_function(wrap_pyfunction!(weight_saliency, m)?)?;
    m.add_function(wrap_pyfunction!(select_salient, m)?)?;
    m.add_function(wrap_pyfunction!(random_plan, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_step_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(event_driven_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(ace_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(code_length, m)?)?;
    m.add_function(wrap_pyfunction!(equal_steps, m)?)?;
    m.add_function(wrap_pyfunction!(run_activation_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_demo, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
