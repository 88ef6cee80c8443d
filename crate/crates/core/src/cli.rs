//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::accounting::{self, OpsReport};
use crate::error::{Error, Result};
use crate::harness::{self, DemoSpec, Selector};
use crate::kernels::{event_driven_gemm, mixed_step_gemm, reference_gemm};
use crate::neuron::{expand, gif_decode, Rounding, SpikeForm, SpikeTrain};
use crate::quant::{bits_for_levels, mixed_step_quantize, uniform_quantize, ChannelPlan, Granularity};
use crate::rng::Rng;
use crate::saliency::{
    activation_saliency, aggregate_per_channel, hessian, random_plan, select_salient, weight_saliency, ChannelAxis,
    Metric,
};
use crate::spkt;
use crate::tensor::Tensor2D;

#[derive(Parser, Debug)]
#[command(name = "spikequant", version, about = "Saliency-aware spiking quantization tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-channel saliency scores as CSV.
    Saliency {
        /// Weights, out × channels.
        #[arg(long)]
        weights: PathBuf,
        /// Activations, tokens × channels.
        #[arg(long)]
        acts: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Hessian damping as a fraction of its mean diagonal (weight mode).
        #[arg(long, default_value_t = harness::DAMPING)]
        damping: f64,
        /// Fraction of channels marked as selected.
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mixed-step (or ternary) encoding driven by a plan file.
    Quantize {
        /// Activations (tokens × channels); calibration data for ternary plans.
        #[arg(long)]
        acts: PathBuf,
        /// Weights (out × channels); scored for OBSpiking, encoded by ternary plans.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        plan: PathBuf,
        /// Int32 codes; the train metadata goes to `<out>.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Spike-train × weight product on a chosen backend.
    Matmul {
        /// Codes written by `quantize` (with the `.json` sidecar beside it).
        #[arg(long)]
        x: PathBuf,
        /// Real weights, out × channels.
        #[arg(long)]
        w: PathBuf,
        #[arg(long, value_enum)]
        backend: Backend,
        /// Weight bits for round-to-nearest quantization of `--w`.
        #[arg(long, default_value_t = 4)]
        weight_bits: u32,
        /// Result, out × tokens.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ops: PathBuf,
    },
    /// Paired OBSpiking vs Random-Spike experiment over seeds.
    Demo {
        /// DemoSpec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON with the column medians.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Worker threads (0 picks the default).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Activation,
    Weight,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Backend {
    Bitserial,
    Event,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Structured,
    Unstructured,
}

/// Plan file for `quantize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub ratio: f64,
    pub t_prime: u32,
    pub levels: u32,
    pub selector: Selector,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "structured")]
    pub granularity: PlanKind,
    /// Fractions of weights on 1, 2 and 4 ternary steps (unstructured plans).
    #[serde(default)]
    pub ternary_mix: Option<[f64; 3]>,
    /// Bits of the other operand in the ACE ratio (default `log2 levels`).
    #[serde(default)]
    pub weight_bits: Option<u32>,
}

fn structured() -> PlanKind {
    PlanKind::Structured
}

/// JSON sidecar describing the codes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    pub form: SpikeForm,
    pub tokens: usize,
    pub channels: usize,
    pub slots: usize,
    pub levels: u32,
    pub group_size: usize,
    pub steps: Vec<u32>,
    pub scale: Vec<f64>,
    pub zero_point: Vec<f64>,
}

impl TrainMeta {
    pub fn of(s: &SpikeTrain) -> Self {
        Self {
            form: s.form(),
            tokens: s.tokens(),
            channels: s.channels(),
            slots: s.slots(),
            levels: s.levels(),
            group_size: s.group_size(),
            steps: s.steps().to_vec(),
            scale: s.scale().to_vec(),
            zero_point: s.zero_points().to_vec(),
        }
    }

    pub fn into_train(self, codes: &crate::tensor::IntMatrix) -> Result<SpikeTrain> {
        if codes.rows() != self.tokens || codes.cols() != self.channels * self.slots {
            return Err(Error::shape(format!(
                "codes are {}x{}, metadata expects {}x{}",
                codes.rows(),
                codes.cols(),
                self.tokens,
                self.channels * self.slots
            )));
        }
        let s = SpikeTrain::from_parts(
            self.tokens,
            self.channels,
            self.levels,
            self.group_size,
            self.form,
            self.steps,
            codes.data().to_vec(),
            self.scale,
            self.zero_point,
        )?;
        if s.slots() != self.slots {
            return Err(Error::invalid(format!("metadata slots {} disagree with steps", self.slots)));
        }
        Ok(s)
    }
}

/// Sidecar path for a codes file: `<out>.json`.
pub fn sidecar_path(codes: &Path) -> PathBuf {
    let mut s = codes.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Parses JSON, reporting failures with the file name and a JSON pointer.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let ptr = json_pointer(e.path());
        let ptr = if ptr.is_empty() { "/".to_string() } else { ptr };
        Error::Json(format!("{}: at {ptr}: {}", path.display(), e.into_inner()))
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Saliency { weights, acts, mode, damping, ratio, out } => {
            cmd_saliency(&weights, &acts, mode, damping, ratio, &out)
        }
        Command::Quantize { acts, weights, plan, out, report } => {
            cmd_quantize(&acts, weights.as_deref(), &plan, &out, &report)
        }
        Command::Matmul { x, w, backend, weight_bits, out, ops } => cmd_matmul(&x, &w, backend, weight_bits, &out, &ops),
        Command::Demo { spec, seeds, out, summary, threads } => {
            cmd_demo(spec.as_deref(), seeds, &out, summary.as_deref(), threads)
        }
    }
}

fn cmd_saliency(weights: &Path, acts: &Path, mode: Mode, damping: f64, ratio: f64, out: &Path) -> Result<()> {
    let w = spkt::tensor_read(weights)?;
    let x = spkt::tensor_read(acts)?;
    let xt = x.transpose();
    let report = match mode {
        Mode::Activation => select_salient(&aggregate_per_channel(&activation_saliency(&xt, &w)?, ChannelAxis::Rows), ratio)?
            .with_metric(Metric::ActivationGradient),
        Mode::Weight => {
            if w.cols() != x.cols() {
                return Err(Error::shape(format!("weights have {} columns, acts {} channels", w.cols(), x.cols())));
            }
            let h = hessian(&xt, damping)?;
            select_salient(&aggregate_per_channel(&weight_saliency(&w, &h)?, ChannelAxis::Cols), ratio)?
                .with_metric(Metric::WeightHessian)
        }
    };
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_bytes(out, &buf)
}

fn cmd_quantize(acts: &Path, weights: Option<&Path>, plan_path: &Path, out: &Path, report: &Path) -> Result<()> {
    let cfg: PlanConfig = parse_json(plan_path, &read_text(plan_path)?)?;
    let x = spkt::tensor_read(acts)?;
    let w = weights.map(spkt::tensor_read).transpose()?;
    let (train, ops) = match (cfg.granularity, cfg.ternary_mix) {
        (PlanKind::Structured, None) => quantize_activations(&x, w.as_ref(), &cfg)?,
        (PlanKind::Unstructured, Some(mix)) => {
            let w = w.ok_or_else(|| Error::invalid("ternary plans encode --weights, which is missing"))?;
            quantize_ternary(&x, &w, mix)?
        }
        (PlanKind::Structured, Some(_)) => {
            return Err(Error::Json(format!("{}: at /ternary_mix: requires \"unstructured\" granularity", plan_path.display())))
        }
        (PlanKind::Unstructured, None) => {
            return Err(Error::Json(format!("{}: at /granularity: unstructured plans need /ternary_mix", plan_path.display())))
        }
    };
    spkt::int_write(&train.codes_matrix(), out)?;
    write_json(&sidecar_path(out), &TrainMeta::of(&train))?;
    write_json(report, &ops)
}

fn quantize_activations(x: &Tensor2D, w: Option<&Tensor2D>, cfg: &PlanConfig) -> Result<(SpikeTrain, OpsReport)> {
    let channels = x.cols();
    let sel = match cfg.selector {
        Selector::Random => random_plan(channels, cfg.ratio, &mut Rng::new(cfg.seed))?,
        Selector::ObSpiking => {
            let xt = x.transpose();
            // Without weights the identity surrogate gives X ∘ X.
            let eye;
            let w = match w {
                Some(w) => w,
                None => {
                    eye = Tensor2D::identity(channels);
                    &eye
                }
            };
            select_salient(&aggregate_per_channel(&activation_saliency(&xt, w)?, ChannelAxis::Rows), cfg.ratio)?
        }
    };
    let plan = ChannelPlan::structured(channels, sel.selected, cfg.t_prime, cfg.levels)?;
    let train = mixed_step_quantize(x, &plan)?;
    let step_bits = (cfg.levels as f64).log2();
    let wbits = cfg.weight_bits.unwrap_or_else(|| bits_for_levels(cfg.levels)) as f64;
    let out = w.map_or(1, |w| w.rows());
    let bits_act = accounting::plan_bits(&plan, step_bits);
    let mut ops = OpsReport::new((out * channels * x.rows()) as u64, wbits, bits_act);
    ops.ace_ratio_vs_fp16 =
        accounting::round_sig(accounting::mixed_ace_ratio(&plan, step_bits, wbits, accounting::FP_BITS), 3);
    let expanded = expand(&train)?;
    ops.sparsity = accounting::spike_density(&expanded)?;
    ops.sparse_ace = accounting::sparse_ace(&expanded, wbits, out)?;
    ops.equal_steps = plan.mean_steps();
    ops.code_bits_total = bits_act * (x.rows() * channels) as f64;
    Ok((train, ops))
}

fn quantize_ternary(x: &Tensor2D, w: &Tensor2D, mix: [f64; 3]) -> Result<(SpikeTrain, OpsReport)> {
    let result = harness::run_ternary_pipeline(w, x, mix)?;
    let crate::quant::PlanGranularity::Unstructured { element_steps, .. } = result.plan.granularity() else {
        unreachable!("ternary plans are unstructured")
    };
    let (out, inp) = w.shape();
    let train = harness::ternary_weight_train(w, element_steps)?;
    debug_assert_eq!((train.tokens(), train.channels()), (out, inp));
    let mut ops = result.ops;
    ops.accumulated_events = None;
    Ok((train, ops))
}

fn cmd_matmul(x_path: &Path, w_path: &Path, backend: Backend, weight_bits: u32, out: &Path, ops_path: &Path) -> Result<()> {
    let codes = spkt::int_read(x_path)?;
    let meta_path = sidecar_path(x_path);
    let meta: TrainMeta = parse_json(&meta_path, &read_text(&meta_path)?)?;
    let x = meta.into_train(&codes)?;
    let w = spkt::tensor_read(w_path)?;
    if w.cols() != x.channels() {
        return Err(Error::shape(format!("weights have {} columns, codes {} channels", w.cols(), x.channels())));
    }
    let ternary = x.form() == SpikeForm::ExpandedTernary;
    // Ternary trains carry weights; the other operand stays in full precision.
    let wq = if ternary { None } else { Some(uniform_quantize(&w, weight_bits, Granularity::PerGroup(harness::WEIGHT_GROUP), Rounding::Nearest)?) };
    let w_hat = wq.as_ref().map_or_else(|| w.clone(), |q| q.dequantize());
    let (y, events) = match backend {
        Backend::Bitserial => {
            let merged = match x.form() {
                SpikeForm::Merged => x.clone(),
                SpikeForm::ExpandedBinary => crate::neuron::merge(&x, x.levels())?,
                SpikeForm::ExpandedTernary => {
                    return Err(Error::Form { expected: "merged or expanded-binary", found: x.form().name() })
                }
            };
            let plan = structured_plan_of(&merged)?;
            let r = mixed_step_gemm(&merged, wq.as_ref().expect("quantized"), &plan)?;
            (r.to_tensor()?, Some(r.accumulated_events))
        }
        Backend::Event => {
            let e = if x.form() == SpikeForm::Merged { expand(&x)? } else { x.clone() };
            let r = event_driven_gemm(&e, &w_hat)?;
            (r.to_tensor()?, Some(r.accumulated_events))
        }
        Backend::Reference => (reference_gemm(&w_hat, &gif_decode(&x).transpose())?, None),
    };
    let expanded = if x.form() == SpikeForm::Merged { expand(&x)? } else { x.clone() };
    let mean_steps = x.steps().iter().map(|&s| s as f64).sum::<f64>() / x.steps().len().max(1) as f64;
    // One binary operation per ternary spike step; log2 L bits per merged step otherwise.
    let bits_x = if ternary { mean_steps } else { (x.levels() as f64).log2() * mean_steps };
    let bits_w = if ternary { accounting::FP_BITS } else { weight_bits as f64 };
    let mut ops = OpsReport::new((w.rows() * x.channels() * x.tokens()) as u64, bits_w, bits_x);
    ops.sparsity = accounting::spike_density(&expanded)?;
    ops.sparse_ace = accounting::sparse_ace(&expanded, bits_w, w.rows())?;
    ops.equal_steps = mean_steps;
    ops.code_bits_total = bits_x * (x.tokens() * x.channels()) as f64;
    ops.accumulated_events = events;
    spkt::tensor_write(&y, out)?;
    write_json(ops_path, &ops)
}

/// Recovers the per-channel plan of a train whose steps depend only on the channel.
fn structured_plan_of(x: &SpikeTrain) -> Result<ChannelPlan> {
    let channels = x.channels();
    let steps: Vec<u32> = (0..channels).map(|c| if x.tokens() > 0 { x.neuron_steps(0, c) } else { 1 }).collect();
    let salient_steps = steps.iter().copied().max().unwrap_or(1);
    for t in 0..x.tokens() {
        for c in 0..channels {
            let s = x.neuron_steps(t, c);
            if s != steps[c] || (s != 1 && s != salient_steps) {
                return Err(Error::invalid("train does not follow a structured two-class plan"));
            }
        }
    }
    let salient = (0..channels).filter(|&c| steps[c] == salient_steps && salient_steps > 1);
    ChannelPlan::structured(channels, salient, salient_steps, x.levels())
}

#[derive(Serialize)]
struct DemoSummary {
    seeds: usize,
    act_obspiking_median: f64,
    act_random_median: f64,
    weight_obspiking_median: f64,
    weight_random_median: f64,
    activation_obspiking_wins: bool,
    weight_obspiking_wins: bool,
}

fn cmd_demo(spec: Option<&Path>, seeds: usize, out: &Path, summary: Option<&Path>, threads: usize) -> Result<()> {
    let spec: DemoSpec = match spec {
        Some(p) => parse_json(p, &read_text(p)?)?,
        None => DemoSpec::default(),
    };
    spec.synthetic.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let rows = pool.install(|| harness::run_demo(&spec, seeds))?;
    let mut buf = Vec::new();
    harness::write_demo_csv(&rows, &mut buf)?;
    write_bytes(out, &buf)?;
    if let Some(p) = summary {
        let m = harness::demo_summary(&rows);
        write_json(
            p,
            &DemoSummary {
                seeds,
                act_obspiking_median: m[0],
                act_random_median: m[1],
                weight_obspiking_median: m[2],
                weight_random_median: m[3],
                activation_obspiking_wins: m[0] < m[1],
                weight_obspiking_wins: m[2] < m[3],
            },
        )?;
    }
    Ok(())
}
