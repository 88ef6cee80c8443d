//! Desk-scale experiments on synthetic outlier-heavy data.
//!
//! Activations are Gaussian with a random subset of channels scaled up,
//! which reproduces the outlier-channel structure that makes uniform
//! per-token quantization lossy. Pipelines measure the layerwise error
//! `‖WX - Q(W)Q(X)‖²_F` with `X` laid out channels × tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{self, OpsReport};
use crate::error::{Error, Result};
use crate::kernels::reference_gemm;
use crate::linalg::inverse_upper_cholesky;
use crate::neuron::{self, expand, gif_decode, min_max, ternary_encode, Rounding, SpikeForm, SpikeTrain};
use crate::quant::{bits_for_levels, mixed_step_quantize, mixed_step_quantize_with, uniform_quantize, ChannelPlan, Granularity};
use crate::rng::{rng_normal, Rng};
use crate::saliency::{
    activation_saliency, aggregate_per_channel, hessian, random_plan, select_salient, weight_saliency, ChannelAxis,
    Metric, SaliencyReport,
};
use crate::tensor::Tensor2D;

/// Weight quantization block along the input dimension.
pub const WEIGHT_GROUP: usize = 128;
/// Default Hessian damping as a fraction of its mean diagonal.
pub const DAMPING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub tokens: usize,
    pub channels: usize,
    pub outlier_ratio: f64,
    pub outlier_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { tokens: 512, channels: 256, outlier_ratio: 0.1, outlier_scale: 10.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(Error::invalid(format!("outlier_ratio {} outside [0, 1]", self.outlier_ratio)));
        }
        if !(self.outlier_scale >= 1.0 && self.outlier_scale.is_finite()) {
            return Err(Error::invalid(format!("outlier_scale {} must be finite and >= 1", self.outlier_scale)));
        }
        Ok(())
    }
}

/// Outlier channels of `spec`, ascending; drawn first from the seed's stream.
pub fn outlier_channels(spec: &SyntheticSpec) -> Vec<usize> {
    let mut rng = Rng::new(spec.seed);
    draw_outliers(spec, &mut rng)
}

fn draw_outliers(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<usize> {
    let k = crate::saliency::selected_count(spec.channels, spec.outlier_ratio);
    let mut idx = rng.sample_indices(spec.channels, k);
    idx.sort_unstable();
    idx
}

fn synth_with(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Tensor2D> {
    spec.validate()?;
    let outliers = draw_outliers(spec, rng);
    let base = rng_normal(rng, spec.tokens, spec.channels, 0.0, 1.0);
    let mut scale = vec![1.0; spec.channels];
    for c in outliers {
        scale[c] = spec.outlier_scale;
    }
    Tensor2D::from_fn(spec.tokens, spec.channels, |t, c| base.get(t, c) * scale[c])
}

/// Tokens × channels activations: standard normal, outlier channels scaled.
pub fn synth_activations(spec: &SyntheticSpec) -> Result<Tensor2D> {
    synth_with(spec, &mut Rng::new(spec.seed))
}

/// Out × in weights drawn from `N(0, 1/√in)`.
pub fn synth_weights(rng: &mut Rng, out: usize, inp: usize) -> Tensor2D {
    rng_normal(rng, out, inp, 0.0, 1.0 / (inp.max(1) as f64).sqrt())
}

/// Activations and `out × channels` weights from one seed stream.
pub fn synth_layer(spec: &SyntheticSpec, out: usize) -> Result<(Tensor2D, Tensor2D)> {
    let mut rng = Rng::new(spec.seed);
    let x = synth_with(spec, &mut rng)?;
    let w = synth_weights(&mut rng, out, spec.channels);
    Ok((x, w))
}

/// `‖W X - Wq Xq‖²_F` with `X`, `Xq` channels × tokens.
pub fn layerwise_error(w: &Tensor2D, x: &Tensor2D, wq: &Tensor2D, xq: &Tensor2D) -> Result<f64> {
    if w.shape() != wq.shape() || x.shape() != xq.shape() {
        return Err(Error::shape("quantized operands differ in shape from the originals"));
    }
    let y = reference_gemm(w, x)?;
    let yq = reference_gemm(wq, xq)?;
    Ok(y.sub(&yq)?.frobenius_sq())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    #[serde(rename = "obspiking")]
    ObSpiking,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    Rtn,
    Gptq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub layerwise_error: f64,
    pub ops: OpsReport,
    pub plan: ChannelPlan,
    pub saliency: SaliencyReport,
}

/// Settings shared by the activation and weight pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub ratio: f64,
    pub t_prime: u32,
    pub levels: u32,
    pub selector: Selector,
    /// Seed of the Random-Spike draw.
    pub seed: u64,
}

impl StepConfig {
    pub fn new(ratio: f64, t_prime: u32, levels: u32, selector: Selector, seed: u64) -> Self {
        Self { ratio, t_prime, levels, selector, seed }
    }

    fn select(&self, scores: impl FnOnce() -> Result<(Vec<f64>, Metric)>, channels: usize) -> Result<SaliencyReport> {
        match self.selector {
            Selector::Random => random_plan(channels, self.ratio, &mut Rng::new(self.seed)),
            Selector::ObSpiking => {
                let (s, metric) = scores()?;
                Ok(select_salient(&s, self.ratio)?.with_metric(metric))
            }
        }
    }
}

fn step_bits(levels: u32) -> f64 {
    (levels as f64).log2()
}

/// Mixed-step activations with RTN weights.
///
/// `w` is out × channels and `x` tokens × channels. Salient channels come
/// from `X ∘ WᵀWX` (OBSpiking) or a random draw; weights use `weight_bits`
/// asymmetric round-to-nearest per 128-column group (default `log2 L`).
pub fn run_activation_pipeline(
    w: &Tensor2D,
    x: &Tensor2D,
    cfg: &StepConfig,
    weight_bits: Option<u32>,
) -> Result<PipelineResult> {
    let (tokens, channels) = x.shape();
    if w.cols() != channels {
        return Err(Error::shape(format!("W has {} columns, X has {channels} channels", w.cols())));
    }
    let wbits = weight_bits.unwrap_or_else(|| bits_for_levels(cfg.levels));
    let xt = x.transpose();
    let saliency = cfg.select(
        || Ok((aggregate_per_channel(&activation_saliency(&xt, w)?, ChannelAxis::Rows), Metric::ActivationGradient)),
        channels,
    )?;
    let plan = ChannelPlan::structured(channels, saliency.selected.iter().copied(), cfg.t_prime, cfg.levels)?;
    let spikes = mixed_step_quantize(x, &plan)?;
    let xq = gif_decode(&spikes).transpose();
    let wq = uniform_quantize(w, wbits, Granularity::PerGroup(WEIGHT_GROUP), Rounding::Nearest)?.dequantize();
    let layerwise_error = layerwise_error(w, &xt, &wq, &xq)?;

    let bits_act = accounting::plan_bits(&plan, step_bits(cfg.levels));
    let mut ops = OpsReport::new((w.rows() * channels * tokens) as u64, wbits as f64, bits_act);
    ops.ace_ratio_vs_fp16 =
        accounting::round_sig(accounting::mixed_ace_ratio(&plan, step_bits(cfg.levels), wbits as f64, accounting::FP_BITS), 3);
    let expanded = expand(&spikes)?;
    ops.sparsity = accounting::spike_density(&expanded)?;
    ops.sparse_ace = accounting::sparse_ace(&expanded, wbits as f64, w.rows())?;
    ops.equal_steps = plan.mean_steps();
    ops.code_bits_total = bits_act * (tokens * channels) as f64;
    Ok(PipelineResult { layerwise_error, ops, plan, saliency })
}

/// Quantizes `w` (out × in) with mixed steps per input channel, by
/// round-to-nearest or by greedy column-wise error compensation.
///
/// `x_calib` is tokens × in. Salient input channels come from the
/// aggregated `W² / ([H⁻¹]_jj)²` with `H = 2XXᵀ + λI` (OBSpiking) or a
/// random draw. The error is measured with full-precision activations.
pub fn run_weight_pipeline(
    w: &Tensor2D,
    x_calib: &Tensor2D,
    cfg: &StepConfig,
    method: WeightMethod,
) -> Result<PipelineResult> {
    let (out, inp) = w.shape();
    if x_calib.cols() != inp {
        return Err(Error::shape(format!("W has {inp} columns, calibration data {} channels", x_calib.cols())));
    }
    let xt = x_calib.transpose();
    let h = hessian(&xt, DAMPING)?;
    let saliency = cfg.select(
        || Ok((aggregate_per_channel(&weight_saliency(w, &h)?, ChannelAxis::Cols), Metric::WeightHessian)),
        inp,
    )?;
    let plan = ChannelPlan::structured(inp, saliency.selected.iter().copied(), cfg.t_prime, cfg.levels)?;
    let wq = match method {
        WeightMethod::Rtn => gif_decode(&mixed_step_quantize_with(w, &plan, WEIGHT_GROUP, Rounding::Nearest)?),
        WeightMethod::Gptq => gptq_quantize(w, &h, &plan, WEIGHT_GROUP)?,
    };
    let layerwise_error = layerwise_error(w, &xt, &wq, &xt)?;

    let bits_w = accounting::plan_bits(&plan, step_bits(cfg.levels));
    let mut ops = OpsReport::new((out * inp * x_calib.rows()) as u64, bits_w, accounting::FP_BITS);
    ops.ace_ratio_vs_fp16 = accounting::round_sig(
        accounting::mixed_ace_ratio(&plan, step_bits(cfg.levels), accounting::FP_BITS, accounting::FP_BITS),
        3,
    );
    ops.equal_steps = plan.mean_steps();
    ops.code_bits_total = bits_w * (out * inp) as f64;
    Ok(PipelineResult { layerwise_error, ops, plan, saliency })
}

/// Greedy compensated quantization in natural column order.
///
/// Row parameters (zero point and per-class spike value) are fixed from the
/// partially updated weights at the start of every `group`-column block.
/// After column `i` is rounded, its error divided by `U_ii` is propagated
/// to the later columns through row `i` of `U`, the upper Cholesky factor
/// of `H⁻¹`. Columns with no calibration energy are zeroed.
pub fn gptq_quantize(
    w: &Tensor2D,
    h: &crate::saliency::HessianMatrix,
    plan: &ChannelPlan,
    group: usize,
) -> Result<Tensor2D> {
    let (out, inp) = w.shape();
    if h.dim != inp || plan.channels() != inp {
        return Err(Error::shape("Hessian, plan and weights disagree on the input dimension"));
    }
    if group == 0 {
        return Err(Error::invalid("group size must be positive"));
    }
    let levels = plan.levels();
    let mut hv = h.values.clone();
    let mut work = w.clone();
    for i in 0..inp {
        if hv.get(i, i) - h.damping == 0.0 {
            hv.set(i, i, 1.0);
            for r in 0..out {
                work.set(r, i, 0.0);
            }
        }
    }
    let u = inverse_upper_cholesky(&hv)?;
    let mut q = Tensor2D::zeros(out, inp);
    // per row: (zero, [(steps, delta)])
    let mut params: Vec<(f64, Vec<(u32, f64)>)> = vec![(0.0, Vec::new()); out];
    for i in 0..inp {
        if i % group == 0 {
            let cols = i..(i + group).min(inp);
            params.par_iter_mut().enumerate().for_each(|(r, p)| {
                let row = &work.row(r)[cols.clone()];
                let (zero, _) = min_max(row).expect("nonempty");
                let mut classes: Vec<(u32, f64)> = Vec::new();
                for (k, &v) in row.iter().enumerate() {
                    let s = plan.steps_for(r, cols.start + k);
                    match classes.iter_mut().find(|e| e.0 == s) {
                        Some(e) => e.1 = e.1.max(v),
                        None => classes.push((s, v)),
                    }
                }
                for e in classes.iter_mut() {
                    e.1 = neuron::TokenQuantParams::from_range(zero, e.1 - zero, e.0, levels).step_delta;
                }
                *p = (zero, classes);
            });
        }
        let d = u.get(i, i);
        let mut err = vec![0.0; out];
        for r in 0..out {
            let (zero, classes) = &params[r];
            let s = plan.steps_for(r, i);
            let delta = classes.iter().find(|e| e.0 == s).expect("class").1;
            let v = work.get(r, i);
            let top = (s as i64 * (levels as i64 - 1)) as f64;
            let code = if delta > 0.0 { Rounding::Nearest.apply((v - zero) / delta).clamp(0.0, top) } else { 0.0 };
            let qv = zero + delta * code;
            q.set(r, i, qv);
            err[r] = (v - qv) / d;
        }
        let urow = &u.row(i)[i + 1..];
        for (r, &e) in err.iter().enumerate() {
            if e != 0.0 {
                let row = &mut work.row_mut(r)[i + 1..];
                for (x, &uij) in row.iter_mut().zip(urow) {
                    *x -= e * uij;
                }
            }
        }
    }
    Ok(q)
}

/// Per-element 1/2/4-step ternary weights.
///
/// Elements are ranked by `W² / ([H⁻¹]_jj)²`; the top `mix[2]` fraction
/// gets 4 steps, the next `mix[1]` gets 2 and the rest 1. Each row is
/// encoded per 128-column group with the group's absolute maximum. The
/// report counts one binary operation per ternary spike step against 16-bit
/// activations.
pub fn run_ternary_pipeline(w: &Tensor2D, x_calib: &Tensor2D, mix: [f64; 3]) -> Result<PipelineResult> {
    let (out, inp) = w.shape();
    if x_calib.cols() != inp {
        return Err(Error::shape(format!("W has {inp} columns, calibration data {} channels", x_calib.cols())));
    }
    let steps_set = [1u32, 2, 4];
    let equal = accounting::equal_steps(&mix, &steps_set)?;
    let xt = x_calib.transpose();
    let h = hessian(&xt, DAMPING)?;
    let s = weight_saliency(w, &h)?;
    let n = out * inp;
    let mut order: Vec<usize> = (0..n).collect();
    let sd = s.data();
    order.sort_by(|&a, &b| sd[b].total_cmp(&sd[a]).then(a.cmp(&b)));
    let n4 = crate::saliency::selected_count(n, mix[2]);
    let n24 = crate::saliency::selected_count(n, (mix[1] + mix[2]).min(1.0)).max(n4);
    let mut steps = vec![1u32; n];
    for (pos, &e) in order.iter().enumerate() {
        steps[e] = if pos < n4 {
            4
        } else if pos < n24 {
            2
        } else {
            1
        };
    }
    let train = ternary_weight_train(w, &steps)?;
    let spikes = train.nonzero_spikes();
    let wq = gif_decode(&train);
    let layerwise_error = layerwise_error(w, &xt, &wq, &xt)?;
    let plan = ChannelPlan::unstructured(out, inp, steps, 2)?;
    let saliency = select_salient(&aggregate_per_channel(&s, ChannelAxis::Cols), 0.0)?
        .with_metric(Metric::WeightHessian);
    let saliency = SaliencyReport { ratio: plan.salient_ratio(), ..saliency };

    let tokens = x_calib.rows();
    let mut ops = OpsReport::new((n * tokens) as u64, equal, accounting::FP_BITS);
    ops.equal_steps = equal;
    let active: f64 = plan_total_steps(&plan) as f64;
    ops.sparsity = if active > 0.0 { spikes as f64 / active } else { 0.0 };
    ops.sparse_ace = spikes as f64 * tokens as f64 * accounting::FP_BITS;
    ops.code_bits_total = active;
    Ok(PipelineResult { layerwise_error, ops, plan, saliency })
}

/// Ternary spikes for an out × in weight matrix, one token per output row.
///
/// Each row is encoded per 128-column group with that group's absolute
/// maximum; `element_steps` is row-major.
pub fn ternary_weight_train(w: &Tensor2D, element_steps: &[u32]) -> Result<SpikeTrain> {
    let (out, inp) = w.shape();
    if element_steps.len() != out * inp {
        return Err(Error::shape(format!("{} step counts for a {out}x{inp} matrix", element_steps.len())));
    }
    let slots = element_steps.iter().copied().max().unwrap_or(1) as usize;
    let mut codes = vec![0i32; out * inp * slots];
    let mut scale = vec![0.0; out * inp];
    for r in 0..out {
        for g0 in (0..inp).step_by(WEIGHT_GROUP) {
            let cols = g0..(g0 + WEIGHT_GROUP).min(inp);
            let vals = &w.row(r)[cols.clone()];
            let absmax = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let t = ternary_encode(vals, &element_steps[r * inp + cols.start..r * inp + cols.end], absmax)?;
            for (k, c) in cols.enumerate() {
                let n = r * inp + c;
                let src = t.neuron_codes(0, k);
                codes[n * slots..n * slots + src.len()].copy_from_slice(src);
                scale[n] = t.neuron_scale(0, k);
            }
        }
    }
    SpikeTrain::from_parts(
        out,
        inp,
        2,
        inp.max(1),
        SpikeForm::ExpandedTernary,
        element_steps.to_vec(),
        codes,
        scale,
        vec![0.0; if inp == 0 { 0 } else { out }],
    )
}

fn plan_total_steps(plan: &ChannelPlan) -> u64 {
    match plan.granularity() {
        crate::quant::PlanGranularity::Unstructured { element_steps, .. } => {
            element_steps.iter().map(|&s| s as u64).sum()
        }
        crate::quant::PlanGranularity::Structured => 0,
    }
}

/// Salient K/V channels are picked by `X ∘ X` (identity weight) and those
/// channels get `t_prime` steps; returns `softmax(Q K̂ᵀ / √d) V̂`.
pub fn attention_demo(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    ratio: f64,
    t_prime: u32,
    levels: u32,
) -> Result<Tensor2D> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::shape("Q/K head dims or K/V lengths differ"));
    }
    let quantize = |m: &Tensor2D| -> Result<Tensor2D> {
        let mt = m.transpose();
        let score = aggregate_per_channel(&activation_saliency(&mt, &Tensor2D::identity(m.cols()))?, ChannelAxis::Rows);
        let sel = select_salient(&score, ratio)?;
        let plan = ChannelPlan::structured(m.cols(), sel.selected, t_prime, levels)?;
        Ok(gif_decode(&mixed_step_quantize(m, &plan)?))
    };
    attention_reference(q, &quantize(k)?, &quantize(v)?)
}

/// `softmax(Q Kᵀ / √d) V`, row-wise with max subtraction.
pub fn attention_reference(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D) -> Result<Tensor2D> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::shape("Q/K head dims or K/V lengths differ"));
    }
    let scale = 1.0 / (q.cols().max(1) as f64).sqrt();
    let mut s = reference_gemm(q, &k.transpose())?.scale(scale);
    for r in 0..s.rows() {
        let row = s.row_mut(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    reference_gemm(&s, v)
}

const RANDOM_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

/// Paired OBSpiking vs Random-Spike experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSpec {
    pub synthetic: SyntheticSpec,
    pub out_features: usize,
    pub ratio: f64,
    pub t_prime: u32,
    pub levels: u32,
    pub weight_method: WeightMethod,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            out_features: 256,
            ratio: 0.1,
            t_prime: 2,
            levels: 16,
            weight_method: WeightMethod::Rtn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoRow {
    pub seed: u64,
    pub act_obspiking: f64,
    pub act_random: f64,
    pub weight_obspiking: f64,
    pub weight_random: f64,
}

/// One row per seed `synthetic.seed + i`, in seed order.
pub fn run_demo(spec: &DemoSpec, seeds: usize) -> Result<Vec<DemoRow>> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = spec.synthetic.seed.wrapping_add(i);
            let syn = SyntheticSpec { seed, ..spec.synthetic.clone() };
            let (x, w) = synth_layer(&syn, spec.out_features)?;
            // The data stream also starts with a subset draw, so the random
            // selector needs a stream of its own.
            let selector_seed = seed ^ RANDOM_STREAM;
            let cfg = |sel| StepConfig::new(spec.ratio, spec.t_prime, spec.levels, sel, selector_seed);
            let act = |sel| run_activation_pipeline(&w, &x, &cfg(sel), None).map(|r| r.layerwise_error);
            let wgt =
                |sel| run_weight_pipeline(&w, &x, &cfg(sel), spec.weight_method).map(|r| r.layerwise_error);
            Ok(DemoRow {
                seed,
                act_obspiking: act(Selector::ObSpiking)?,
                act_random: act(Selector::Random)?,
                weight_obspiking: wgt(Selector::ObSpiking)?,
                weight_random: wgt(Selector::Random)?,
            })
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Column medians of `rows`.
pub fn demo_summary(rows: &[DemoRow]) -> [f64; 4] {
    let col = |f: fn(&DemoRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    [col(|r| r.act_obspiking), col(|r| r.act_random), col(|r| r.weight_obspiking), col(|r| r.weight_random)]
}

/// Per-seed CSV followed by a `median` summary row.
pub fn write_demo_csv<W: std::io::Write>(rows: &[DemoRow], out: W) -> Result<()> {
    let io = |e: csv::Error| Error::invalid(format!("CSV output: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed", "act_obspiking", "act_random", "weight_obspiking", "weight_random"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.act_obspiking.to_string(),
            r.act_random.to_string(),
            r.weight_obspiking.to_string(),
            r.weight_random.to_string(),
        ])
        .map_err(io)?;
    }
    let s = demo_summary(rows);
    let mut rec = vec!["median".to_string()];
    rec.extend(s.iter().map(|v| v.to_string()));
    w.write_record(&rec).map_err(io)?;
    w.flush().map_err(|e| Error::invalid(format!("CSV output: {e}")))?;
    Ok(())
}
