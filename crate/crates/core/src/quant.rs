//! Uniform (baseline) and saliency-aware mixed-step quantizers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{self, gif_decode, Rounding, SpikeTrain};
use crate::tensor::{IntMatrix, Tensor2D};

/// Which entries share one scale / zero point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One pair per row.
    PerToken,
    /// One pair per column.
    PerChannel,
    /// One pair per row and block of `n` consecutive columns.
    PerGroup(usize),
}

impl Granularity {
    fn units(self, rows: usize, cols: usize) -> Result<usize> {
        Ok(match self {
            Granularity::PerToken => rows,
            Granularity::PerChannel => cols,
            Granularity::PerGroup(0) => return Err(Error::invalid("group size must be positive")),
            Granularity::PerGroup(g) => rows * cols.div_ceil(g),
        })
    }

    #[inline]
    fn unit(self, cols: usize, r: usize, c: usize) -> usize {
        match self {
            Granularity::PerToken => r,
            Granularity::PerChannel => c,
            Granularity::PerGroup(g) => r * cols.div_ceil(g) + c / g,
        }
    }
}

/// Asymmetric integer codes with their affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    codes: IntMatrix,
    scale: Vec<f64>,
    zero_point: Vec<f64>,
    levels: u32,
    granularity: Granularity,
}

impl QuantizedTensor {
    pub fn codes(&self) -> &IntMatrix {
        &self.codes
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Bits needed per code, `ceil(log2(levels))`.
    pub fn bits(&self) -> u32 {
        bits_for_levels(self.levels)
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn scales(&self) -> &[f64] {
        &self.scale
    }

    pub fn zero_points(&self) -> &[f64] {
        &self.zero_point
    }

    #[inline]
    pub fn scale_at(&self, r: usize, c: usize) -> f64 {
        self.scale[self.granularity.unit(self.codes.cols(), r, c)]
    }

    #[inline]
    pub fn zero_at(&self, r: usize, c: usize) -> f64 {
        self.zero_point[self.granularity.unit(self.codes.cols(), r, c)]
    }

    pub fn dequantize(&self) -> Tensor2D {
        let (rows, cols) = (self.codes.rows(), self.codes.cols());
        Tensor2D::from_fn(rows, cols, |r, c| self.scale_at(r, c) * self.codes.get(r, c) as f64 + self.zero_at(r, c))
            .expect("finite")
    }
}

pub(crate) fn bits_for_levels(levels: u32) -> u32 {
    32 - (levels.max(2) - 1).leading_zeros()
}

/// `Δ = (max - min) / (2^bits - 1)`, codes `clip(Round((x - min) / Δ), 0, 2^bits - 1)`.
pub fn uniform_quantize(x: &Tensor2D, bits: u32, granularity: Granularity, rounding: Rounding) -> Result<QuantizedTensor> {
    if !(1..=8).contains(&bits) {
        return Err(Error::invalid(format!("bits must be in 1..=8, got {bits}")));
    }
    uniform_quantize_levels(x, 1 << bits, granularity, rounding)
}

/// Uniform quantizer with an arbitrary number of levels (`levels - 1` steps).
pub fn uniform_quantize_levels(
    x: &Tensor2D,
    levels: u32,
    granularity: Granularity,
    rounding: Rounding,
) -> Result<QuantizedTensor> {
    if levels < 2 {
        return Err(Error::invalid("levels must be at least 2"));
    }
    let (rows, cols) = x.shape();
    let units = granularity.units(rows, cols)?;
    let mut lo = vec![f64::INFINITY; units];
    let mut hi = vec![f64::NEG_INFINITY; units];
    for r in 0..rows {
        for c in 0..cols {
            let u = granularity.unit(cols, r, c);
            let v = x.get(r, c);
            lo[u] = lo[u].min(v);
            hi[u] = hi[u].max(v);
        }
    }
    let top = (levels - 1) as f64;
    let scale: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| if l <= h { (h - l) / top } else { 0.0 }).collect();
    let zero_point: Vec<f64> = lo.iter().map(|&l| if l.is_finite() { l } else { 0.0 }).collect();
    let mut codes = IntMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let u = granularity.unit(cols, r, c);
            if scale[u] > 0.0 {
                let q = (x.get(r, c) - zero_point[u]) / scale[u];
                codes.set(r, c, rounding.apply(q).clamp(0.0, top) as i32);
            }
        }
    }
    Ok(QuantizedTensor { codes, scale, zero_point, levels, granularity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PlanGranularity {
    /// Whole channels share one step count.
    Structured,
    /// Every element has its own step count (weights only), row-major `rows × channels`.
    Unstructured { rows: usize, element_steps: Vec<u32> },
}

/// Spiking-step allocation over channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    channels: usize,
    salient_steps: u32,
    base_steps: u32,
    levels: u32,
    salient_set: Vec<usize>,
    granularity: PlanGranularity,
}

impl ChannelPlan {
    /// `salient` channels get `salient_steps` merged steps; the rest get one.
    pub fn structured(
        channels: usize,
        salient: impl IntoIterator<Item = usize>,
        salient_steps: u32,
        levels: u32,
    ) -> Result<Self> {
        neuron::check_steps_levels(salient_steps, levels)?;
        let set: BTreeSet<usize> = salient.into_iter().collect();
        if let Some(&c) = set.iter().find(|&&c| c >= channels) {
            return Err(Error::invalid(format!("salient channel {c} out of range for {channels} channels")));
        }
        Ok(Self {
            channels,
            salient_steps,
            base_steps: 1,
            levels,
            salient_set: set.into_iter().collect(),
            granularity: PlanGranularity::Structured,
        })
    }

    /// Per-element steps for a `rows × channels` weight matrix.
    pub fn unstructured(rows: usize, channels: usize, element_steps: Vec<u32>, levels: u32) -> Result<Self> {
        if element_steps.len() != rows * channels {
            return Err(Error::shape(format!(
                "{rows}x{channels} plan needs {} step counts, got {}",
                rows * channels,
                element_steps.len()
            )));
        }
        for &s in &element_steps {
            neuron::check_steps_levels(s, levels)?;
        }
        let salient_steps = element_steps.iter().copied().max().unwrap_or(1);
        Ok(Self {
            channels,
            salient_steps,
            base_steps: 1,
            levels,
            salient_set: Vec::new(),
            granularity: PlanGranularity::Unstructured { rows, element_steps },
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn salient_steps(&self) -> u32 {
        self.salient_steps
    }

    pub fn base_steps(&self) -> u32 {
        self.base_steps
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn salient_set(&self) -> &[usize] {
        &self.salient_set
    }

    pub fn granularity(&self) -> &PlanGranularity {
        &self.granularity
    }

    pub fn is_salient(&self, c: usize) -> bool {
        self.salient_set.binary_search(&c).is_ok()
    }

    /// Fraction of channels (structured) or elements (unstructured) above one step.
    pub fn salient_ratio(&self) -> f64 {
        match &self.granularity {
            PlanGranularity::Structured if self.channels == 0 => 0.0,
            PlanGranularity::Structured => self.salient_set.len() as f64 / self.channels as f64,
            PlanGranularity::Unstructured { element_steps, .. } if element_steps.is_empty() => 0.0,
            PlanGranularity::Unstructured { element_steps, .. } => {
                element_steps.iter().filter(|&&s| s > 1).count() as f64 / element_steps.len() as f64
            }
        }
    }

    /// Average merged steps per element.
    pub fn mean_steps(&self) -> f64 {
        match &self.granularity {
            PlanGranularity::Structured => 1.0 + self.salient_ratio() * (self.salient_steps as f64 - 1.0),
            PlanGranularity::Unstructured { element_steps, .. } => {
                element_steps.iter().map(|&s| s as f64).sum::<f64>() / element_steps.len().max(1) as f64
            }
        }
    }

    #[inline]
    pub fn steps_for(&self, row: usize, c: usize) -> u32 {
        match &self.granularity {
            PlanGranularity::Structured if self.is_salient(c) => self.salient_steps,
            PlanGranularity::Structured => self.base_steps,
            PlanGranularity::Unstructured { element_steps, .. } => element_steps[row * self.channels + c],
        }
    }

    fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if cols != self.channels {
            return Err(Error::shape(format!("plan has {} channels, tensor has {cols}", self.channels)));
        }
        if let PlanGranularity::Unstructured { rows: pr, .. } = self.granularity {
            if pr != rows {
                return Err(Error::shape(format!("unstructured plan has {pr} rows, tensor has {rows}")));
            }
        }
        Ok(())
    }
}

/// Per-token mixed-step encoding with floor rounding.
///
/// Salient channels get `T'` merged GIF steps, the others one step. All
/// channels of a token share its minimum as zero point; each step class has
/// its own spike value `δ = (class max - zero) / (steps (L - 1))`.
pub fn mixed_step_quantize(x: &Tensor2D, plan: &ChannelPlan) -> Result<SpikeTrain> {
    mixed_step_quantize_with(x, plan, x.cols().max(1), Rounding::Floor)
}

/// [`mixed_step_quantize`] with zero points per block of `group_size`
/// columns and a selectable rounding mode.
pub fn mixed_step_quantize_with(
    x: &Tensor2D,
    plan: &ChannelPlan,
    group_size: usize,
    rounding: Rounding,
) -> Result<SpikeTrain> {
    plan.check_shape(x.rows(), x.cols())?;
    neuron::encode_grouped(x, plan.levels, group_size, rounding, |t, c| plan.steps_for(t, c))
}

pub fn mixed_step_dequantize(s: &SpikeTrain, plan: &ChannelPlan) -> Result<Tensor2D> {
    plan.check_shape(s.tokens(), s.channels())?;
    for t in 0..s.tokens() {
        for c in 0..s.channels() {
            if s.neuron_steps(t, c) != plan.steps_for(t, c) {
                return Err(Error::invalid(format!(
                    "neuron ({t}, {c}) has {} steps, plan says {}",
                    s.neuron_steps(t, c),
                    plan.steps_for(t, c)
                )));
            }
        }
    }
    Ok(gif_decode(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{gif_encode, min_max};
    use crate::rng::{rng_normal, Rng};

    #[test]
    fn uniform_endpoints() {
        let x = Tensor2D::from_rows(&[[0.0, 1.0]]).unwrap();
        let q = uniform_quantize(&x, 2, Granularity::PerToken, Rounding::Floor).unwrap();
        assert!((q.scales()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(q.codes().data(), &[0, 3]);
        assert_eq!(q.bits(), 2);
    }

    #[test]
    fn uniform_floor_example() {
        let x = Tensor2D::from_rows(&[[0.2, 0.9, 0.45]]).unwrap();
        let q = uniform_quantize(&x, 2, Granularity::PerToken, Rounding::Floor).unwrap();
        assert_eq!(q.codes().data(), &[0, 3, 1]);
        assert!((q.scales()[0] - 0.7 / 3.0).abs() < 1e-15);
        let n = uniform_quantize(&x, 2, Granularity::PerToken, Rounding::Nearest).unwrap();
        assert_eq!(n.codes().data(), &[0, 3, 1]);
    }

    #[test]
    fn uniform_constant() {
        let x = Tensor2D::filled(2, 4, 0.3);
        let q = uniform_quantize(&x, 4, Granularity::PerToken, Rounding::Nearest).unwrap();
        assert!(q.codes().data().iter().all(|&c| c == 0));
        assert_eq!(q.dequantize(), x);
    }

    #[test]
    fn uniform_bits_range() {
        let x = Tensor2D::zeros(1, 1);
        assert!(uniform_quantize(&x, 0, Granularity::PerToken, Rounding::Floor).is_err());
        assert!(uniform_quantize(&x, 9, Granularity::PerToken, Rounding::Floor).is_err());
    }

    #[test]
    fn grouped_and_per_channel_units() {
        let x = Tensor2D::from_rows(&[[0.0, 1.0, 10.0, 20.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0]]).unwrap();
        let q = uniform_quantize(&x, 3, Granularity::PerGroup(2), Rounding::Nearest).unwrap();
        assert_eq!(q.scales().len(), 6);
        assert_eq!(q.zero_at(0, 3), 10.0);
        assert_eq!(q.zero_at(1, 4), 6.0);
        let d = q.dequantize();
        // Two-element groups reproduce both endpoints exactly.
        assert_eq!(d.get(0, 2), 10.0);
        assert!((d.get(0, 3) - 20.0).abs() < 1e-12);
        let pc = uniform_quantize(&x, 3, Granularity::PerChannel, Rounding::Floor).unwrap();
        assert_eq!(pc.zero_points(), &[0.0, 1.0, 4.0, 5.0, 5.0]);
    }

    #[test]
    fn plan_construction() {
        let p = ChannelPlan::structured(10, [3, 1, 3], 2, 16).unwrap();
        assert_eq!(p.salient_set(), &[1, 3]);
        assert!((p.salient_ratio() - 0.2).abs() < 1e-15);
        assert_eq!(p.steps_for(0, 3), 2);
        assert_eq!(p.steps_for(5, 4), 1);
        assert!(ChannelPlan::structured(4, [4], 2, 16).is_err());
        assert!(ChannelPlan::structured(4, [], 0, 16).is_err());
        assert!(ChannelPlan::unstructured(2, 2, vec![1, 2, 4], 2).is_err());
        let u = ChannelPlan::unstructured(2, 2, vec![1, 2, 4, 1], 2).unwrap();
        assert_eq!(u.steps_for(1, 0), 4);
        assert!((u.mean_steps() - 2.0).abs() < 1e-15);
        assert!((u.salient_ratio() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_salient_set_is_uniform() {
        let mut rng = Rng::new(21);
        let x = rng_normal(&mut rng, 16, 40, 0.5, 2.0);
        let plan = ChannelPlan::structured(40, [], 2, 16).unwrap();
        let s = mixed_step_quantize(&x, &plan).unwrap();
        let q = uniform_quantize(&x, 4, Granularity::PerToken, Rounding::Floor).unwrap();
        for t in 0..16 {
            for c in 0..40 {
                assert_eq!(s.total(t, c), q.codes().get(t, c) as i64);
            }
        }
        assert_eq!(mixed_step_dequantize(&s, &plan).unwrap(), q.dequantize());
    }

    #[test]
    fn all_salient_is_gif() {
        let mut rng = Rng::new(22);
        let x = rng_normal(&mut rng, 8, 12, 0.0, 1.0);
        let plan = ChannelPlan::structured(12, 0..12, 2, 16).unwrap();
        assert_eq!(mixed_step_quantize(&x, &plan).unwrap(), gif_encode(&x, 2, 16).unwrap());
    }

    #[test]
    fn outlier_channel_gets_finer_step() {
        let mut rng = Rng::new(23);
        let mut rows = Vec::new();
        for _ in 0..32 {
            let mut r: Vec<f64> = (0..10).map(|_| rng.next_normal()).collect();
            r[4] *= 10.0;
            rows.push(r);
        }
        let x = Tensor2D::from_rows(&rows).unwrap();
        let spiking = ChannelPlan::structured(10, [4], 2, 16).unwrap();
        let one_step = ChannelPlan::structured(10, [], 2, 16).unwrap();
        let xs = mixed_step_dequantize(&mixed_step_quantize(&x, &spiking).unwrap(), &spiking).unwrap();
        let x1 = mixed_step_dequantize(&mixed_step_quantize(&x, &one_step).unwrap(), &one_step).unwrap();
        let mut coarse_worst = 0.0_f64;
        for t in 0..32 {
            let (lo, hi) = min_max(x.row(t)).unwrap();
            let range = hi - lo;
            let e2 = (x.get(t, 4) - xs.get(t, 4)).abs();
            let e1 = (x.get(t, 4) - x1.get(t, 4)).abs();
            assert!(e2 <= range / 30.0 + 1e-12, "token {t}: {e2} > {}", range / 30.0);
            assert!(e1 <= range / 15.0 + 1e-12);
            coarse_worst = coarse_worst.max(e1 / range);
        }
        assert!(coarse_worst > 1.0 / 30.0);
    }

    #[test]
    fn reconstruction_bound_over_seeds() {
        for seed in 0..100 {
            let mut rng = Rng::new(seed);
            let x = rng_normal(&mut rng, 32, 64, 0.0, 1.0);
            let salient = rng.sample_indices(64, 6);
            let plan = ChannelPlan::structured(64, salient, 2, 16).unwrap();
            let s = mixed_step_quantize(&x, &plan).unwrap();
            let d = mixed_step_dequantize(&s, &plan).unwrap();
            let max_delta = s.scale().iter().fold(0.0_f64, |m, &v| m.max(v));
            assert!(x.max_abs_diff(&d).unwrap() <= max_delta * (1.0 + 1e-9));
        }
    }

    #[test]
    fn full_scale_reconstructed_in_both_classes() {
        let x = Tensor2D::from_rows(&[[-1.0, 3.0, 0.5, 2.0], [0.0, 1.0, 4.0, -2.0]]).unwrap();
        let plan = ChannelPlan::structured(4, [1], 4, 4).unwrap();
        let d = mixed_step_dequantize(&mixed_step_quantize(&x, &plan).unwrap(), &plan).unwrap();
        // token 0: salient max 3.0, base max 2.0; token 1: base holds the max 4.0.
        assert!((d.get(0, 1) - 3.0).abs() < 1e-12);
        assert!((d.get(0, 3) - 2.0).abs() < 1e-12);
        assert!((d.get(1, 2) - 4.0).abs() < 1e-12);
        assert!((d.get(1, 1) - 1.0).abs() < 1e-12);
        assert_eq!(d.get(1, 3), -2.0);
    }

    #[test]
    fn more_steps_never_hurt_salient_channels() {
        for seed in 0..50 {
            let mut rng = Rng::new(1000 + seed);
            let x = rng_normal(&mut rng, 8, 20, 0.0, 3.0);
            let salient = rng.sample_indices(20, 4);
            let plan = ChannelPlan::structured(20, salient.clone(), 4, 8).unwrap();
            let s = mixed_step_quantize(&x, &plan).unwrap();
            let d = gif_decode(&s);
            for t in 0..8 {
                let (zero, _) = min_max(x.row(t)).unwrap();
                let vals: Vec<f64> = salient.iter().map(|&c| x.get(t, c)).collect();
                let (_, class_max) = min_max(&vals).unwrap();
                let fine = (class_max - zero) / 28.0;
                let coarse = fine * 4.0;
                for &c in &salient {
                    let one_step = if coarse > 0.0 {
                        zero + coarse * Rounding::Floor.apply((x.get(t, c) - zero) / coarse).clamp(0.0, 7.0)
                    } else {
                        zero
                    };
                    let e_multi = (x.get(t, c) - d.get(t, c)).abs();
                    let e_one = (x.get(t, c) - one_step).abs();
                    assert!(e_multi <= e_one + 1e-12, "seed {seed} t {t} c {c}: {e_multi} > {e_one}");
                }
            }
        }
    }

    #[test]
    fn affine_covariance() {
        let mut rng = Rng::new(77);
        let x = rng_normal(&mut rng, 10, 30, 0.0, 1.0);
        let plan = ChannelPlan::structured(30, [0, 7, 19], 2, 16).unwrap();
        let (a, b) = (2.5, -1.25);
        let y = x.map(|v| a * v + b);
        let sx = mixed_step_quantize(&x, &plan).unwrap();
        let sy = mixed_step_quantize(&y, &plan).unwrap();
        assert_eq!(sx.codes(), sy.codes());
        let dx = gif_decode(&sx).map(|v| a * v + b);
        assert!(gif_decode(&sy).max_abs_diff(&dx).unwrap() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor2D::zeros(2, 3);
        let plan = ChannelPlan::structured(4, [], 2, 4).unwrap();
        assert!(mixed_step_quantize(&x, &plan).is_err());
        let good = ChannelPlan::structured(3, [1], 2, 4).unwrap();
        let s = mixed_step_quantize(&x, &good).unwrap();
        let other = ChannelPlan::structured(3, [2], 2, 4).unwrap();
        assert!(mixed_step_dequantize(&s, &other).is_err());
    }
}
