//! Integrate-and-fire spike encoders.
//!
//! A token is shifted by its minimum (the zero point) and the non-negative
//! residual `u` drives a neuron with subtraction reset. A GIF neuron merges
//! `L - 1` binary IF sub-steps into one step that emits a code in
//! `[0, L - 1]`; over `T'` merged steps the total code is
//! `clip(floor(u / δ), 0, T'(L - 1))` with `δ = range / (T'(L - 1))`, which
//! is exactly asymmetric uniform quantization with `T'(L - 1) + 1` levels.
//! Plain IF is the `L = 2` case.
//!
//! Merged trains can be expanded to binary sub-steps (one spike per slot)
//! and merged back without loss; the per-neuron code sum is invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{IntMatrix, Tensor2D};

/// Guard added before every floor so values that land on an integer
/// boundary are not pushed below it by rounding error.
pub const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeForm {
    Merged,
    ExpandedBinary,
    ExpandedTernary,
}

impl SpikeForm {
    pub fn name(self) -> &'static str {
        match self {
            SpikeForm::Merged => "merged",
            SpikeForm::ExpandedBinary => "expanded-binary",
            SpikeForm::ExpandedTernary => "expanded-ternary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Spiking semantics: the membrane starts empty.
    #[default]
    Floor,
    /// Round half up: the membrane starts at half a threshold.
    Nearest,
}

impl Rounding {
    pub(crate) fn offset(self) -> f64 {
        match self {
            Rounding::Floor => 0.0,
            Rounding::Nearest => 0.5,
        }
    }

    /// Integer code for a real-valued code `q`, before clipping.
    pub(crate) fn apply(self, q: f64) -> f64 {
        (q + self.offset() + FLOOR_EPS).floor()
    }
}

/// Per-token encoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenQuantParams {
    /// Threshold of one merged-step code unit, `range / (L - 1)`.
    pub v_th_unit: f64,
    /// Token minimum subtracted before encoding.
    pub zero_point: f64,
    /// Value of one spike unit, `range / (steps (L - 1))`.
    pub step_delta: f64,
    /// `max(x) - zero_point`.
    pub range: f64,
    pub levels: u32,
    pub steps: u32,
}

impl TokenQuantParams {
    pub(crate) fn from_range(zero_point: f64, range: f64, steps: u32, levels: u32) -> Self {
        let step_delta = range / full_scale(steps, levels) as f64;
        let v_th_unit = range / (levels - 1) as f64;
        Self { v_th_unit, zero_point, step_delta, range, levels, steps }
    }

    /// Largest total code, `steps (L - 1)`.
    pub fn full_scale(&self) -> i64 {
        full_scale(self.steps, self.levels)
    }

    /// Real-valued code of `x` in units of `step_delta` (0 for a constant token).
    pub fn scaled(&self, x: f64) -> f64 {
        if self.step_delta > 0.0 {
            (x - self.zero_point) / self.step_delta
        } else {
            0.0
        }
    }
}

fn full_scale(steps: u32, levels: u32) -> i64 {
    steps as i64 * (levels as i64 - 1)
}

pub(crate) fn check_steps_levels(steps: u32, levels: u32) -> Result<()> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if levels < 2 {
        return Err(Error::invalid(format!("levels must be at least 2, got {levels}")));
    }
    if full_scale(steps, levels) > i32::MAX as i64 {
        return Err(Error::invalid(format!("steps {steps} x levels {levels} overflows the code range")));
    }
    Ok(())
}

pub fn compute_params(x_token: &[f64], steps: u32, levels: u32) -> Result<TokenQuantParams> {
    check_steps_levels(steps, levels)?;
    let (min, max) = min_max(x_token).ok_or_else(|| Error::invalid("empty token vector"))?;
    Ok(TokenQuantParams::from_range(min, max - min, steps, levels))
}

pub(crate) fn min_max(xs: &[f64]) -> Option<(f64, f64)> {
    let first = *xs.first()?;
    Some(xs.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// Runs one GIF neuron over `out.len()` merged steps.
///
/// `q` is the input in units of the spike value δ, so each merged-step code
/// unit has threshold `steps` and the constant per-step charge is `q`.
/// Returns the total emitted code.
pub fn fire_gif(q: f64, levels: u32, rounding: Rounding, out: &mut [i32]) -> i64 {
    let threshold = out.len() as f64;
    let cap = (levels - 1) as f64;
    let mut v = rounding.offset() * threshold;
    let mut total = 0i64;
    for slot in out.iter_mut() {
        v += q;
        let k = (v / threshold + FLOOR_EPS).floor().clamp(0.0, cap);
        v -= k * threshold;
        *slot = k as i32;
        total += k as i64;
    }
    total
}

/// Spike codes for a tokens × channels tensor.
///
/// Each neuron `(token, channel)` owns `slots` code positions; only the
/// first [`active_slots`](Self::active_slots) may be nonzero. `steps` holds
/// the merged step count per neuron, `scale` the value of one code unit, and
/// `zero_point` one offset per token and channel group.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    tokens: usize,
    channels: usize,
    slots: usize,
    levels: u32,
    group_size: usize,
    form: SpikeForm,
    steps: Vec<u32>,
    codes: Vec<i32>,
    scale: Vec<f64>,
    zero_point: Vec<f64>,
}

impl SpikeTrain {
    /// Assembles a train, checking every structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        tokens: usize,
        channels: usize,
        levels: u32,
        group_size: usize,
        form: SpikeForm,
        steps: Vec<u32>,
        codes: Vec<i32>,
        scale: Vec<f64>,
        zero_point: Vec<f64>,
    ) -> Result<Self> {
        if levels < 2 {
            return Err(Error::invalid("levels must be at least 2"));
        }
        if form == SpikeForm::ExpandedTernary && levels != 2 {
            return Err(Error::invalid("ternary trains use one spike per step (levels = 2)"));
        }
        let neurons = tokens * channels;
        if group_size == 0 && channels > 0 {
            return Err(Error::invalid("group_size must be positive"));
        }
        let groups = if channels == 0 { 0 } else { channels.div_ceil(group_size) };
        if steps.len() != neurons || scale.len() != neurons || zero_point.len() != tokens * groups {
            return Err(Error::shape(format!(
                "{tokens}x{channels} train needs {neurons} steps/scales and {} zero points",
                tokens * groups
            )));
        }
        if let Some(i) = steps.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("neuron {i} has zero steps")));
        }
        if let Some(i) = scale.iter().chain(&zero_point).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let max_steps = steps.iter().copied().max().unwrap_or(1) as usize;
        let per_step = Self::slots_per_step(form, levels);
        let slots = max_steps * per_step;
        if codes.len() != neurons * slots {
            return Err(Error::shape(format!(
                "expected {} codes ({neurons} neurons x {slots} slots), got {}",
                neurons * slots,
                codes.len()
            )));
        }
        let (lo, hi) = match form {
            SpikeForm::Merged => (0, levels as i32 - 1),
            SpikeForm::ExpandedBinary => (0, 1),
            SpikeForm::ExpandedTernary => (-1, 1),
        };
        for n in 0..neurons {
            let active = steps[n] as usize * per_step;
            for (s, &code) in codes[n * slots..(n + 1) * slots].iter().enumerate() {
                let (lo, hi) = if s < active { (lo, hi) } else { (0, 0) };
                if code < lo || code > hi {
                    return Err(Error::CodeOutOfRange { code: code as i64, index: n * slots + s, max: hi as i64 });
                }
            }
        }
        Ok(Self { tokens, channels, slots, levels, group_size, form, steps, codes, scale, zero_point })
    }

    fn slots_per_step(form: SpikeForm, levels: u32) -> usize {
        match form {
            SpikeForm::ExpandedBinary => levels as usize - 1,
            SpikeForm::Merged | SpikeForm::ExpandedTernary => 1,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn form(&self) -> SpikeForm {
        self.form
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.zero_point.len().checked_div(self.tokens).unwrap_or(0)
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    pub fn codes(&self) -> &[i32] {
        &self.codes
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn zero_points(&self) -> &[f64] {
        &self.zero_point
    }

    pub fn max_steps(&self) -> u32 {
        self.steps.iter().copied().max().unwrap_or(1)
    }

    #[inline]
    pub fn neuron_steps(&self, t: usize, c: usize) -> u32 {
        self.steps[t * self.channels + c]
    }

    #[inline]
    pub fn neuron_scale(&self, t: usize, c: usize) -> f64 {
        self.scale[t * self.channels + c]
    }

    #[inline]
    pub fn zero_point(&self, t: usize, c: usize) -> f64 {
        self.zero_point[t * self.groups() + c / self.group_size]
    }

    /// All slots of one neuron.
    pub fn neuron_codes(&self, t: usize, c: usize) -> &[i32] {
        let n = t * self.channels + c;
        &self.codes[n * self.slots..(n + 1) * self.slots]
    }

    /// Slots that can carry spikes for this neuron.
    pub fn active_slots(&self, t: usize, c: usize) -> usize {
        self.neuron_steps(t, c) as usize * Self::slots_per_step(self.form, self.levels)
    }

    pub fn total(&self, t: usize, c: usize) -> i64 {
        self.neuron_codes(t, c).iter().map(|&k| k as i64).sum()
    }

    /// Per-neuron code sums, tokens × channels, row-major.
    pub fn totals(&self) -> Vec<i64> {
        self.codes.chunks(self.slots.max(1)).map(|ch| ch.iter().map(|&k| k as i64).sum()).collect()
    }

    /// Number of nonzero slots.
    pub fn nonzero_spikes(&self) -> u64 {
        self.codes.iter().filter(|&&k| k != 0).count() as u64
    }

    /// Sum of `|code|` over all slots; equals [`nonzero_spikes`](Self::nonzero_spikes) for expanded trains.
    pub fn spike_mass(&self) -> u64 {
        self.codes.iter().map(|k| k.unsigned_abs() as u64).sum()
    }

    /// Total slots that can carry spikes.
    pub fn total_active_slots(&self) -> u64 {
        let per = Self::slots_per_step(self.form, self.levels) as u64;
        self.steps.iter().map(|&s| s as u64 * per).sum()
    }

    /// Codes as a tokens × (channels · slots) integer matrix (SPKT payload layout).
    pub fn codes_matrix(&self) -> IntMatrix {
        IntMatrix::new(self.tokens, self.channels * self.slots, self.codes.clone()).expect("consistent")
    }

    pub(crate) fn with_codes(&self, form: SpikeForm, levels: u32, steps: Vec<u32>, codes: Vec<i32>) -> Result<Self> {
        Self::from_parts(
            self.tokens,
            self.channels,
            levels,
            self.group_size,
            form,
            steps,
            codes,
            self.scale.clone(),
            self.zero_point.clone(),
        )
    }
}

/// Encodes every (token, group) of `x` with per-neuron merged step counts.
///
/// Within one (token, group) all neurons share the zero point (group
/// minimum); neurons with the same step count form a class whose range is
/// the class maximum minus that zero point, so no class ever clips.
pub(crate) fn encode_grouped(
    x: &Tensor2D,
    levels: u32,
    group_size: usize,
    rounding: Rounding,
    steps_of: impl Fn(usize, usize) -> u32,
) -> Result<SpikeTrain> {
    let (tokens, channels) = x.shape();
    if group_size == 0 {
        return Err(Error::invalid("group size must be positive"));
    }
    let groups = channels.div_ceil(group_size);
    let mut steps = Vec::with_capacity(tokens * channels);
    for t in 0..tokens {
        for c in 0..channels {
            let s = steps_of(t, c);
            check_steps_levels(s, levels)?;
            steps.push(s);
        }
    }
    let max_steps = steps.iter().copied().max().unwrap_or(1) as usize;
    let mut codes = vec![0i32; tokens * channels * max_steps];
    let mut scale = vec![0.0; tokens * channels];
    let mut zero_point = vec![0.0; tokens * groups];
    let mut classes: Vec<(u32, f64, f64)> = Vec::new();
    for t in 0..tokens {
        let row = x.row(t);
        for g in 0..groups {
            let cols = g * group_size..((g + 1) * group_size).min(channels);
            let (zero, _) = min_max(&row[cols.clone()]).expect("nonempty group");
            zero_point[t * groups + g] = zero;
            classes.clear();
            for c in cols.clone() {
                let s = steps[t * channels + c];
                match classes.iter_mut().find(|(cs, _, _)| *cs == s) {
                    Some(entry) => entry.1 = entry.1.max(row[c]),
                    None => classes.push((s, row[c], 0.0)),
                }
            }
            for entry in classes.iter_mut() {
                entry.2 = TokenQuantParams::from_range(zero, entry.1 - zero, entry.0, levels).step_delta;
            }
            for c in cols {
                let n = t * channels + c;
                let s = steps[n];
                let delta = classes.iter().find(|(cs, _, _)| *cs == s).expect("class").2;
                let q = if delta > 0.0 { (row[c] - zero) / delta } else { 0.0 };
                let out = &mut codes[n * max_steps..n * max_steps + s as usize];
                fire_gif(q, levels, rounding, out);
                scale[n] = delta;
            }
        }
    }
    SpikeTrain::from_parts(
        tokens,
        channels,
        levels,
        group_size.min(channels.max(1)),
        SpikeForm::Merged,
        steps,
        codes,
        scale,
        zero_point,
    )
}

/// Per-token GIF encoding of a tokens × channels tensor with `steps` merged
/// steps of `levels` levels each (floor semantics).
pub fn gif_encode(x: &Tensor2D, steps: u32, levels: u32) -> Result<SpikeTrain> {
    gif_encode_with(x, steps, levels, Rounding::Floor)
}

pub fn gif_encode_with(x: &Tensor2D, steps: u32, levels: u32, rounding: Rounding) -> Result<SpikeTrain> {
    check_steps_levels(steps, levels)?;
    encode_grouped(x, levels, x.cols().max(1), rounding, |_, _| steps)
}

/// Firing-rate decode: `scale · Σ codes + zero_point` per neuron.
pub fn gif_decode(s: &SpikeTrain) -> Tensor2D {
    let mut data = Vec::with_capacity(s.tokens * s.channels);
    for t in 0..s.tokens {
        for c in 0..s.channels {
            data.push(s.neuron_scale(t, c) * s.total(t, c) as f64 + s.zero_point(t, c));
        }
    }
    Tensor2D::new(s.tokens, s.channels, data).expect("finite")
}

/// Splits every merged step of value `k` into `L - 1` binary slots with `k`
/// leading ones.
pub fn expand(s: &SpikeTrain) -> Result<SpikeTrain> {
    if s.form != SpikeForm::Merged {
        return Err(Error::Form { expected: "merged", found: s.form.name() });
    }
    let sub = s.levels as usize - 1;
    let slots = s.slots * sub;
    let mut codes = vec![0i32; s.tokens * s.channels * slots];
    for (n, merged) in s.codes.chunks(s.slots).enumerate() {
        let out = &mut codes[n * slots..(n + 1) * slots];
        for (j, &k) in merged.iter().enumerate() {
            out[j * sub..j * sub + k as usize].fill(1);
        }
    }
    s.with_codes(SpikeForm::ExpandedBinary, s.levels, s.steps.clone(), codes)
}

/// Sums consecutive groups of `levels - 1` binary slots back into merged codes.
pub fn merge(s: &SpikeTrain, levels: u32) -> Result<SpikeTrain> {
    if s.form != SpikeForm::ExpandedBinary {
        return Err(Error::Form { expected: "expanded-binary", found: s.form.name() });
    }
    if levels < 2 {
        return Err(Error::invalid("levels must be at least 2"));
    }
    let sub = levels as usize - 1;
    if s.slots % sub != 0 {
        return Err(Error::invalid(format!("{} slots not divisible by levels - 1 = {sub}", s.slots)));
    }
    let old_sub = s.levels as u64 - 1;
    let mut steps = Vec::with_capacity(s.steps.len());
    for (i, &st) in s.steps.iter().enumerate() {
        let active = st as u64 * old_sub;
        if active % sub as u64 != 0 {
            return Err(Error::invalid(format!("neuron {i}: {active} active slots not divisible by {sub}")));
        }
        steps.push((active / sub as u64) as u32);
    }
    let codes: Vec<i32> = s.codes.chunks(sub).map(|ch| ch.iter().sum()).collect();
    s.with_codes(SpikeForm::Merged, levels, steps, codes)
}

/// Ternary weight encoding of one group.
///
/// Element `i` with `T_i` steps uses `δ_i = group_absmax / T_i` and the
/// signed total `n_i = clip(round(w_i / δ_i), -T_i, T_i)`, emitted as `|n_i|`
/// spikes of sign `n_i` in the earliest slots. The returned train has one
/// token, `w.len()` channels and `scale() == δ`.
pub fn ternary_encode(w: &[f64], steps_per_element: &[u32], group_absmax: f64) -> Result<SpikeTrain> {
    if w.len() != steps_per_element.len() {
        return Err(Error::shape(format!("{} weights vs {} step counts", w.len(), steps_per_element.len())));
    }
    if !group_absmax.is_finite() || group_absmax < 0.0 {
        return Err(Error::invalid(format!("group absmax {group_absmax} must be finite and non-negative")));
    }
    let absmax = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !absmax.is_finite() {
        return Err(Error::invalid("non-finite weight"));
    }
    if group_absmax == 0.0 && absmax > 0.0 {
        return Err(Error::invalid("zero group absmax with nonzero weights"));
    }
    if absmax > group_absmax * (1.0 + 1e-12) {
        return Err(Error::invalid(format!("group absmax {group_absmax} below max |w| = {absmax}")));
    }
    if let Some(i) = steps_per_element.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("element {i} has zero steps")));
    }
    let slots = steps_per_element.iter().copied().max().unwrap_or(1) as usize;
    let mut codes = vec![0i32; w.len() * slots];
    let mut scale = Vec::with_capacity(w.len());
    for (i, (&wi, &st)) in w.iter().zip(steps_per_element).enumerate() {
        let delta = group_absmax / st as f64;
        let n = if delta > 0.0 { (wi / delta).round().clamp(-(st as f64), st as f64) as i32 } else { 0 };
        codes[i * slots..i * slots + n.unsigned_abs() as usize].fill(n.signum());
        scale.push(delta);
    }
    SpikeTrain::from_parts(
        1,
        w.len(),
        2,
        w.len().max(1),
        SpikeForm::ExpandedTernary,
        steps_per_element.to_vec(),
        codes,
        scale,
        vec![0.0],
    )
}
