//! Matrix kernels for quantized and spiking operands.
//!
//! - [`bitserial_gemm`]: integer GEMM over bit planes, one word-AND and
//!   popcount per plane pair, weighted by `2^(i+j)`.
//! - [`mixed_step_gemm`]: duplicates every multi-step channel once per step
//!   so the whole product runs as a single-precision bit-serial GEMM, then
//!   applies the per-class scales and the zero-point correction.
//! - [`event_driven_gemm`]: accumulate-only evaluation over expanded spikes.
//! - [`reference_gemm`]: plain real GEMM used as the oracle.
//!
//! Integer accumulators are `i64`. With codes of at most 16 bits and an
//! inner dimension below 2^30 no partial sum can overflow.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neuron::{SpikeForm, SpikeTrain};
use crate::quant::{bits_for_levels, ChannelPlan, PlanGranularity, QuantizedTensor};
use crate::tensor::{IntMatrix, Tensor2D};

const WORD: usize = 64;
const MAX_INNER: usize = 1 << 30;

/// Bit-plane packed unsigned codes, 64 columns per word, LSB-first.
///
/// `planes[(bit * rows + row) * words + w]`; bits past `cols` are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    rows: usize,
    cols: usize,
    bits: u32,
    words: usize,
    planes: Vec<u64>,
}

impl BitPlanes {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }

    /// Packed words of bit `bit` for row `row`.
    pub fn plane_row(&self, bit: u32, row: usize) -> &[u64] {
        let start = (bit as usize * self.rows + row) * self.words;
        &self.planes[start..start + self.words]
    }

    pub fn unpack(&self) -> IntMatrix {
        let mut data = vec![0i32; self.rows * self.cols];
        for b in 0..self.bits {
            for r in 0..self.rows {
                let words = self.plane_row(b, r);
                for c in 0..self.cols {
                    if words[c / WORD] >> (c % WORD) & 1 == 1 {
                        data[r * self.cols + c] |= 1 << b;
                    }
                }
            }
        }
        IntMatrix::new(self.rows, self.cols, data).expect("shape")
    }

    fn nonzero_mask(&self, row: usize) -> Vec<u64> {
        let mut mask = vec![0u64; self.words];
        for b in 0..self.bits {
            for (m, w) in mask.iter_mut().zip(self.plane_row(b, row)) {
                *m |= w;
            }
        }
        mask
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::invalid(format!("bit width {bits} outside 1..=16")));
    }
    Ok(())
}

/// Splits codes in `[0, 2^bits - 1]` into `bits` packed planes.
pub fn pack_bitplanes(codes: &IntMatrix, bits: u32) -> Result<BitPlanes> {
    check_bits(bits)?;
    let max = (1i64 << bits) - 1;
    if let Some((i, &c)) = codes.data().iter().enumerate().find(|(_, &c)| c < 0 || c as i64 > max) {
        return Err(Error::CodeOutOfRange { code: c as i64, index: i, max });
    }
    Ok(pack_unchecked(codes.rows(), codes.cols(), codes.cols().div_ceil(WORD), bits, |r, c| {
        codes.get(r, c) as u32
    }))
}

fn pack_unchecked(rows: usize, cols: usize, words: usize, bits: u32, code: impl Fn(usize, usize) -> u32) -> BitPlanes {
    let mut planes = vec![0u64; bits as usize * rows * words];
    for r in 0..rows {
        for c in 0..cols {
            let v = code(r, c);
            for b in 0..bits {
                if v >> b & 1 == 1 {
                    planes[(b as usize * rows + r) * words + c / WORD] |= 1 << (c % WORD);
                }
            }
        }
    }
    BitPlanes { rows, cols, bits, words, planes }
}

/// Row-major product with an event count.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmResult<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
    /// Multiply-accumulates with both operands nonzero (bit-serial) or
    /// weight rows added per spike (event-driven).
    pub accumulated_events: u64,
}

impl<T: Copy> GemmResult<T> {
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }
}

impl GemmResult<f64> {
    pub fn to_tensor(&self) -> Result<Tensor2D> {
        Tensor2D::new(self.rows, self.cols, self.values.clone())
    }
}

impl GemmResult<i64> {
    pub fn to_tensor(&self) -> Result<Tensor2D> {
        Tensor2D::new(self.rows, self.cols, self.values.iter().map(|&v| v as f64).collect())
    }
}

#[inline]
fn plane_dot(a: &BitPlanes, ar: usize, w: &BitPlanes, wr: usize, words: Range<usize>) -> i64 {
    let mut acc = 0i64;
    for i in 0..a.bits {
        let pa = &a.plane_row(i, ar)[words.clone()];
        for j in 0..w.bits {
            let pw = &w.plane_row(j, wr)[words.clone()];
            let pop: u32 = pa.iter().zip(pw).map(|(x, y)| (x & y).count_ones()).sum();
            acc += (pop as i64) << (i + j);
        }
    }
    acc
}

/// `A · Wᵀ` for codes `a` (rows × inner) and `w` (out × inner).
pub fn bitserial_gemm(a: &BitPlanes, w: &BitPlanes) -> Result<GemmResult<i64>> {
    if a.cols != w.cols {
        return Err(Error::shape(format!("inner dims {} vs {}", a.cols, w.cols)));
    }
    if a.cols >= MAX_INNER {
        return Err(Error::invalid("inner dimension too large for 64-bit accumulation"));
    }
    let (rows, cols) = (a.rows, w.rows);
    let w_masks: Vec<Vec<u64>> = (0..cols).map(|o| w.nonzero_mask(o)).collect();
    let mut values = vec![0i64; rows * cols];
    let events: u64 = values
        .par_chunks_mut(cols.max(1))
        .enumerate()
        .map(|(r, out)| {
            let am = a.nonzero_mask(r);
            let mut ev = 0u64;
            for (o, v) in out.iter_mut().enumerate() {
                *v = plane_dot(a, r, w, o, 0..a.words);
                ev += am.iter().zip(&w_masks[o]).map(|(x, y)| (x & y).count_ones() as u64).sum::<u64>();
            }
            ev
        })
        .sum();
    Ok(GemmResult { rows, cols, values, accumulated_events: events })
}

/// Naive `A · Wᵀ` on integer codes.
pub fn reference_int_gemm(a: &IntMatrix, w: &IntMatrix) -> Result<Vec<i64>> {
    if a.cols() != w.cols() {
        return Err(Error::shape(format!("inner dims {} vs {}", a.cols(), w.cols())));
    }
    let mut out = vec![0i64; a.rows() * w.rows()];
    out.par_chunks_mut(w.rows().max(1)).enumerate().for_each(|(r, row)| {
        for (o, v) in row.iter_mut().enumerate() {
            *v = a.row(r).iter().zip(w.row(o)).map(|(&x, &y)| x as i64 * y as i64).sum();
        }
    });
    Ok(out)
}

/// `A · B` with a fixed left-to-right accumulation over the inner index.
pub fn reference_gemm(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let bt = b.transpose();
    let n = b.cols();
    let mut out = vec![0.0; a.rows() * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let ai = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (x, y) in ai.iter().zip(bt.row(j)) {
                s += x * y;
            }
            *v = s;
        }
    });
    Tensor2D::new(a.rows(), n, out)
}

/// Column segment of the expanded layout: one weight group and one step class.
struct Segment {
    channels: Vec<usize>,
    words: Range<usize>,
}

fn weight_group(w: &QuantizedTensor, c: usize) -> usize {
    use crate::quant::Granularity::*;
    match w.granularity() {
        PerToken => 0,
        PerChannel => c,
        PerGroup(g) => c / g,
    }
}

/// Mixed-step activations times quantized weights, `Ŵ · X̂ᵀ` (out × tokens).
///
/// `x` must be a merged train with one zero point per token and step
/// counts fixed per channel; `w` holds asymmetric codes for an out × channels
/// matrix. Each segment (weight group, step class) is padded to whole words
/// and evaluated as an integer bit-serial GEMM on the duplicated columns:
///
/// `Y[o,t] = Σ_seg δ_seg[t] (Δ[o,g] I_seg[o,t] + μ[o,g] S_seg[t]) + z[t] Σ_c Ŵ[o,c]`
///
/// where `I_seg` is the integer product and `S_seg` the code sum of the segment.
pub fn mixed_step_gemm(x: &SpikeTrain, w: &QuantizedTensor, plan: &ChannelPlan) -> Result<GemmResult<f64>> {
    if x.form() != SpikeForm::Merged {
        return Err(Error::Form { expected: "merged", found: x.form().name() });
    }
    let (tokens, channels) = (x.tokens(), x.channels());
    let wc = w.codes();
    if wc.cols() != channels {
        return Err(Error::shape(format!("weights have {} columns, activations {channels} channels", wc.cols())));
    }
    if plan.channels() != channels || !matches!(plan.granularity(), PlanGranularity::Structured) {
        return Err(Error::invalid("mixed-step GEMM needs a structured plan over the activation channels"));
    }
    if x.groups() != 1 {
        return Err(Error::invalid("mixed-step GEMM needs one zero point per token"));
    }
    for t in 0..tokens {
        for c in 0..channels {
            if x.neuron_steps(t, c) != plan.steps_for(t, c) {
                return Err(Error::invalid(format!("neuron ({t}, {c}) disagrees with the plan")));
            }
        }
    }
    if w.bits() > 16 || x.levels() > 1 << 16 {
        return Err(Error::invalid("operand codes wider than 16 bits"));
    }

    // Segments in weight-group order, then ascending step class.
    let mut keys: Vec<(usize, u32, usize)> =
        (0..channels).map(|c| (weight_group(w, c), plan.steps_for(0, c), c)).collect();
    keys.sort_unstable();
    let mut segments: Vec<Segment> = Vec::new();
    let mut seg_steps: Vec<u32> = Vec::new();
    let mut words = 0usize;
    let mut i = 0;
    while i < keys.len() {
        let (g, s, _) = keys[i];
        let mut j = i;
        while j < keys.len() && keys[j].0 == g && keys[j].1 == s {
            j += 1;
        }
        let chans: Vec<usize> = keys[i..j].iter().map(|k| k.2).collect();
        let len = (chans.len() * s as usize).div_ceil(WORD);
        segments.push(Segment { channels: chans, words: words..words + len });
        seg_steps.push(s);
        words += len;
        i = j;
    }
    let inner = words * WORD;
    if inner >= MAX_INNER {
        return Err(Error::invalid("expanded inner dimension too large"));
    }

    // Expanded column -> (channel, step) map, with padding columns as None.
    let mut column: Vec<Option<(usize, usize)>> = vec![None; inner];
    for (seg, &s) in segments.iter().zip(&seg_steps) {
        let mut col = seg.words.start * WORD;
        for &c in &seg.channels {
            for step in 0..s as usize {
                column[col] = Some((c, step));
                col += 1;
            }
        }
    }
    let abits = bits_for_levels(x.levels());
    let a = pack_unchecked(tokens, inner, words, abits, |t, k| match column[k] {
        Some((c, s)) => x.neuron_codes(t, c)[s] as u32,
        None => 0,
    });
    let wp = pack_unchecked(wc.rows(), inner, words, w.bits(), |o, k| match column[k] {
        Some((c, _)) => wc.get(o, c) as u32,
        None => 0,
    });

    let out = wc.rows();
    let w_hat = w.dequantize();
    let rowsum: Vec<f64> = (0..out).map(|o| w_hat.row(o).iter().sum()).collect();
    let w_masks: Vec<Vec<u64>> = (0..out).map(|o| wp.nonzero_mask(o)).collect();
    let mut values = vec![0.0; out * tokens];
    let per_token: Vec<(Vec<f64>, u64)> = (0..tokens)
        .into_par_iter()
        .map(|t| {
            let sums: Vec<f64> = segments
                .iter()
                .map(|seg| seg.channels.iter().map(|&c| x.total(t, c)).sum::<i64>() as f64)
                .collect();
            let am = a.nonzero_mask(t);
            let mut col = vec![0.0; out];
            let mut ev = 0u64;
            for (o, y) in col.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (seg, &s_sum) in segments.iter().zip(&sums) {
                    let c0 = seg.channels[0];
                    let delta = x.neuron_scale(t, c0);
                    let i_seg = plane_dot(&a, t, &wp, o, seg.words.clone()) as f64;
                    acc += delta * (w.scale_at(o, c0) * i_seg + w.zero_at(o, c0) * s_sum);
                }
                *y = acc + x.zero_point(t, 0) * rowsum[o];
                ev += am.iter().zip(&w_masks[o]).map(|(p, q)| (p & q).count_ones() as u64).sum::<u64>();
            }
            (col, ev)
        })
        .collect();
    let mut events = 0;
    for (t, (col, ev)) in per_token.into_iter().enumerate() {
        for (o, v) in col.into_iter().enumerate() {
            values[o * tokens + t] = v;
        }
        events += ev;
    }
    Ok(GemmResult { rows: out, cols: tokens, values, accumulated_events: events })
}

/// Accumulate-only `W · X̂ᵀ` (out × tokens) over an expanded spike train.
///
/// Every nonzero spike at `(t, c)` adds (or, for a `-1` spike, subtracts)
/// column `c` of `w` into the accumulator of its scale class; zero slots do
/// no work. Class sums are scaled once per token and the zero-point term
/// `Σ_c w[o,c] z(t,c)` is added. `accumulated_events` is the number of
/// nonzero spikes times the output width.
pub fn event_driven_gemm(x: &SpikeTrain, w: &Tensor2D) -> Result<GemmResult<f64>> {
    if x.form() == SpikeForm::Merged {
        return Err(Error::Form { expected: "expanded-binary or expanded-ternary", found: x.form().name() });
    }
    let (tokens, channels) = (x.tokens(), x.channels());
    if w.cols() != channels {
        return Err(Error::shape(format!("weights have {} columns, spikes {channels} channels", w.cols())));
    }
    let out = w.rows();
    let wt = w.transpose();
    let gs = x.group_size();
    let groups = x.groups();
    // Zero-point term per group: Σ_{c in g} w[o, c].
    let group_sums: Vec<Vec<f64>> = (0..groups)
        .map(|g| {
            (0..out).map(|o| w.row(o)[g * gs..((g + 1) * gs).min(channels)].iter().sum::<f64>()).collect()
        })
        .collect();
    let per_token: Vec<Vec<f64>> = (0..tokens)
        .into_par_iter()
        .map(|t| {
            let mut scales: Vec<f64> = Vec::new();
            let mut acc: Vec<Vec<f64>> = Vec::new();
            for c in 0..channels {
                if x.neuron_codes(t, c).iter().all(|&k| k == 0) {
                    continue;
                }
                let delta = x.neuron_scale(t, c);
                let b = match scales.iter().position(|&s| s == delta) {
                    Some(b) => b,
                    None => {
                        scales.push(delta);
                        acc.push(vec![0.0; out]);
                        scales.len() - 1
                    }
                };
                let col = wt.row(c);
                for &k in x.neuron_codes(t, c) {
                    match k {
                        1 => acc[b].iter_mut().zip(col).for_each(|(a, v)| *a += v),
                        -1 => acc[b].iter_mut().zip(col).for_each(|(a, v)| *a -= v),
                        _ => {}
                    }
                }
            }
            let mut y = vec![0.0; out];
            for (s, a) in scales.iter().zip(&acc) {
                for (yo, v) in y.iter_mut().zip(a) {
                    *yo += s * v;
                }
            }
            for (g, sums) in group_sums.iter().enumerate() {
                let z = x.zero_points()[t * groups + g];
                for (yo, v) in y.iter_mut().zip(sums) {
                    *yo += z * v;
                }
            }
            y
        })
        .collect();
    let mut values = vec![0.0; out * tokens];
    for (t, y) in per_token.into_iter().enumerate() {
        for (o, v) in y.into_iter().enumerate() {
            values[o * tokens + t] = v;
        }
    }
    let events = x.nonzero_spikes() * out as u64;
    Ok(GemmResult { rows: out, cols: tokens, values, accumulated_events: events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{expand, gif_decode, ternary_encode};
    use crate::quant::{mixed_step_quantize, uniform_quantize, Granularity};
    use crate::neuron::Rounding;
    use crate::rng::{rng_normal, Rng};

    fn random_codes(rng: &mut Rng, rows: usize, cols: usize, bits: u32) -> IntMatrix {
        let data = (0..rows * cols).map(|_| rng.below(1 << bits) as i32).collect();
        IntMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn pack_small() {
        let m = IntMatrix::new(1, 2, vec![3, 1]).unwrap();
        let p = pack_bitplanes(&m, 2).unwrap();
        assert_eq!(p.plane_row(0, 0), &[0b11]);
        assert_eq!(p.plane_row(1, 0), &[0b01]);
        let z = pack_bitplanes(&IntMatrix::zeros(3, 70), 3).unwrap();
        assert!(z.planes.iter().all(|&w| w == 0));
        assert_eq!(z.words_per_row(), 2);
        assert!(matches!(
            pack_bitplanes(&IntMatrix::new(1, 2, vec![0, 4]).unwrap(), 2),
            Err(Error::CodeOutOfRange { code: 4, index: 1, max: 3 })
        ));
        assert!(pack_bitplanes(&IntMatrix::new(1, 1, vec![-1]).unwrap(), 2).is_err());
    }

    #[test]
    fn pack_roundtrip() {
        let mut rng = Rng::new(8);
        for (r, c) in [(64, 64), (3, 65), (1, 1), (5, 128)] {
            let m = random_codes(&mut rng, r, c, 4);
            assert_eq!(pack_bitplanes(&m, 4).unwrap().unpack(), m);
        }
    }

    #[test]
    fn hand_dot() {
        let a = pack_bitplanes(&IntMatrix::new(1, 2, vec![3, 1]).unwrap(), 2).unwrap();
        let w = pack_bitplanes(&IntMatrix::new(1, 2, vec![2, 3]).unwrap(), 2).unwrap();
        let r = bitserial_gemm(&a, &w).unwrap();
        assert_eq!(r.values, vec![9]);
        assert_eq!(r.accumulated_events, 2);
    }

    #[test]
    fn identity_codes() {
        let mut rng = Rng::new(9);
        let m = random_codes(&mut rng, 7, 5, 3);
        let eye = IntMatrix::new(5, 5, (0..25).map(|i| (i % 6 == 0) as i32).collect()).unwrap();
        let r = bitserial_gemm(&pack_bitplanes(&m, 3).unwrap(), &pack_bitplanes(&eye, 1).unwrap()).unwrap();
        assert_eq!(r.values, m.data().iter().map(|&v| v as i64).collect::<Vec<_>>());
    }

    #[test]
    fn bitserial_matches_naive() {
        let mut rng = Rng::new(10);
        let a = random_codes(&mut rng, 32, 48, 4);
        let w = random_codes(&mut rng, 16, 48, 4);
        let r = bitserial_gemm(&pack_bitplanes(&a, 4).unwrap(), &pack_bitplanes(&w, 4).unwrap()).unwrap();
        assert_eq!(r.values, reference_int_gemm(&a, &w).unwrap());
        let nz: u64 = (0..32)
            .flat_map(|t| (0..16).map(move |o| (t, o)))
            .map(|(t, o)| (0..48).filter(|&k| a.get(t, k) != 0 && w.get(o, k) != 0).count() as u64)
            .sum();
        assert_eq!(r.accumulated_events, nz);
        assert!(bitserial_gemm(&pack_bitplanes(&a, 4).unwrap(), &pack_bitplanes(&a.clone(), 4).unwrap()).is_ok());
        let bad = random_codes(&mut rng, 2, 47, 4);
        assert!(bitserial_gemm(&pack_bitplanes(&a, 4).unwrap(), &pack_bitplanes(&bad, 4).unwrap()).is_err());
    }

    #[test]
    fn reference_cases() {
        let mut rng = Rng::new(11);
        let m = rng_normal(&mut rng, 4, 6, 0.0, 1.0);
        assert_eq!(reference_gemm(&Tensor2D::identity(4), &m).unwrap(), m);
        let p = reference_gemm(&Tensor2D::filled(1, 1, 3.0), &Tensor2D::filled(1, 1, -2.5)).unwrap();
        assert_eq!(p.data(), &[-7.5]);
        let a = rng_normal(&mut rng, 8, 8, 0.0, 1.0);
        let b = rng_normal(&mut rng, 8, 8, 0.0, 1.0);
        let v = rng_normal(&mut rng, 8, 1, 0.0, 1.0);
        let left = reference_gemm(&reference_gemm(&a, &b).unwrap(), &v).unwrap();
        let right = reference_gemm(&a, &reference_gemm(&b, &v).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
        assert!(reference_gemm(&a, &Tensor2D::zeros(7, 2)).is_err());
    }

    fn rel(a: &Tensor2D, b: &Tensor2D) -> f64 {
        a.max_abs_diff(b).unwrap() / b.max_abs().max(f64::MIN_POSITIVE)
    }

    fn setup(seed: u64, salient: &[usize], steps: u32) -> (SpikeTrain, QuantizedTensor, ChannelPlan, Tensor2D) {
        let mut rng = Rng::new(seed);
        let x = rng_normal(&mut rng, 12, 150, 0.3, 1.0);
        let w = rng_normal(&mut rng, 9, 150, 0.0, 0.2);
        let plan = ChannelPlan::structured(150, salient.iter().copied(), steps, 16).unwrap();
        let s = mixed_step_quantize(&x, &plan).unwrap();
        let q = uniform_quantize(&w, 4, Granularity::PerGroup(128), Rounding::Nearest).unwrap();
        let want = reference_gemm(&q.dequantize(), &gif_decode(&s).transpose()).unwrap();
        (s, q, plan, want)
    }

    #[test]
    fn mixed_gemm_matches_dequantized() {
        let (s, q, plan, want) = setup(12, &[3, 50, 129, 149], 2);
        let got = mixed_step_gemm(&s, &q, &plan).unwrap().to_tensor().unwrap();
        assert!(rel(&got, &want) < 1e-9);
        let (s, q, plan, want) = setup(13, &[], 2);
        assert!(rel(&mixed_step_gemm(&s, &q, &plan).unwrap().to_tensor().unwrap(), &want) < 1e-9);
        let all: Vec<usize> = (0..150).collect();
        let (s, q, plan, want) = setup(14, &all, 4);
        assert!(rel(&mixed_step_gemm(&s, &q, &plan).unwrap().to_tensor().unwrap(), &want) < 1e-9);
    }

    #[test]
    fn mixed_gemm_rejects_inconsistent_plan() {
        let (s, q, _, _) = setup(15, &[1], 2);
        let other = ChannelPlan::structured(150, [2], 2, 16).unwrap();
        assert!(mixed_step_gemm(&s, &q, &other).is_err());
    }

    #[test]
    fn event_matches_mixed() {
        let (s, q, plan, want) = setup(16, &[0, 7, 140], 2);
        let e = event_driven_gemm(&expand(&s).unwrap(), &q.dequantize()).unwrap();
        assert!(rel(&e.to_tensor().unwrap(), &want) < 1e-9);
        assert_eq!(e.accumulated_events, expand(&s).unwrap().nonzero_spikes() * 9);
        assert!(event_driven_gemm(&s, &q.dequantize()).is_err());
        let m = mixed_step_gemm(&s, &q, &plan).unwrap().to_tensor().unwrap();
        assert!(rel(&e.to_tensor().unwrap(), &m) < 1e-9);
    }

    #[test]
    fn event_zero_and_single_spike() {
        let x = Tensor2D::filled(2, 3, 1.5);
        let s = expand(&crate::neuron::gif_encode(&x, 2, 4).unwrap()).unwrap();
        let w = Tensor2D::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]]).unwrap();
        let r = event_driven_gemm(&s, &w).unwrap();
        assert_eq!(r.accumulated_events, 0);
        assert_eq!(r.values, vec![9.0, 9.0, 0.0, 0.0]);

        let t = ternary_encode(&[0.0, 0.5, 0.0], &[1, 1, 1], 0.5).unwrap();
        let r = event_driven_gemm(&t, &w).unwrap();
        assert_eq!(r.values, vec![1.0, 0.0]);
        assert_eq!(r.accumulated_events, 2);
        let neg = ternary_encode(&[0.0, -0.5, 0.0], &[1, 1, 1], 0.5).unwrap();
        assert_eq!(event_driven_gemm(&neg, &w).unwrap().values, vec![-1.0, 0.0]);
    }

    #[test]
    fn thread_count_independence() {
        let (s, q, plan, _) = setup(17, &[5, 6, 90], 4);
        let run = |n| {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| {
                (mixed_step_gemm(&s, &q, &plan).unwrap(), event_driven_gemm(&expand(&s).unwrap(), &q.dequantize()).unwrap())
            })
        };
        assert_eq!(run(1), run(8));
    }
}
