//! Optimal Brain Spiking channel saliency.
//!
//! Activations are scored by the first-order term `X ∘ WᵀWX` of the
//! layerwise objective `‖WX - Q(W)Q(X)‖²`, weights by the second-order
//! `W² / ([H⁻¹]_ii)²` with `H = 2XXᵀ`. Scores are reduced to one value per
//! channel and the top fraction of channels is selected.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::reference_gemm;
use crate::linalg::spd_inverse;
use crate::rng::Rng;
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ActivationGradient,
    WeightHessian,
    Random,
    /// Caller-supplied scores.
    External,
}

/// Which axis of a saliency matrix indexes channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelAxis {
    /// Channels are rows (activations, channels × tokens).
    Rows,
    /// Channels are columns (weights, out × in).
    Cols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub metric: Metric,
    pub per_channel: Vec<f64>,
    /// Channel indices by descending score, ties by ascending index.
    pub rank: Vec<usize>,
    /// Selected channels, ascending.
    pub selected: Vec<usize>,
    pub ratio: f64,
}

impl SaliencyReport {
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn is_selected(&self, c: usize) -> bool {
        self.selected.binary_search(&c).is_ok()
    }

    /// Writes `channel,score,rank,selected`, one row per channel in index order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut pos = vec![0usize; self.rank.len()];
        for (r, &c) in self.rank.iter().enumerate() {
            pos[c] = r;
        }
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("CSV output: {e}"));
        w.write_record(["channel", "score", "rank", "selected"]).map_err(io)?;
        for (c, score) in self.per_channel.iter().enumerate() {
            let sel = if self.is_selected(c) { "1" } else { "0" };
            w.write_record([c.to_string(), score.to_string(), pos[c].to_string(), sel.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("CSV output: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub dim: usize,
    pub values: Tensor2D,
    pub damping: f64,
}

/// `X ∘ (Wᵀ(WX))` for `X` channels × tokens and `W` out × channels.
pub fn activation_saliency(x: &Tensor2D, w: &Tensor2D) -> Result<Tensor2D> {
    if w.cols() != x.rows() {
        return Err(Error::shape(format!("W has {} columns, X has {} channels", w.cols(), x.rows())));
    }
    let wx = reference_gemm(w, x)?;
    let g = reference_gemm(&w.transpose(), &wx)?;
    x.hadamard(&g)
}

/// `2XXᵀ + λI` with `λ = damping_frac · mean(diag(2XXᵀ))`.
pub fn hessian(x: &Tensor2D, damping_frac: f64) -> Result<HessianMatrix> {
    if x.is_empty() {
        return Err(Error::invalid("empty calibration matrix"));
    }
    if !(damping_frac >= 0.0 && damping_frac.is_finite()) {
        return Err(Error::invalid(format!("damping {damping_frac} must be finite and non-negative")));
    }
    let n = x.rows();
    let mut h = reference_gemm(x, &x.transpose())?.scale(2.0);
    // Mirror the lower triangle so the matrix is exactly symmetric.
    for i in 0..n {
        for j in 0..i {
            let v = h.get(i, j);
            h.set(j, i, v);
        }
    }
    let mean_diag = (0..n).map(|i| h.get(i, i)).sum::<f64>() / n as f64;
    let damping = damping_frac * mean_diag;
    for i in 0..n {
        h.set(i, i, h.get(i, i) + damping);
    }
    Ok(HessianMatrix { dim: n, values: h, damping })
}

/// `S_ij = W_ij² / ([H⁻¹]_jj)²`; fails if `H` is not positive definite.
pub fn weight_saliency(w: &Tensor2D, h: &HessianMatrix) -> Result<Tensor2D> {
    if h.dim != w.cols() {
        return Err(Error::shape(format!("Hessian dim {} vs {} weight columns", h.dim, w.cols())));
    }
    let inv = spd_inverse(&h.values)?;
    let d: Vec<f64> = (0..h.dim).map(|i| inv.get(i, i)).collect();
    Tensor2D::from_fn(w.rows(), w.cols(), |r, c| w.get(r, c).powi(2) / (d[c] * d[c]))
}

/// Mean of `|S|` over the non-channel axis.
pub fn aggregate_per_channel(s: &Tensor2D, axis: ChannelAxis) -> Vec<f64> {
    match axis {
        ChannelAxis::Rows => {
            (0..s.rows()).map(|r| s.row(r).iter().map(|v| v.abs()).sum::<f64>() / s.cols().max(1) as f64).collect()
        }
        ChannelAxis::Cols => {
            let mut acc = vec![0.0; s.cols()];
            for r in 0..s.rows() {
                for (a, v) in acc.iter_mut().zip(s.row(r)) {
                    *a += v.abs();
                }
            }
            acc.iter().map(|a| a / s.rows().max(1) as f64).collect()
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("ratio {ratio} outside [0, 1]")));
    }
    Ok(())
}

/// Number of channels selected at `ratio`, `round(ratio · n)`.
pub fn selected_count(channels: usize, ratio: f64) -> usize {
    ((ratio * channels as f64).round() as usize).min(channels)
}

/// Ranks `scores` and keeps the top `round(ratio · n)` channels.
pub fn select_salient(scores: &[f64], ratio: f64) -> Result<SaliencyReport> {
    check_ratio(ratio)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut rank: Vec<usize> = (0..scores.len()).collect();
    rank.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut selected = rank[..selected_count(scores.len(), ratio)].to_vec();
    selected.sort_unstable();
    Ok(SaliencyReport { metric: Metric::External, per_channel: scores.to_vec(), rank, selected, ratio })
}

/// Random-Spike baseline: a uniformly random subset reported with
/// synthetic descending scores so that `rank` lists it first.
pub fn random_plan(channels: usize, ratio: f64, rng: &mut Rng) -> Result<SaliencyReport> {
    check_ratio(ratio)?;
    let perm = rng.permutation(channels);
    let mut per_channel = vec![0.0; channels];
    for (pos, &c) in perm.iter().enumerate() {
        per_channel[c] = (channels - pos) as f64;
    }
    Ok(select_salient(&per_channel, ratio)?.with_metric(Metric::Random))
}
