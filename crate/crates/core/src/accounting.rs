//! Operation-cost metrics.
//!
//! ACE (arithmetic computation effort) counts binary operations as
//! `MACs × weight bits × activation bits`. Sparse ACE evaluates the same
//! count on the expanded 1-bit spike form and keeps only nonzero spikes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{SpikeForm, SpikeTrain};
use crate::quant::ChannelPlan;

/// Reference precision of the dense baseline.
pub const FP_BITS: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub macs: u64,
    pub bits_weight: f64,
    pub bits_act: f64,
    pub ace: f64,
    pub ace_ratio_vs_fp16: f64,
    pub sparse_ace: f64,
    /// Fraction of nonzero spikes in the expanded form.
    pub sparsity: f64,
    pub equal_steps: f64,
    pub code_bits_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accumulated_events: Option<u64>,
}

impl OpsReport {
    /// Dense report; sparse fields start at their dense values.
    pub fn new(macs: u64, bits_weight: f64, bits_act: f64) -> Self {
        let a = ace(macs as f64, bits_weight, bits_act);
        Self {
            macs,
            bits_weight,
            bits_act,
            ace: a,
            ace_ratio_vs_fp16: round_sig(ace_ratio(bits_weight, bits_act, FP_BITS), 3),
            sparse_ace: a,
            sparsity: 1.0,
            equal_steps: 1.0,
            code_bits_total: 0.0,
            accumulated_events: None,
        }
    }
}

pub fn ace(macs: f64, bits_weight: f64, bits_act: f64) -> f64 {
    macs * bits_weight * bits_act
}

/// ACE per MAC relative to a `fp_bits × fp_bits` baseline.
pub fn ace_ratio(bits_weight: f64, bits_act: f64, fp_bits: f64) -> f64 {
    bits_weight * bits_act / (fp_bits * fp_bits)
}

/// Average bits per element on the side encoded with `plan`.
pub fn plan_bits(plan: &ChannelPlan, bits_per_step: f64) -> f64 {
    bits_per_step * plan.mean_steps()
}

/// `bits_per_step (1 + r (T' - 1)) · other_side_bits / fp_bits²`.
pub fn mixed_ace_ratio(plan: &ChannelPlan, bits_per_step: f64, other_side_bits: f64, fp_bits: f64) -> f64 {
    ace_ratio(plan_bits(plan, bits_per_step), other_side_bits, fp_bits)
}

fn require_expanded(s: &SpikeTrain) -> Result<()> {
    if s.form() == SpikeForm::Merged {
        return Err(Error::Form { expected: "expanded-binary or expanded-ternary", found: s.form().name() });
    }
    Ok(())
}

/// Nonzero fraction of the active slots of an expanded train.
pub fn spike_density(expanded: &SpikeTrain) -> Result<f64> {
    require_expanded(expanded)?;
    let active = expanded.total_active_slots();
    Ok(if active == 0 { 0.0 } else { expanded.nonzero_spikes() as f64 / active as f64 })
}

/// `density × (active slots × output_width) × weight_bits × 1`.
pub fn sparse_ace(expanded: &SpikeTrain, weight_bits: f64, output_width: usize) -> Result<f64> {
    let density = spike_density(expanded)?;
    let dense = ace(expanded.total_active_slots() as f64 * output_width as f64, weight_bits, 1.0);
    Ok(density * dense)
}

/// `Σ f_i · steps_i`; the fractions must sum to one within 1e-9.
pub fn equal_steps(fractions: &[f64], steps: &[u32]) -> Result<f64> {
    if fractions.len() != steps.len() {
        return Err(Error::shape(format!("{} fractions vs {} step counts", fractions.len(), steps.len())));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("fractions must lie in [0, 1]"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("fractions sum to {sum}, not 1")));
    }
    Ok(fractions.iter().zip(steps).map(|(f, &s)| f * s as f64).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeScheme {
    /// Binary IF spikes over `T` steps.
    If,
    /// `T / L` merged GIF steps of `log2 L` bits.
    Gif,
    /// Plain `T`-level quantization.
    Quant,
    /// GIF with a salient fraction `ratio` on `T' = T / L` steps, the rest on one.
    Mixed,
}

/// Bits needed to carry one value under `scheme`.
pub fn code_length(scheme: CodeScheme, t: u32, l: u32, ratio: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    if matches!(scheme, CodeScheme::Gif | CodeScheme::Mixed) && l < 2 {
        return Err(Error::invalid("L must be at least 2"));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("ratio {ratio} outside [0, 1]")));
    }
    let (t, l) = (t as f64, l as f64);
    Ok(match scheme {
        CodeScheme::If => t,
        CodeScheme::Gif => t / l * l.log2(),
        CodeScheme::Quant => t.log2(),
        CodeScheme::Mixed => l.log2() * (1.0 + ratio * (t / l - 1.0)),
    })
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let k = digits as i32 - 1 - x.abs().log10().floor() as i32;
    let p = 10f64.powi(k);
    (x * p).round() / p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{expand, gif_encode};
    use crate::rng::{rng_normal, Rng};
    use crate::tensor::Tensor2D;

    #[test]
    fn ace_products() {
        assert_eq!(ace(1.0, 4.0, 4.0), 16.0);
        assert_eq!(ace_ratio(4.0, 4.0, 16.0), 0.0625);
        assert_eq!(ace(10.0, 0.0, 8.0), 0.0);
        assert_eq!(ace(256.0, 2.0, 8.0), 4096.0);
        assert_eq!(ace(6.0, 2.0, 3.0), 2.0 * ace(3.0, 2.0, 3.0));
    }

    #[test]
    fn mixed_ratios() {
        let p = ChannelPlan::structured(10, [0], 2, 16).unwrap();
        assert_eq!(round_sig(mixed_ace_ratio(&p, 4.0, 4.0, 16.0), 3), 0.0688);
        assert_eq!(round_sig(mixed_ace_ratio(&p, 2.0, 16.0, 16.0), 3), 0.138);
        let none = ChannelPlan::structured(10, [], 2, 16).unwrap();
        assert_eq!(mixed_ace_ratio(&none, 4.0, 4.0, 16.0), ace_ratio(4.0, 4.0, 16.0));
        let mut last = 0.0;
        for k in 0..=10 {
            for steps in [1, 2, 4] {
                let r = mixed_ace_ratio(&ChannelPlan::structured(10, 0..k, steps, 16).unwrap(), 4.0, 4.0, 16.0);
                assert!(r >= ace_ratio(4.0, 4.0, 16.0));
                if steps == 4 {
                    assert!(r >= last);
                    last = r;
                }
            }
        }
    }

    #[test]
    fn sparse_ace_counts() {
        let zeros = expand(&gif_encode(&Tensor2D::zeros(3, 4), 2, 4).unwrap()).unwrap();
        assert_eq!(sparse_ace(&zeros, 4.0, 5).unwrap(), 0.0);
        // every token's max channel fires in all slots
        let ones = expand(&gif_encode(&Tensor2D::from_rows(&[[0.0, 1.0]]).unwrap(), 2, 4).unwrap()).unwrap();
        assert_eq!(ones.nonzero_spikes(), 6);
        assert_eq!(sparse_ace(&ones, 4.0, 5).unwrap(), 6.0 * 5.0 * 4.0);
        let mut rng = Rng::new(3);
        let s = expand(&gif_encode(&rng_normal(&mut rng, 8, 16, 0.0, 1.0), 2, 16).unwrap()).unwrap();
        let density = s.nonzero_spikes() as f64 / (8 * 16 * 30) as f64;
        let dense = (8 * 16 * 30 * 7) as f64 * 2.0;
        assert!((sparse_ace(&s, 2.0, 7).unwrap() - density * dense).abs() <= 1e-9 * dense);
        assert!(sparse_ace(&gif_encode(&Tensor2D::zeros(1, 1), 1, 2).unwrap(), 2.0, 1).is_err());
    }

    #[test]
    fn equal_steps_values() {
        let st = [1, 2, 4];
        assert!((equal_steps(&[0.7, 0.25, 0.05], &st).unwrap() - 1.4).abs() < 1e-12);
        assert!((equal_steps(&[0.8, 0.15, 0.05], &st).unwrap() - 1.3).abs() < 1e-12);
        assert!((equal_steps(&[0.85, 0.1, 0.05], &st).unwrap() - 1.25).abs() < 1e-12);
        assert!((equal_steps(&[0.9, 0.05, 0.05], &st).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(equal_steps(&[1.0, 0.0, 0.0], &st).unwrap(), 1.0);
        assert!(equal_steps(&[0.5, 0.4, 0.05], &st).is_err());
    }

    #[test]
    fn code_lengths() {
        assert_eq!(code_length(CodeScheme::Gif, 32, 16, 0.0).unwrap(), 8.0);
        assert_eq!(code_length(CodeScheme::Quant, 16, 0, 0.0).unwrap(), 4.0);
        assert_eq!(code_length(CodeScheme::If, 32, 0, 0.0).unwrap(), 32.0);
        assert!((code_length(CodeScheme::Mixed, 32, 16, 0.1).unwrap() - 4.4).abs() < 1e-12);
        for l in [2, 4, 8, 16] {
            for t in [l, 2 * l, 8 * l] {
                let g = code_length(CodeScheme::Gif, t, l, 0.0).unwrap();
                let i = code_length(CodeScheme::If, t, l, 0.0).unwrap();
                assert!(g <= i);
                if l == 2 {
                    // one merged step carries two IF steps in one bit
                    assert_eq!(g, i / 2.0);
                }
            }
        }
    }

    #[test]
    fn significant_figures() {
        assert_eq!(round_sig(0.06875, 3), 0.0688);
        assert_eq!(round_sig(0.1375, 3), 0.138);
        assert_eq!(round_sig(0.0625, 3), 0.0625);
        assert_eq!(round_sig(1234.5, 2), 1200.0);
        assert_eq!(round_sig(0.0, 3), 0.0);
    }

    #[test]
    fn report_serializes() {
        let r = OpsReport::new(100, 4.0, 4.4);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["ace_ratio_vs_fp16"], 0.0688);
        assert!(v.get("accumulated_events").is_none());
    }
}
