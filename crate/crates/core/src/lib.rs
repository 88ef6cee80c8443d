//! Saliency-aware spiking quantization.
//!
//! GIF (generalized integrate-and-fire) encoders turn activations into
//! multi-level spike trains that are exactly equivalent to asymmetric
//! uniform quantization; salient channels, ranked by Optimal Brain Spiking
//! saliency, get more spiking steps. Bit-serial and event-driven kernels
//! evaluate the resulting products and [`accounting`] reports their cost.

pub mod accounting;
pub mod cli;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod neuron;
pub mod quant;
pub mod rng;
pub mod saliency;
pub mod spkt;
pub mod tensor;

pub use error::{Error, Result, SpktError};
pub use neuron::{SpikeForm, SpikeTrain, TokenQuantParams};
pub use quant::{ChannelPlan, Granularity, QuantizedTensor};
pub use rng::Rng;
pub use saliency::SaliencyReport;
pub use tensor::{IntMatrix, Tensor2D};
