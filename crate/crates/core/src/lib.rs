//! Behavioral simulator of an ADC-less, global-shutter processing-in-pixel
//! front end built on voltage-controlled magnetic tunnel junctions (VC-MTJs).
//!
//! The pipeline, bottom up:
//!
//! * [`mtj`]: two-state junction with a tabulated switching probability.
//! * [`pixel`]: weight-augmented pixel MAC and the two-phase subtractor.
//! * [`neuron`]: replicated-junction neuron with majority vote.
//! * [`bnn`]: the binary-activation first layer and its backends.
//! * [`metrics`]: bandwidth, energy and frame-time models.
//! * [`io`]: configuration, weight container, images and raw Bayer frames.
//! * [`toy`]: a small synthetic classification task for error sweeps.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mtj;
pub mod neuron;
pub mod pixel;
pub mod reference;
pub mod rng;
pub mod toy;

pub use bnn::{
    binary_activate, forward_first_layer, fuse_batchnorm, hoyer_extremum, inject_errors, ActivationTensor, Backend,
    BatchNorm, BinaryTensor, ConvWeights, ErrorInjection, FirstLayer, FrameOutput, HardwareModel, Image, LayerSpec,
    ThresholdMode,
};
pub use error::{Error, Result};
pub use io::config::SimConfig;
pub use metrics::{
    compression_ratio, frame_time, frontend_energy, sparse_coded_bits, Architecture, EnergyConfig, GeometrySpec,
    RatioOrientation, TimingConfig,
};
pub use mtj::{Interpolation, MtjDevice, MtjState, ResistanceModel, SwitchingProfile};
pub use neuron::{bank_error_rate, mc_bank_error_rate, BankConfig, ErrorMode, NeuronBank};
pub use pixel::{unit_convolve, SubtractorConfig, TransferCurve};
