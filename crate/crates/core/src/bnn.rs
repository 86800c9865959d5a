//! First-layer binary-activation network.
//!
//! The layer is a valid (or zero-padded) strided convolution, a per-channel
//! batch norm, and a binary threshold. Three backends evaluate it:
//!
//! * [`Backend::Ideal`]: float convolution, batch norm, then
//!   [`binary_activate`].
//! * [`Backend::HardwareCurve`]: batch norm fused into the weights and the
//!   subtractor offset, every output element computed by the pixel circuit
//!   model and compared against the junction switching voltage.
//! * [`Backend::HardwareStochastic`]: as above, but the comparison is made by
//!   writing, burst-reading and resetting a multi-MTJ neuron bank.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtj::{ResistanceModel, SwitchingProfile};
use crate::neuron::{BankConfig, BankStats, NeuronBank};
use crate::pixel::{unit_convolve, KernelUnit, SubtractorConfig, TransferCurve};
use crate::rng::{stream, SimRng};

/// Channel-major image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape {
                expected: format!("{channels}x{height}x{width} samples"),
                actual: format!("{}", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn random<R: Rng + ?Sized>(channels: usize, height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..channels * height * width).map(|_| rng.random::<f64>()).collect();
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Real-valued `(c, h, w)` tensor: pre-activations `u` or normalized `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
}

/// Binary `(c, h, w)` feature map.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryTensor {
    pub dims: (usize, usize, usize),
    pub bits: Vec<bool>,
}

impl BinaryTensor {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            bits: vec![false; dims.0 * dims.1 * dims.2],
        }
    }

    /// Independent bits, each set with probability `density`.
    pub fn random<R: Rng + ?Sized>(dims: (usize, usize, usize), density: f64, rng: &mut R) -> Self {
        Self {
            dims,
            bits: (0..dims.0 * dims.1 * dims.2)
                .map(|_| rng.random::<f64>() < density)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of zeros.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 1.0;
        }
        1.0 - self.count_ones() as f64 / self.bits.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `o = [u / v_th >= 1]`.
    #[default]
    UnitThreshold,
    /// `o = [z >= E(clip(z))]` with `z = u / v_th`.
    HoyerScaled,
}

/// `sum(z^2) / sum(|z|)`; 1 for an all-zero tensor.
pub fn hoyer_extremum(z_clip: &[f64]) -> f64 {
    let (sq, abs) = z_clip
        .iter()
        .fold((0.0, 0.0), |(sq, abs), &z| (sq + z * z, abs + z.abs()));
    if abs == 0.0 {
        1.0
    } else {
        sq / abs
    }
}

/// Normalized threshold that [`binary_activate`] compares `u / v_th`
/// against: 1, or the Hoyer extremum of the clipped tensor.
pub fn threshold_scale(u: &[f64], v_th: f64, mode: ThresholdMode) -> Result<f64> {
    if !(v_th > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive (got {v_th})"
        )));
    }
    Ok(match mode {
        ThresholdMode::UnitThreshold => 1.0,
        ThresholdMode::HoyerScaled => {
            let clipped: Vec<f64> = u.iter().map(|&x| (x / v_th).clamp(0.0, 1.0)).collect();
            hoyer_extremum(&clipped)
        }
    })
}

pub fn binary_activate(u: &ActivationTensor, v_th: f64, mode: ThresholdMode) -> Result<BinaryTensor> {
    let scale = threshold_scale(&u.values, v_th, mode)?;
    Ok(BinaryTensor {
        dims: u.dims,
        bits: u.values.iter().map(|&x| x / v_th >= scale).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl BatchNorm {
    pub const IDENTITY: BatchNorm = BatchNorm {
        gamma: 1.0,
        beta: 0.0,
        mu: 0.0,
        sigma: 1.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        self.gamma * (x - self.mu) / self.sigma + self.beta
    }
}

/// Convolution weights laid out `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub data: Vec<f64>,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels * kernel * kernel {
            return Err(Error::Shape {
                expected: format!("({out_channels},{in_channels},{kernel},{kernel})"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            data,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.patch_len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Folds batch norm into the weights. Returns the scaled weights and the
/// per-channel shift `B = beta - mu * gamma / sigma`, so that
/// `conv(x, w') + B == BN(conv(x, w))`.
pub fn fuse_batchnorm(weights: &ConvWeights, bn: &[BatchNorm]) -> Result<(ConvWeights, Vec<f64>)> {
    if bn.len() != weights.out_channels {
        return Err(Error::Shape {
            expected: format!("{} batch-norm channels", weights.out_channels),
            actual: format!("{}", bn.len()),
        });
    }
    if let Some((c, b)) = bn.iter().enumerate().find(|(_, b)| !(b.sigma > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "batch-norm sigma must be positive (channel {c}: {})",
            b.sigma
        )));
    }
    let n = weights.patch_len();
    let mut fused = weights.clone();
    for (c, b) in bn.iter().enumerate() {
        let s = b.gamma / b.sigma;
        fused.data[c * n..(c + 1) * n].iter_mut().for_each(|w| *w *= s);
    }
    let shift = bn.iter().map(|b| b.beta - b.mu * b.gamma / b.sigma).collect();
    Ok((fused, shift))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// Zero padding on every side.
    pub padding: usize,
    /// Optional non-overlapping max-pool window applied to the bits.
    pub pool: Option<usize>,
    pub v_th: f64,
    pub threshold_mode: ThresholdMode,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            kernel: 3,
            in_channels: 3,
            stride: 2,
            out_channels: 32,
            padding: 0,
            pool: None,
            v_th: 1.0,
            threshold_mode: ThresholdMode::UnitThreshold,
        }
    }
}

impl LayerSpec {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("layer.kernel", self.kernel),
            ("layer.in_channels", self.in_channels),
            ("layer.stride", self.stride),
            ("layer.out_channels", self.out_channels),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be at least 1"));
            }
        }
        if self.pool == Some(0) {
            errors.push("layer.pool window must be at least 1".into());
        }
        if !(self.v_th > 0.0) {
            errors.push(format!("layer.v_th must be positive (got {})", self.v_th));
        }
    }

    /// Convolution output size along one axis.
    pub fn conv_dim(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::Shape {
                expected: format!("input of at least {} (kernel minus padding)", self.kernel),
                actual: format!("{input}"),
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let (h, w) = (self.conv_dim(height)?, self.conv_dim(width)?);
        Ok(match self.pool {
            Some(p) => (self.out_channels, h / p, w / p),
            None => (self.out_channels, h, w),
        })
    }
}

/// Layer geometry plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstLayer {
    pub spec: LayerSpec,
    pub weights: ConvWeights,
    pub bn: Vec<BatchNorm>,
}

impl FirstLayer {
    pub fn new(spec: LayerSpec, weights: ConvWeights, bn: Vec<BatchNorm>) -> Result<Self> {
        let mut errors = Vec::new();
        spec.validate(&mut errors);
        if weights.out_channels != spec.out_channels
            || weights.in_channels != spec.in_channels
            || weights.kernel != spec.kernel
        {
            errors.push(format!(
                "weights ({},{},{},{}) do not match the layer spec ({},{},{},{})",
                weights.out_channels,
                weights.in_channels,
                weights.kernel,
                weights.kernel,
                spec.out_channels,
                spec.in_channels,
                spec.kernel,
                spec.kernel
            ));
        }
        if bn.len() != spec.out_channels {
            errors.push(format!(
                "expected {} batch-norm channels, got {}",
                spec.out_channels,
                bn.len()
            ));
        }
        if bn.iter().any(|b| !(b.sigma > 0.0)) {
            errors.push("batch-norm sigma must be positive".into());
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(Self { spec, weights, bn })
    }

    fn check_image(&self, image: &Image) -> Result<(usize, usize)> {
        if image.channels != self.spec.in_channels {
            return Err(Error::Shape {
                expected: format!("{} input channels", self.spec.in_channels),
                actual: format!("{}", image.channels),
            });
        }
        Ok((self.spec.conv_dim(image.height)?, self.spec.conv_dim(image.width)?))
    }

    /// Receptive field of output `(oy, ox)` in `(c, ky, kx)` order, with
    /// zeros for padded positions.
    pub fn patch_into(&self, image: &Image, oy: usize, ox: usize, out: &mut Vec<f64>) {
        let (k, s, pad) = (self.spec.kernel, self.spec.stride, self.spec.padding as isize);
        out.clear();
        for c in 0..image.channels {
            for ky in 0..k {
                let y = (oy * s + ky) as isize - pad;
                for kx in 0..k {
                    let x = (ox * s + kx) as isize - pad;
                    let inside = y >= 0 && x >= 0 && (y as usize) < image.height && (x as usize) < image.width;
                    out.push(if inside {
                        image.at(c, y as usize, x as usize)
                    } else {
                        0.0
                    });
                }
            }
        }
    }

    /// Raw convolution `conv(x, w)` without batch norm.
    pub fn convolve(&self, image: &Image, weights: &ConvWeights) -> Result<ActivationTensor> {
        let (h, w) = self.check_image(image)?;
        let per_channel = h * w;
        let values = (0..self.spec.out_channels * per_channel)
            .into_par_iter()
            .map_init(Vec::new, |patch, idx| {
                let (c, pos) = (idx / per_channel, idx % per_channel);
                self.patch_into(image, pos / w, pos % w, patch);
                weights.channel(c).iter().zip(patch.iter()).map(|(a, b)| a * b).sum()
            })
            .collect();
        Ok(ActivationTensor {
            dims: (self.spec.out_channels, h, w),
            values,
        })
    }

    /// Batch-normed pre-activations `u`.
    pub fn preactivations(&self, image: &Image) -> Result<ActivationTensor> {
        let mut u = self.convolve(image, &self.weights)?;
        let per_channel = u.dims.1 * u.dims.2;
        for (i, v) in u.values.iter_mut().enumerate() {
            *v = self.bn[i / per_channel].apply(*v);
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Ideal,
    HardwareCurve,
    HardwareStochastic,
}

/// Circuit and device parameters for the hardware backends.
#[derive(Debug, Clone)]
pub struct HardwareModel {
    pub curve: Arc<TransferCurve>,
    pub subtractor: SubtractorConfig,
    pub bank: BankConfig,
    pub resistance: ResistanceModel,
    pub profile: Arc<SwitchingProfile>,
}

impl HardwareModel {
    /// Shipped defaults: fitted curve, built-in switching profile.
    pub fn builtin() -> Result<Self> {
        Ok(Self {
            curve: Arc::new(TransferCurve::fitted_default()),
            subtractor: SubtractorConfig::default(),
            bank: BankConfig::default(),
            resistance: ResistanceModel::default(),
            profile: Arc::new(SwitchingProfile::builtin(0.97)?),
        })
    }

    /// Ideal circuit and a deterministic step-switching junction; the
    /// hardware backends then agree bit-for-bit with [`Backend::Ideal`].
    pub fn ideal_limit() -> Result<Self> {
        let subtractor = SubtractorConfig::default();
        let bank = BankConfig::default();
        Ok(Self {
            curve: Arc::new(TransferCurve::Identity),
            profile: Arc::new(SwitchingProfile::step(subtractor.v_sw, bank.reset_voltage_v)?),
            subtractor,
            bank,
            resistance: ResistanceModel::default(),
        })
    }

    pub fn neuron_bank(&self) -> Result<NeuronBank> {
        NeuronBank::new(self.bank, self.resistance, self.profile.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub bits: BinaryTensor,
    pub sparsity: f64,
    /// Normalized threshold scale used (1 unless Hoyer-scaled).
    pub threshold_scale: f64,
    /// Output elements whose analog value hit a rail (hardware backends).
    pub saturated: u64,
    pub bank_stats: BankStats,
}

/// Runs the in-pixel layer on one frame. `seed` keys the per-element random
/// streams used by the stochastic backend and the noise hook.
pub fn forward_first_layer(
    image: &Image,
    layer: &FirstLayer,
    backend: Backend,
    hw: &HardwareModel,
    seed: u64,
) -> Result<FrameOutput> {
    let u = layer.preactivations(image)?;
    let scale = threshold_scale(&u.values, layer.spec.v_th, layer.spec.threshold_mode)?;
    let (bits, saturated, bank_stats) = match backend {
        Backend::Ideal => (
            binary_activate(&u, layer.spec.v_th, layer.spec.threshold_mode)?,
            0,
            BankStats::default(),
        ),
        Backend::HardwareCurve | Backend::HardwareStochastic => hardware_bits(image, layer, backend, hw, scale, seed)?,
    };
    let bits = match layer.spec.pool {
        Some(p) => max_pool(&bits, p),
        None => bits,
    };
    Ok(FrameOutput {
        sparsity: bits.sparsity(),
        bits,
        threshold_scale: scale,
        saturated,
        bank_stats,
    })
}

fn hardware_bits(
    image: &Image,
    layer: &FirstLayer,
    backend: Backend,
    hw: &HardwareModel,
    scale: f64,
    seed: u64,
) -> Result<(BinaryTensor, u64, BankStats)> {
    let (h, w) = layer.check_image(image)?;
    let (fused, shift) = fuse_batchnorm(&layer.weights, &layer.bn)?;
    let threshold = scale * layer.spec.v_th;
    // One compute group per output channel; weights are shared by position.
    let units: Vec<KernelUnit> = (0..layer.spec.out_channels)
        .map(|c| {
            Ok(KernelUnit {
                weights: fused.channel(c).into(),
                curve: hw.curve.clone(),
                subtractor: hw.subtractor.with_normalized_threshold(threshold - shift[c]),
                neurons: hw.neuron_bank()?,
            })
        })
        .collect::<Result<_>>()?;
    let stochastic = backend == Backend::HardwareStochastic;
    let noisy = hw.subtractor.noise_sigma > 0.0;
    let per_channel = h * w;

    struct Scratch {
        patch: Vec<f64>,
        bank: Option<NeuronBank>,
    }

    let results: Vec<(bool, bool, BankStats)> = (0..layer.spec.out_channels * per_channel)
        .into_par_iter()
        .map_init(
            || Scratch {
                patch: Vec::new(),
                bank: None,
            },
            |scratch, idx| -> Result<(bool, bool, BankStats)> {
                let unit = &units[idx / per_channel];
                let pos = idx % per_channel;
                layer.patch_into(image, pos / w, pos % w, &mut scratch.patch);
                let cfg = &unit.subtractor;
                let mut rng: Option<SimRng> = (stochastic || noisy).then(|| stream(seed, idx as u64));
                let v_conv = match rng.as_mut() {
                    Some(r) if noisy => unit.convolve_noisy(&scratch.patch, r)?,
                    _ => unit_convolve(&unit.weights, &unit.curve, cfg, &scratch.patch)?,
                };
                let saturated = v_conv <= 0.0 || v_conv >= cfg.vdd;
                if !stochastic {
                    return Ok((v_conv >= cfg.v_sw, saturated, BankStats::default()));
                }
                let bank = scratch.bank.get_or_insert_with(|| unit.neurons.clone());
                bank.reinitialize();
                let comp = bank.comparator();
                let bit = bank.evaluate(v_conv, &comp, rng.as_mut().unwrap())?;
                Ok((bit, saturated, bank.take_stats()))
            },
        )
        .collect::<Result<_>>()?;

    let mut stats = BankStats::default();
    let mut saturated = 0;
    let bits = results
        .into_iter()
        .map(|(b, s, st)| {
            saturated += u64::from(s);
            stats.merge(&st);
            b
        })
        .collect();
    Ok((
        BinaryTensor {
            dims: (layer.spec.out_channels, h, w),
            bits,
        },
        saturated,
        stats,
    ))
}

/// Non-overlapping `window x window` OR-pool; trailing rows/columns that do
/// not fill a window are dropped.
pub fn max_pool(bits: &BinaryTensor, window: usize) -> BinaryTensor {
    let (c, h, w) = bits.dims;
    let (ph, pw) = (h / window, w / window);
    let mut out = BinaryTensor::zeros((c, ph, pw));
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let any = (0..window)
                    .any(|dy| (0..window).any(|dx| bits.bits[(ch * h + y * window + dy) * w + x * window + dx]));
                out.bits[(ch * ph + y) * pw + x] = any;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorInjection {
    /// Probability that a 1 reads back as 0 (neuron fails to activate).
    pub eps_10: f64,
    /// Probability that a 0 reads back as 1 (neuron incorrectly activates).
    pub eps_01: f64,
    pub seed: u64,
}

impl ErrorInjection {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps_10) || !(0.0..=1.0).contains(&self.eps_01) {
            return Err(Error::InvalidArgument(format!(
                "flip probabilities must be in [0, 1] (got {}, {})",
                self.eps_10, self.eps_01
            )));
        }
        Ok(())
    }
}

/// Flips each bit independently. One uniform draw per element decides the
/// flip, so for a fixed seed a larger epsilon flips a superset of elements.
pub fn inject_errors(bits: &BinaryTensor, inj: &ErrorInjection) -> Result<BinaryTensor> {
    inj.validate()?;
    let mut rng = stream(inj.seed, 0);
    Ok(inject_errors_with(bits, inj.eps_10, inj.eps_01, &mut rng))
}

pub fn inject_errors_with<R: Rng + ?Sized>(bits: &BinaryTensor, eps_10: f64, eps_01: f64, rng: &mut R) -> BinaryTensor {
    let bits_out = bits
        .bits
        .iter()
        .map(|&b| {
            let u = rng.random::<f64>();
            if b {
                u >= eps_10
            } else {
                u < eps_01
            }
        })
        .collect();
    BinaryTensor {
        dims: bits.dims,
        bits: bits_out,
    }
}
