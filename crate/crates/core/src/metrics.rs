//! Closed-form system models: bandwidth compression, sparse coding of the
//! binary feature map, front-end and link energy, and frame timing.
//!
//! The compression ratio is input bit volume over output bit volume with
//! the 4/3 Bayer credit. The equation as typeset elsewhere puts the output
//! volume in the numerator, which cannot give C = 6 for any consistent
//! geometry; [`RatioOrientation::AsPrinted`] keeps that reading available.

use serde::{Deserialize, Serialize};

use crate::bnn::BinaryTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub h_in: u64,
    pub w_in: u64,
    pub c_in: u64,
    pub h_out: u64,
    pub w_out: u64,
    pub c_out: u64,
    pub b_inp: u32,
    pub b_out: u32,
    pub bayer_factor: f64,
}

impl Default for GeometrySpec {
    /// VGG16 on ImageNet-sized input: 224x224x3 in, 112x112x32 out.
    fn default() -> Self {
        Self {
            h_in: 224,
            w_in: 224,
            c_in: 3,
            h_out: 112,
            w_out: 112,
            c_out: 32,
            b_inp: 12,
            b_out: 1,
            bayer_factor: 4.0 / 3.0,
        }
    }
}

impl GeometrySpec {
    /// Output geometry after a 2x2 pool, for the unpooled/pooled question.
    pub fn pooled(self, window: u64) -> Self {
        Self {
            h_out: self.h_out / window,
            w_out: self.w_out / window,
            ..self
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("geometry.h_in", self.h_in),
            ("geometry.w_in", self.w_in),
            ("geometry.c_in", self.c_in),
            ("geometry.h_out", self.h_out),
            ("geometry.w_out", self.w_out),
            ("geometry.c_out", self.c_out),
            ("geometry.b_inp", self.b_inp as u64),
            ("geometry.b_out", self.b_out as u64),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
        if !(self.bayer_factor > 0.0) {
            errors.push("geometry.bayer_factor must be positive".into());
        }
    }

    fn checked(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Raw sensor samples per frame (Bayer mosaic).
    pub fn raw_samples(&self) -> f64 {
        (self.h_in * self.w_in * self.c_in) as f64 * self.bayer_factor
    }

    /// Kernel units, i.e. output neurons per frame.
    pub fn output_elements(&self) -> u64 {
        self.h_out * self.w_out * self.c_out
    }

    pub fn raw_input_bits(&self) -> f64 {
        self.raw_samples() * self.b_inp as f64
    }

    pub fn dense_output_bits(&self) -> u64 {
        self.output_elements() * self.b_out as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioOrientation {
    #[default]
    InputOverOutput,
    /// `(out volume / in volume) * (b_inp / b_out) * 4/3`.
    AsPrinted,
}

pub fn compression_ratio(g: &GeometrySpec, orientation: RatioOrientation) -> Result<f64> {
    g.checked()?;
    let vin = (g.h_in * g.w_in * g.c_in) as f64;
    let vout = (g.h_out * g.w_out * g.c_out) as f64;
    let bits = g.b_inp as f64 / g.b_out as f64;
    Ok(match orientation {
        RatioOrientation::InputOverOutput => vin / vout * bits * g.bayer_factor,
        RatioOrientation::AsPrinted => vout / vin * bits * g.bayer_factor,
    })
}

/// Sizes of the two candidate encodings of a binary map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodedSize {
    pub dense_bits: u64,
    pub csr_bits: u64,
}

impl CodedSize {
    pub fn chosen(&self) -> u64 {
        self.dense_bits.min(self.csr_bits)
    }
}

fn bits_for(values: u64) -> u64 {
    // ceil(log2(values)), at least 1
    (64 - (values.max(2) - 1).leading_zeros()) as u64
}

/// Compressed-sparse-row size of a `(c, h, w)` map taken as `c * h` rows of
/// width `w`: `(rows + 1)` row pointers of `ceil(log2(len + 1))` bits plus
/// one `ceil(log2(w))`-bit column index per set bit.
pub fn csr_size(bits: &BinaryTensor) -> CodedSize {
    let (c, h, w) = bits.dims;
    let len = (c * h * w) as u64;
    let rows = (c * h) as u64;
    let ptr_bits = bits_for(len + 1);
    let col_bits = bits_for(w as u64);
    let nnz = bits.count_ones() as u64;
    CodedSize {
        dense_bits: len,
        csr_bits: (rows + 1) * ptr_bits + nnz * col_bits,
    }
}

/// Bits on the link for a binary map: the smaller of dense and CSR.
pub fn sparse_coded_bits(bits: &BinaryTensor) -> u64 {
    csr_size(bits).chosen()
}

pub fn comm_energy(bits: f64, e_per_bit: f64) -> f64 {
    bits * e_per_bit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Sensor digitizes every raw sample; all compute off-sensor.
    Baseline,
    /// Raw samples read out to a peripheral MAC array with multi-bit ADCs
    /// on the first-layer outputs.
    InSensor,
    /// Analog in-pixel MAC with junction neurons; no ADC.
    InPixel,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Baseline, Architecture::InSensor, Architecture::InPixel];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteLocality {
    /// Majority computed in the pixel; one bit per neuron leaves the chip.
    #[default]
    OnChip,
    /// Every replica bit is transmitted and voted downstream.
    OffChip,
}

/// Per-event energies. All values are joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    /// Provenance tag carried into reports.
    pub label: EnergyLabel,
    pub e_pixel_read: f64,
    /// One conversion at `adc_ref_bits`.
    pub e_adc: f64,
    pub adc_ref_bits: u32,
    /// Conversion energy scales as `2^(exponent * (bits - ref))`.
    pub adc_bits_exponent: f64,
    pub insensor_adc_bits: u32,
    pub insensor_out_bits: u32,
    /// In-pixel analog MAC, per kernel unit per integration phase.
    pub e_mac_analog: f64,
    /// Peripheral (in-sensor) MAC, per kernel unit per phase.
    pub e_mac_peripheral: f64,
    pub e_buffer_write: f64,
    pub e_mtj_write: f64,
    pub e_mtj_read: f64,
    pub e_mtj_reset: f64,
    pub e_comm_per_bit: f64,
    pub replicas: u32,
    pub vote_locality: VoteLocality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyLabel {
    /// Fitted to target front-end ratios; not measured.
    #[default]
    Calibrated,
    /// Public ADC-survey and LVDS figures, order of magnitude only.
    OrderOfMagnitude,
    Custom,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl EnergyConfig {
    /// Constants fitted so that, for the VGG16 geometry at 75 % output
    /// sparsity, in-pixel front-end energy is 1/8.2 of baseline and 1/8.0 of
    /// in-sensor. Calibrated, not measured.
    pub fn calibrated() -> Self {
        Self {
            label: EnergyLabel::Calibrated,
            e_pixel_read: 1.0e-12,
            e_adc: 20.0e-12,
            adc_ref_bits: 12,
            adc_bits_exponent: 1.0,
            insensor_adc_bits: 8,
            insensor_out_bits: 8,
            e_mac_analog: 0.330e-12,
            e_mac_peripheral: 4.25e-12,
            e_buffer_write: 20.0e-15,
            e_mtj_write: 40.0e-15,
            e_mtj_read: 5.0e-15,
            e_mtj_reset: 50.0e-15,
            e_comm_per_bit: 1.5e-12,
            replicas: 8,
            vote_locality: VoteLocality::OnChip,
        }
    }

    /// Walden-FOM-class ADC (~50 fJ/conv-step at 12 b) and ~1.5 pJ/bit LVDS.
    pub fn order_of_magnitude() -> Self {
        Self {
            label: EnergyLabel::OrderOfMagnitude,
            e_pixel_read: 2.0e-12,
            e_adc: 200.0e-12,
            e_mac_analog: 0.5e-12,
            e_mac_peripheral: 5.0e-12,
            e_buffer_write: 50.0e-15,
            e_mtj_write: 100.0e-15,
            e_mtj_read: 10.0e-15,
            e_mtj_reset: 100.0e-15,
            ..Self::calibrated()
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("energy.e_pixel_read", self.e_pixel_read),
            ("energy.e_adc", self.e_adc),
            ("energy.adc_bits_exponent", self.adc_bits_exponent),
            ("energy.e_mac_analog", self.e_mac_analog),
            ("energy.e_mac_peripheral", self.e_mac_peripheral),
            ("energy.e_buffer_write", self.e_buffer_write),
            ("energy.e_mtj_write", self.e_mtj_write),
            ("energy.e_mtj_read", self.e_mtj_read),
            ("energy.e_mtj_reset", self.e_mtj_reset),
            ("energy.e_comm_per_bit", self.e_comm_per_bit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be non-negative (got {v})"));
            }
        }
        if self.replicas == 0 {
            errors.push("energy.replicas must be at least 1".into());
        }
    }

    pub fn adc_energy(&self, bits: u32) -> f64 {
        self.e_adc * (self.adc_bits_exponent * (bits as f64 - self.adc_ref_bits as f64)).exp2()
    }

    /// Every per-event energy multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            label: EnergyLabel::Custom,
            e_pixel_read: self.e_pixel_read * k,
            e_adc: self.e_adc * k,
            e_mac_analog: self.e_mac_analog * k,
            e_mac_peripheral: self.e_mac_peripheral * k,
            e_buffer_write: self.e_buffer_write * k,
            e_mtj_write: self.e_mtj_write * k,
            e_mtj_read: self.e_mtj_read * k,
            e_mtj_reset: self.e_mtj_reset * k,
            e_comm_per_bit: self.e_comm_per_bit * k,
            ..*self
        }
    }
}

/// What the frame looked like, for activity-dependent terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    /// Zero fraction of the output map.
    pub sparsity: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self { sparsity: 0.75 }
    }
}

/// Sensor-side energy per frame.
pub fn frontend_energy(cfg: &EnergyConfig, g: &GeometrySpec, workload: &Workload, arch: Architecture) -> f64 {
    let raw = g.raw_samples();
    let units = g.output_elements() as f64;
    let replicas = cfg.replicas as f64;
    match arch {
        Architecture::Baseline => raw * (cfg.e_pixel_read + cfg.adc_energy(g.b_inp)),
        Architecture::InSensor => {
            raw * cfg.e_pixel_read + units * 2.0 * cfg.e_mac_peripheral + units * cfg.adc_energy(cfg.insensor_adc_bits)
        }
        Architecture::InPixel => {
            // Resets are issued only to replicas that switched.
            let active = (1.0 - workload.sparsity).clamp(0.0, 1.0);
            units * 2.0 * cfg.e_mac_analog
                + units * replicas * (cfg.e_buffer_write + cfg.e_mtj_write + cfg.e_mtj_read)
                + units * replicas * active * cfg.e_mtj_reset
        }
    }
}

/// Dense link bits per frame.
pub fn comm_bits(cfg: &EnergyConfig, g: &GeometrySpec, arch: Architecture) -> f64 {
    match arch {
        Architecture::Baseline => g.raw_input_bits(),
        Architecture::InSensor => (g.output_elements() * cfg.insensor_out_bits as u64) as f64,
        Architecture::InPixel => {
            let per_neuron = match cfg.vote_locality {
                VoteLocality::OnChip => 1.0,
                VoteLocality::OffChip => cfg.replicas as f64,
            };
            g.dense_output_bits() as f64 * per_neuron
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    /// Every kernel group runs concurrently; channels and replicas serial.
    #[default]
    PerKernelGroup,
    /// One kernel group at a time.
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub t_int: f64,
    pub n_int_phases: u32,
    /// Per-channel, per-phase settle of the shared bitline. Free parameter.
    pub t_channel_settle: f64,
    pub t_write: f64,
    pub t_read: f64,
    pub t_reset: f64,
    pub n_replicas: u32,
    pub n_channels: u32,
    pub parallelism: Parallelism,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            t_int: 5e-6,
            n_int_phases: 2,
            t_channel_settle: 0.75e-6,
            t_write: 700e-12,
            t_read: 500e-12,
            t_reset: 500e-12,
            n_replicas: 8,
            n_channels: 32,
            parallelism: Parallelism::PerKernelGroup,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("timing.t_int", self.t_int),
            ("timing.t_channel_settle", self.t_channel_settle),
            ("timing.t_write", self.t_write),
            ("timing.t_read", self.t_read),
            ("timing.t_reset", self.t_reset),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        for (name, v) in [
            ("timing.n_int_phases", self.n_int_phases),
            ("timing.n_replicas", self.n_replicas),
            ("timing.n_channels", self.n_channels),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be at least 1"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame_time_s: f64,
    pub fps: f64,
}

/// Global-shutter frame time: shared integrations, then per-channel settle
/// and sequential replica write / read / reset inside each kernel group.
pub fn frame_time(cfg: &TimingConfig, g: &GeometrySpec) -> FrameTiming {
    let phases = cfg.n_int_phases as f64;
    let ch = cfg.n_channels as f64;
    let rep = cfg.n_replicas as f64;
    let per_group = ch * cfg.t_channel_settle * phases + ch * rep * cfg.t_write + ch * rep * (cfg.t_read + cfg.t_reset);
    let groups = match cfg.parallelism {
        Parallelism::PerKernelGroup => 1.0,
        Parallelism::Serial => (g.h_out * g.w_out) as f64,
    };
    let t = phases * cfg.t_int + groups * per_group;
    FrameTiming {
        frame_time_s: t,
        fps: 1.0 / t,
    }
}

/// One row of the architecture comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    pub architecture: Architecture,
    #[serde(rename = "frontend_J")]
    pub frontend_j: f64,
    #[serde(rename = "comm_J")]
    pub comm_j: f64,
    pub ratio_vs_baseline: f64,
    pub comm_ratio_vs_baseline: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "sparse_C_effective")]
    pub sparse_c_effective: Option<f64>,
    pub frame_time_s: Option<f64>,
    pub fps: Option<f64>,
    pub energy_label: EnergyLabel,
}

/// Reports for all three architectures. `inpixel_link_bits` overrides the
/// dense in-pixel link size (e.g. with a CSR-coded size).
pub fn architecture_reports(
    energy: &EnergyConfig,
    timing: &TimingConfig,
    g: &GeometrySpec,
    workload: &Workload,
    inpixel_link_bits: Option<f64>,
) -> Result<Vec<ArchitectureReport>> {
    let c = compression_ratio(g, RatioOrientation::InputOverOutput)?;
    let base_front = frontend_energy(energy, g, workload, Architecture::Baseline);
    let base_bits = comm_bits(energy, g, Architecture::Baseline);
    let base_comm = comm_energy(base_bits, energy.e_comm_per_bit);
    let timing = frame_time(timing, g);
    Ok(Architecture::ALL
        .iter()
        .map(|&arch| {
            let front = frontend_energy(energy, g, workload, arch);
            let bits = match (arch, inpixel_link_bits) {
                (Architecture::InPixel, Some(b)) => b,
                _ => comm_bits(energy, g, arch),
            };
            let comm = comm_energy(bits, energy.e_comm_per_bit);
            let in_pixel = arch == Architecture::InPixel;
            ArchitectureReport {
                architecture: arch,
                frontend_j: front,
                comm_j: comm,
                ratio_vs_baseline: base_front / front,
                comm_ratio_vs_baseline: base_comm / comm,
                c,
                sparse_c_effective: (in_pixel && inpixel_link_bits.is_some()).then(|| base_bits / bits),
                frame_time_s: in_pixel.then_some(timing.frame_time_s),
                fps: in_pixel.then_some(timing.fps),
                energy_label: energy.label,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_map(dims: (usize, usize, usize), density: f64, seed: u64) -> BinaryTensor {
        let mut rng = stream(seed, 0);
        BinaryTensor {
            dims,
            bits: (0..dims.0 * dims.1 * dims.2)
                .map(|_| rng.random::<f64>() < density)
                .collect(),
        }
    }

    /// Independent size oracle: actually emit the CSR bitstream.
    fn emit_csr(bits: &BinaryTensor) -> usize {
        let (c, h, w) = bits.dims;
        let len = c * h * w;
        let ptr_w = ((len + 1) as f64).log2().ceil().max(1.0) as usize;
        let col_w = (w as f64).log2().ceil().max(1.0) as usize;
        let mut stream = Vec::<bool>::new();
        let push = |s: &mut Vec<bool>, v: usize, width: usize| {
            for i in (0..width).rev() {
                s.push(v >> i & 1 == 1);
            }
        };
        let mut nnz = 0;
        push(&mut stream, 0, ptr_w);
        let mut cols = Vec::new();
        for row in 0..c * h {
            for x in 0..w {
                if bits.bits[row * w + x] {
                    cols.push(x);
                    nnz += 1;
                }
            }
            push(&mut stream, nnz, ptr_w);
        }
        for x in cols {
            push(&mut stream, x, col_w);
        }
        stream.len()
    }

    #[test]
    fn vgg16_compression_is_six() {
        let c = compression_ratio(&GeometrySpec::default(), RatioOrientation::InputOverOutput).unwrap();
        assert!((c - 6.0).abs() < 1e-9);
    }

    #[test]
    fn identity_geometry_has_unit_ratio() {
        let g = GeometrySpec {
            h_out: 224,
            w_out: 224,
            c_out: 3,
            b_out: 12,
            bayer_factor: 1.0,
            ..GeometrySpec::default()
        };
        assert_eq!(compression_ratio(&g, RatioOrientation::InputOverOutput).unwrap(), 1.0);
        assert_eq!(compression_ratio(&g, RatioOrientation::AsPrinted).unwrap(), 1.0);
    }

    #[test]
    fn printed_orientation_does_not_give_six() {
        let c = compression_ratio(&GeometrySpec::default(), RatioOrientation::AsPrinted).unwrap();
        assert!((c - 6.0).abs() > 1.0);
    }

    #[test]
    fn zero_dims_are_rejected() {
        let g = GeometrySpec {
            c_out: 0,
            ..GeometrySpec::default()
        };
        assert!(compression_ratio(&g, RatioOrientation::InputOverOutput).is_err());
    }

    #[test]
    fn compression_is_scale_invariant() {
        let g = GeometrySpec::default();
        let g2 = GeometrySpec {
            h_in: 448,
            w_in: 448,
            h_out: 224,
            w_out: 224,
            ..g
        };
        let a = compression_ratio(&g, RatioOrientation::InputOverOutput).unwrap();
        let b = compression_ratio(&g2, RatioOrientation::InputOverOutput).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn csr_size_matches_emitted_stream() {
        for (dims, density) in [
            ((32, 112, 112), 0.25),
            ((3, 7, 5), 0.5),
            ((1, 1, 1), 1.0),
            ((4, 9, 16), 0.03),
        ] {
            let m = random_map(dims, density, 5);
            assert_eq!(csr_size(&m).csr_bits as usize, emit_csr(&m), "{dims:?}");
        }
    }

    #[test]
    fn empty_map_costs_only_row_pointers() {
        let m = BinaryTensor::zeros((32, 112, 112));
        let s = csr_size(&m);
        assert_eq!(s.csr_bits, (32 * 112 + 1) * 19);
        assert!(sparse_coded_bits(&m) < s.dense_bits);
    }

    #[test]
    fn full_map_falls_back_to_dense() {
        let m = BinaryTensor {
            dims: (32, 112, 112),
            bits: vec![true; 32 * 112 * 112],
        };
        assert_eq!(sparse_coded_bits(&m), 32 * 112 * 112);
    }

    #[test]
    fn csr_only_wins_on_very_sparse_maps() {
        // 7-bit column indices: CSR beats 1 bit/element only below ~12 % density.
        let dense_quarter = random_map((32, 112, 112), 0.25, 1);
        assert_eq!(sparse_coded_bits(&dense_quarter), csr_size(&dense_quarter).dense_bits);
        let sparse = random_map((32, 112, 112), 0.05, 1);
        let s = csr_size(&sparse);
        assert!(s.csr_bits < s.dense_bits);
        assert!(s.dense_bits as f64 / sparse_coded_bits(&sparse) as f64 >= 1.5);
    }

    #[test]
    fn coded_bits_never_exceed_dense() {
        for seed in 0..20 {
            let m = random_map((8, 10, 12), seed as f64 / 20.0, seed);
            assert!(sparse_coded_bits(&m) <= m.len() as u64);
        }
    }

    #[test]
    fn calibrated_frontend_ratios() {
        let cfg = EnergyConfig::calibrated();
        let g = GeometrySpec::default();
        let w = Workload::default();
        let ip = frontend_energy(&cfg, &g, &w, Architecture::InPixel);
        let base = frontend_energy(&cfg, &g, &w, Architecture::Baseline) / ip;
        let ins = frontend_energy(&cfg, &g, &w, Architecture::InSensor) / ip;
        assert!((base / 8.2 - 1.0).abs() < 0.05, "{base}");
        assert!((ins / 8.0 - 1.0).abs() < 0.05, "{ins}");
    }

    #[test]
    fn zero_constants_give_zero_energy() {
        let cfg = EnergyConfig::calibrated().scaled(0.0);
        for arch in Architecture::ALL {
            assert_eq!(
                frontend_energy(&cfg, &GeometrySpec::default(), &Workload::default(), arch),
                0.0
            );
        }
        assert_eq!(comm_energy(0.0, 1e-12), 0.0);
    }

    #[test]
    fn energy_is_linear_in_constants() {
        let cfg = EnergyConfig::calibrated();
        let g = GeometrySpec::default();
        let w = Workload::default();
        for arch in Architecture::ALL {
            let e = frontend_energy(&cfg, &g, &w, arch);
            let e3 = frontend_energy(&cfg.scaled(3.0), &g, &w, arch);
            assert!((e3 / e - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn in_pixel_is_adc_free() {
        let cfg = EnergyConfig::calibrated();
        let more_adc = EnergyConfig {
            e_adc: cfg.e_adc * 2.0,
            ..cfg
        };
        let g = GeometrySpec::default();
        let w = Workload::default();
        for arch in [Architecture::Baseline, Architecture::InSensor] {
            assert!(frontend_energy(&more_adc, &g, &w, arch) > frontend_energy(&cfg, &g, &w, arch));
        }
        assert_eq!(
            frontend_energy(&more_adc, &g, &w, Architecture::InPixel),
            frontend_energy(&cfg, &g, &w, Architecture::InPixel)
        );
    }

    #[test]
    fn dense_link_ratio_is_the_compression_ratio() {
        let cfg = EnergyConfig::calibrated();
        let g = GeometrySpec::default();
        let r = comm_bits(&cfg, &g, Architecture::Baseline) / comm_bits(&cfg, &g, Architecture::InPixel);
        assert!((r - 6.0).abs() < 1e-9);
        let off = EnergyConfig {
            vote_locality: VoteLocality::OffChip,
            ..cfg
        };
        assert_eq!(
            comm_bits(&off, &g, Architecture::InPixel),
            8.0 * comm_bits(&cfg, &g, Architecture::InPixel)
        );
    }

    #[test]
    fn default_frame_time() {
        let t = frame_time(&TimingConfig::default(), &GeometrySpec::default());
        let expect = 10e-6 + 48e-6 + 32.0 * 8.0 * 700e-12 + 32.0 * 8.0 * 1000e-12;
        assert!((t.frame_time_s - expect).abs() < 1e-15);
        assert!(t.frame_time_s < 70e-6);
        assert!((t.fps * t.frame_time_s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integration_only_frame() {
        let cfg = TimingConfig {
            n_channels: 1,
            t_channel_settle: 1e-300,
            t_write: 1e-300,
            t_read: 1e-300,
            t_reset: 1e-300,
            ..TimingConfig::default()
        };
        let t = frame_time(&cfg, &GeometrySpec::default()).frame_time_s;
        assert!((t - 10e-6).abs() < 1e-18);
    }

    #[test]
    fn frame_time_increases_with_every_constant() {
        let base = TimingConfig::default();
        let g = GeometrySpec::default();
        let t0 = frame_time(&base, &g).frame_time_s;
        let bumped = [
            TimingConfig {
                t_int: base.t_int * 1.1,
                ..base
            },
            TimingConfig {
                n_int_phases: 3,
                ..base
            },
            TimingConfig {
                t_channel_settle: base.t_channel_settle * 1.1,
                ..base
            },
            TimingConfig {
                t_write: base.t_write * 1.1,
                ..base
            },
            TimingConfig {
                t_read: base.t_read * 1.1,
                ..base
            },
            TimingConfig {
                t_reset: base.t_reset * 1.1,
                ..base
            },
            TimingConfig { n_replicas: 9, ..base },
            TimingConfig { n_channels: 33, ..base },
        ];
        for cfg in bumped {
            assert!(frame_time(&cfg, &g).frame_time_s > t0, "{cfg:?}");
        }
    }

    #[test]
    fn serial_kernel_groups_break_the_budget() {
        let cfg = TimingConfig {
            parallelism: Parallelism::Serial,
            ..TimingConfig::default()
        };
        let t = frame_time(&cfg, &GeometrySpec::default()).frame_time_s;
        assert!(t > 100.0 * 70e-6);
    }

    #[test]
    fn report_fields() {
        let reports = architecture_reports(
            &EnergyConfig::calibrated(),
            &TimingConfig::default(),
            &GeometrySpec::default(),
            &Workload::default(),
            None,
        )
        .unwrap();
        let json = serde_json::to_value(&reports[2]).unwrap();
        for key in [
            "architecture",
            "frontend_J",
            "comm_J",
            "ratio_vs_baseline",
            "C",
            "sparse_C_effective",
            "frame_time_s",
            "fps",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(reports[0].ratio_vs_baseline, 1.0);
    }
}
