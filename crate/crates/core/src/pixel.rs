//! Weight-augmented pixel MAC and the two-phase passive subtractor.
//!
//! Products `|w| * x` pass through a [`TransferCurve`] (the pixel circuit's
//! non-linearity) and accumulate ideally on the shared bitline. Negative
//! weights integrate in phase 1, positive weights in phase 2, and the
//! subtractor's bottom plate produces `V_OFS + slope * (pos - neg)`.
//!
//! Threshold matching: with `V_OFS = 0.5 VDD + (V_SW - V_TH)` and
//! `V_TH = 0.5 VDD + slope * theta`, a normalized sum exactly at `theta`
//! lands exactly on the junction switching voltage `V_SW`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Negative,
    Positive,
}

impl Phase {
    fn admits(self, w: f64) -> bool {
        match self {
            Phase::Negative => w < 0.0,
            Phase::Positive => w > 0.0,
        }
    }
}

/// Signed 4-bit weight code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizedWeight {
    code: i8,
    /// Normalized weight units per code step.
    scale: f64,
}

impl QuantizedWeight {
    pub const MIN_CODE: i8 = -8;
    pub const MAX_CODE: i8 = 7;

    pub fn new(code: i8, scale: f64) -> Result<Self> {
        if !(Self::MIN_CODE..=Self::MAX_CODE).contains(&code) {
            return Err(Error::InvalidArgument(format!("weight code {code} outside [-8, 7]")));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight scale must be positive (got {scale})"
            )));
        }
        Ok(Self { code, scale })
    }

    /// Nearest representable code, saturating at the 4-bit range.
    pub fn quantize(w: f64, scale: f64) -> Result<Self> {
        let code = (w / scale).round().clamp(Self::MIN_CODE as f64, Self::MAX_CODE as f64) as i8;
        Self::new(code, scale)
    }

    pub fn code(&self) -> i8 {
        self.code
    }

    pub fn value(&self) -> f64 {
        self.code as f64 * self.scale
    }

    /// Integration phase this weight participates in; `None` for code 0.
    pub fn phase(&self) -> Option<Phase> {
        match self.code.signum() {
            -1 => Some(Phase::Negative),
            1 => Some(Phase::Positive),
            _ => None,
        }
    }
}

pub const DEFAULT_DOMAIN: (f64, f64) = (-3.0, 3.0);

/// Response of one weight-augmented pixel to a normalized product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferCurve {
    Identity,
    /// `sum_i coefficients[i] * p^i`, degree at most 5.
    Polynomial {
        coefficients: Vec<f64>,
    },
    /// `(x, y)` knots sorted by `x`; linear extrapolation past the ends.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl Default for TransferCurve {
    fn default() -> Self {
        Self::fitted_default()
    }
}

impl TransferCurve {
    /// Odd cubic least-squares fit of [`synthetic_pixel_response`] over
    /// `[-3, 3]` (601 points). Compressive by about 7.7 % at full scale.
    pub fn fitted_default() -> Self {
        TransferCurve::Polynomial {
            coefficients: vec![0.0, 0.998_236_0, 0.0, -0.008_318_49],
        }
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            TransferCurve::Identity => p,
            TransferCurve::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, &c| acc * p + c),
            TransferCurve::PiecewiseLinear { knots } => {
                if knots.len() == 1 {
                    return knots[0].1;
                }
                let i = knots.partition_point(|k| k.0 <= p).clamp(1, knots.len() - 1);
                let (x0, y0) = knots[i - 1];
                let (x1, y1) = knots[i];
                y0 + (p - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransferCurve::Identity => {}
            TransferCurve::Polynomial { coefficients } => {
                if coefficients.is_empty() || coefficients.len() > 6 {
                    return Err(Error::Config(
                        "polynomial curve needs 1..=6 coefficients (degree <= 5)".into(),
                    ));
                }
            }
            TransferCurve::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::Config("piecewise-linear curve needs at least two knots".into()));
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Config(
                        "piecewise-linear knots must have strictly increasing x".into(),
                    ));
                }
            }
        }
        if self.eval(0.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "transfer curve must pass through 0 (curve(0) = {})",
                self.eval(0.0)
            )));
        }
        let (lo, hi) = DEFAULT_DOMAIN;
        let steps = 1200;
        let mut prev = self.eval(lo);
        for i in 1..=steps {
            let y = self.eval(lo + (hi - lo) * i as f64 / steps as f64);
            if y < prev - 1e-12 {
                return Err(Error::Config("transfer curve must be non-decreasing on [-3, 3]".into()));
            }
            prev = y;
        }
        Ok(())
    }

    /// Least-squares fit of `sum_k c_k p^(2k+1)` up to `degree`.
    pub fn fit_odd_polynomial(samples: &[(f64, f64)], degree: usize) -> Result<Self> {
        if degree.is_multiple_of(2) || degree > 5 {
            return Err(Error::InvalidArgument("odd polynomial degree must be 1, 3 or 5".into()));
        }
        let powers: Vec<i32> = (1..=degree as i32).step_by(2).collect();
        let m = powers.len();
        if samples.len() < m {
            return Err(Error::InvalidArgument(
                "not enough samples for the requested degree".into(),
            ));
        }
        let mut ata = vec![vec![0.0; m]; m];
        let mut aty = vec![0.0; m];
        for &(x, y) in samples {
            let row: Vec<f64> = powers.iter().map(|&k| x.powi(k)).collect();
            for i in 0..m {
                aty[i] += row[i] * y;
                for j in 0..m {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let sol = solve_dense(ata, aty)?;
        let mut coefficients = vec![0.0; degree + 1];
        for (k, c) in powers.iter().zip(sol) {
            coefficients[*k as usize] = c;
        }
        Ok(TransferCurve::Polynomial { coefficients })
    }

    /// Largest `|curve(p) - target(p)|` over the samples.
    pub fn max_residual(&self, samples: &[(f64, f64)]) -> f64 {
        samples
            .iter()
            .map(|&(x, y)| (self.eval(x) - y).abs())
            .fold(0.0, f64::max)
    }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::InvalidArgument("singular least-squares system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (i, r) in rest.iter_mut().enumerate() {
            let f = r[col] / pivot_row[col];
            r[col..]
                .iter_mut()
                .zip(&pivot_row[col..])
                .for_each(|(x, p)| *x -= f * p);
            b[col + 1 + i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Stand-in for the simulated pixel scatter: a soft-saturating response
/// `6 tanh(p / 6)` sampled uniformly on `[-3, 3]`.
pub fn synthetic_pixel_response(samples: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = DEFAULT_DOMAIN;
    (0..samples)
        .map(|i| {
            let p = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
            (p, 6.0 * (p / 6.0).tanh())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubtractorConfig {
    pub vdd: f64,
    /// Junction switching voltage.
    pub v_sw: f64,
    /// Hardware-mapped algorithmic threshold.
    pub v_th: f64,
    /// Normalized interval mapped linearly onto `[0, vdd]`.
    pub analog_range: (f64, f64),
    /// Additive Gaussian noise on `V_CONV`, volts. Off by default.
    pub noise_sigma: f64,
}

impl Default for SubtractorConfig {
    fn default() -> Self {
        Self {
            vdd: 1.0,
            v_sw: 0.8,
            v_th: 0.6,
            analog_range: DEFAULT_DOMAIN,
            noise_sigma: 0.0,
        }
    }
}

impl SubtractorConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.vdd > 0.0) {
            errors.push(format!("subtractor.vdd must be positive (got {})", self.vdd));
        }
        if !(self.v_sw > 0.0 && self.v_sw <= self.vdd) {
            errors.push(format!("subtractor.v_sw must be in (0, vdd] (got {})", self.v_sw));
        }
        if !self.v_th.is_finite() {
            errors.push("subtractor.v_th must be finite".into());
        }
        if !(self.analog_range.1 > self.analog_range.0) {
            errors.push("subtractor.analog_range must be an increasing interval".into());
        }
        if !(self.noise_sigma >= 0.0) {
            errors.push("subtractor.noise_sigma must be non-negative".into());
        }
    }

    /// Volts per normalized unit.
    pub fn slope(&self) -> f64 {
        self.vdd / (self.analog_range.1 - self.analog_range.0)
    }

    pub fn to_volts(&self, normalized: f64) -> f64 {
        normalized * self.slope()
    }

    pub fn v_ofs(&self) -> f64 {
        0.5 * self.vdd + (self.v_sw - self.v_th)
    }

    /// `V_TH` corresponding to a normalized threshold.
    pub fn hardware_threshold(&self, normalized_threshold: f64) -> f64 {
        0.5 * self.vdd + self.to_volts(normalized_threshold)
    }

    pub fn normalized_threshold(&self) -> f64 {
        (self.v_th - 0.5 * self.vdd) / self.slope()
    }

    pub fn with_normalized_threshold(mut self, normalized_threshold: f64) -> Self {
        self.v_th = self.hardware_threshold(normalized_threshold);
        self
    }

    /// Whether a normalized difference drives the output into a rail.
    pub fn saturates(&self, diff: f64) -> bool {
        let v = self.v_ofs() + self.to_volts(diff);
        !(0.0..=self.vdd).contains(&v)
    }
}

/// Accumulates the products of one sign. Elements of the other sign, and
/// zero weights, contribute nothing.
pub fn pixel_mac(inputs: &[f64], weights: &[f64], phase: Phase, curve: &TransferCurve) -> Result<f64> {
    if inputs.len() != weights.len() {
        return Err(Error::Shape {
            expected: format!("{} inputs", weights.len()),
            actual: format!("{}", inputs.len()),
        });
    }
    Ok(inputs
        .iter()
        .zip(weights)
        .filter(|(_, &w)| phase.admits(w))
        .map(|(&x, &w)| curve.eval(w.abs() * x))
        .sum())
}

pub fn subtract_phases(neg: f64, pos: f64, cfg: &SubtractorConfig) -> f64 {
    (cfg.v_ofs() + cfg.to_volts(pos - neg)).clamp(0.0, cfg.vdd)
}

/// One in-pixel compute group.
#[derive(Debug, Clone)]
pub struct KernelUnit {
    pub weights: Arc<[f64]>,
    pub curve: Arc<TransferCurve>,
    pub subtractor: SubtractorConfig,
    pub neurons: NeuronBank,
}

impl KernelUnit {
    /// Phase 1 (negative weights), phase 2 (positive weights), subtract.
    pub fn convolve(&self, patch: &[f64]) -> Result<f64> {
        unit_convolve(&self.weights, &self.curve, &self.subtractor, patch)
    }

    /// [`Self::convolve`] with the configured Gaussian noise added before
    /// the output clamps.
    pub fn convolve_noisy<R: Rng + ?Sized>(&self, patch: &[f64], rng: &mut R) -> Result<f64> {
        if self.subtractor.noise_sigma == 0.0 {
            return self.convolve(patch);
        }
        let (neg, pos) = phases(&self.weights, &self.curve, patch)?;
        let noise = Normal::new(0.0, self.subtractor.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng);
        let cfg = &self.subtractor;
        Ok((cfg.v_ofs() + cfg.to_volts(pos - neg) + noise).clamp(0.0, cfg.vdd))
    }
}

fn phases(weights: &[f64], curve: &TransferCurve, patch: &[f64]) -> Result<(f64, f64)> {
    let neg = pixel_mac(patch, weights, Phase::Negative, curve)?;
    let pos = pixel_mac(patch, weights, Phase::Positive, curve)?;
    Ok((neg, pos))
}

pub fn unit_convolve(weights: &[f64], curve: &TransferCurve, cfg: &SubtractorConfig, patch: &[f64]) -> Result<f64> {
    let (neg, pos) = phases(weights, curve, patch)?;
    Ok(subtract_phases(neg, pos, cfg))
}
