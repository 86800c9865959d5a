//! Multi-MTJ binary neuron.
//!
//! The analog convolution voltage is written into `n` replica junctions one
//! pulse at a time. A burst read through a resistance comparator counts the
//! replicas that reached the parallel state, and the neuron fires when that
//! count reaches the vote threshold. Switched replicas are then reset to AP.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::mtj::{Interpolation, MtjDevice, MtjState, ProfileEntry, ResistanceModel, SwitchingProfile};
use crate::rng::{batched_count, derive_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub n: usize,
    pub vote_threshold: usize,
    pub write_width_s: f64,
    pub reset_voltage_v: f64,
    pub reset_width_s: f64,
    pub read_voltage_v: f64,
    pub max_reset_attempts: u32,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            n: 8,
            vote_threshold: 4,
            write_width_s: 700e-12,
            reset_voltage_v: 0.9,
            reset_width_s: 500e-12,
            read_voltage_v: 1e-3,
            max_reset_attempts: 3,
        }
    }
}

impl BankConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.n == 0 {
            errors.push("bank.n must be at least 1".into());
        }
        if self.vote_threshold == 0 || self.vote_threshold > self.n {
            errors.push(format!(
                "bank.vote_threshold must be in 1..={} (got {})",
                self.n, self.vote_threshold
            ));
        }
        for (name, v) in [
            ("bank.write_width_s", self.write_width_s),
            ("bank.reset_width_s", self.reset_width_s),
            ("bank.reset_voltage_v", self.reset_voltage_v),
        ] {
            if !(v > 0.0) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.read_voltage_v.is_finite()) {
            errors.push("bank.read_voltage_v must be finite".into());
        }
    }
}

/// Comparator that turns a replica's resistance into a spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadComparator {
    pub threshold_resistance: f64,
    /// Batch-norm shift folded into the threshold path, kept for reporting.
    pub shift_b: f64,
}

impl ReadComparator {
    /// Threshold at the geometric mean of `R_P` and `R_AP(v_read)`.
    pub fn geometric_mean(model: &ResistanceModel, read_voltage: f64) -> Self {
        Self {
            threshold_resistance: (model.r_p * model.r_ap(read_voltage)).sqrt(),
            shift_b: 0.0,
        }
    }
}

/// Pulse and anomaly counters, consumed by the timing/energy models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    pub write_pulses: u64,
    pub reset_pulses: u64,
    /// Write phases that found a replica not in the reset state.
    pub unreset_writes: u64,
    /// Replicas left parallel after `max_reset_attempts` reset pulses.
    pub reset_failures: u64,
}

impl BankStats {
    pub fn merge(&mut self, other: &BankStats) {
        self.write_pulses += other.write_pulses;
        self.reset_pulses += other.reset_pulses;
        self.unreset_writes += other.unreset_writes;
        self.reset_failures += other.reset_failures;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BurstRead {
    /// Comparator output per replica, in read order.
    pub pulses: Vec<bool>,
    pub spike_count: usize,
    pub activation: bool,
}

#[derive(Debug, Clone)]
pub struct NeuronBank {
    devices: Vec<MtjDevice>,
    cfg: BankConfig,
    stats: BankStats,
}

impl NeuronBank {
    pub fn new(cfg: BankConfig, resistance: ResistanceModel, profile: Arc<SwitchingProfile>) -> Result<Self> {
        let mut errors = Vec::new();
        cfg.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let devices = (0..cfg.n)
            .map(|_| MtjDevice::new(resistance, profile.clone()))
            .collect();
        Ok(Self {
            devices,
            cfg,
            stats: BankStats::default(),
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[MtjDevice] {
        &self.devices
    }

    pub fn states(&self) -> Vec<MtjState> {
        self.devices.iter().map(MtjDevice::state).collect()
    }

    pub fn stats(&self) -> &BankStats {
        &self.stats
    }

    pub fn take_stats(&mut self) -> BankStats {
        std::mem::take(&mut self.stats)
    }

    /// Overwrites replica states. Test and fixture use only; no pulses are
    /// counted.
    pub fn set_states(&mut self, states: &[MtjState]) -> Result<()> {
        if states.len() != self.devices.len() {
            return Err(Error::Shape {
                expected: format!("{} states", self.devices.len()),
                actual: format!("{}", states.len()),
            });
        }
        for (d, &s) in self.devices.iter_mut().zip(states) {
            *d = d.clone().with_state(s);
        }
        Ok(())
    }

    /// Puts every replica back in AP without issuing pulses, giving a fresh
    /// bank for the next Monte Carlo trial.
    pub fn reinitialize(&mut self) {
        for d in &mut self.devices {
            if d.state() != MtjState::RESET {
                *d = d.clone().with_state(MtjState::RESET);
            }
        }
    }

    pub fn comparator(&self) -> ReadComparator {
        ReadComparator::geometric_mean(self.devices[0].resistance_model(), self.cfg.read_voltage_v)
    }

    /// Drives every replica in sequence with one write pulse at `v_conv`.
    pub fn write_activation<R: Rng + ?Sized>(&mut self, v_conv: f64, rng: &mut R) -> Result<()> {
        for d in &mut self.devices {
            if d.state() != MtjState::RESET {
                self.stats.unreset_writes += 1;
            }
            d.apply_pulse(v_conv, self.cfg.write_width_s, rng)?;
            self.stats.write_pulses += 1;
        }
        Ok(())
    }

    pub fn burst_read(&self, comp: &ReadComparator) -> Result<BurstRead> {
        let pulses = self
            .devices
            .iter()
            .map(|d| Ok(d.read_resistance(self.cfg.read_voltage_v)? < comp.threshold_resistance))
            .collect::<Result<Vec<bool>>>()?;
        let spike_count = pulses.iter().filter(|&&p| p).count();
        Ok(BurstRead {
            activation: spike_count >= self.cfg.vote_threshold,
            pulses,
            spike_count,
        })
    }

    /// Pulses each parallel replica until it reads AP or the attempt cap is
    /// hit. Returns the number of pulses spent on each replica.
    pub fn reset_all<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<u32>> {
        let mut attempts = Vec::with_capacity(self.devices.len());
        for d in &mut self.devices {
            let mut used = 0;
            while d.state() == MtjState::Parallel && used < self.cfg.max_reset_attempts {
                d.apply_pulse(self.cfg.reset_voltage_v, self.cfg.reset_width_s, rng)?;
                used += 1;
            }
            if d.state() == MtjState::Parallel {
                self.stats.reset_failures += 1;
            }
            self.stats.reset_pulses += u64::from(used);
            attempts.push(used);
        }
        Ok(attempts)
    }

    /// Full write → read → reset cycle. Returns the activation bit.
    pub fn evaluate<R: Rng + ?Sized>(&mut self, v_conv: f64, comp: &ReadComparator, rng: &mut R) -> Result<bool> {
        self.write_activation(v_conv, rng)?;
        let read = self.burst_read(comp)?;
        self.reset_all(rng)?;
        Ok(read.activation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorMode {
    /// The input is above threshold; the error is a missed activation.
    ShouldActivate,
    /// The input is below threshold; the error is a spurious activation.
    ShouldNotActivate,
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorMode::ShouldActivate => "ShouldActivate",
            ErrorMode::ShouldNotActivate => "ShouldNotActivate",
        })
    }
}

impl FromStr for ErrorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ShouldActivate" => Ok(ErrorMode::ShouldActivate),
            "ShouldNotActivate" => Ok(ErrorMode::ShouldNotActivate),
            _ => Err(Error::InvalidArgument(format!("unknown error mode {s:?}"))),
        }
    }
}

fn check_vote(p: f64, n: usize, vote_threshold: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    if vote_threshold == 0 || vote_threshold > n {
        return Err(Error::InvalidArgument(format!(
            "vote threshold {vote_threshold} outside 1..={n}"
        )));
    }
    Ok(())
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Exact majority-vote error of `n` independent replicas each switching with
/// probability `p_switch`.
///
/// `ShouldActivate` returns `P(X < t)`; `ShouldNotActivate` returns
/// `P(X >= t)`, with `X ~ Bin(n, p_switch)`.
pub fn bank_error_rate(p_switch: f64, n: usize, vote_threshold: usize, mode: ErrorMode) -> Result<f64> {
    check_vote(p_switch, n, vote_threshold)?;
    let range = match mode {
        ErrorMode::ShouldActivate => 0..vote_threshold,
        ErrorMode::ShouldNotActivate => vote_threshold..n + 1,
    };
    Ok(range.map(|k| binomial_pmf(n, k, p_switch)).sum::<f64>().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub hits: u64,
    pub trials: u64,
}

impl McEstimate {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// Whether the estimate is consistent with `p` at the `k`-sigma level.
    ///
    /// With enough expected counts this is `|rate - p| <= k * sigma`. For
    /// rare events, where one stray hit already sits many sigma out, both
    /// exact binomial tails must instead exceed the one-sided normal tail
    /// mass beyond `k`. A zero-variance `p` demands an exact match.
    pub fn agrees_with(&self, p: f64, k: f64) -> bool {
        let n = self.trials as f64;
        let var = n * p * (1.0 - p);
        if var >= 25.0 {
            return (self.rate() - p).abs() <= k * (p * (1.0 - p) / n).sqrt();
        }
        if p <= 0.0 || p >= 1.0 {
            return self.rate() == p;
        }
        let Ok(bin) = Binomial::new(p, self.trials) else {
            return false;
        };
        let alpha = 0.5 * erfc(k / std::f64::consts::SQRT_2);
        let upper = if self.hits == 0 { 1.0 } else { bin.sf(self.hits - 1) };
        upper >= alpha && bin.cdf(self.hits) >= alpha
    }
}

/// Monte Carlo of the majority-vote error through the device model: each
/// trial writes a fresh bank whose replicas switch with `p_switch`, burst
/// reads it, and checks the activation against `mode`.
pub fn mc_bank_error_rate(
    p_switch: f64,
    n: usize,
    vote_threshold: usize,
    mode: ErrorMode,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    check_vote(p_switch, n, vote_threshold)?;
    const V_WRITE: f64 = 1.0;
    let cfg = BankConfig {
        n,
        vote_threshold,
        ..BankConfig::default()
    };
    let profile = Arc::new(SwitchingProfile::new(
        vec![
            ProfileEntry {
                initial_state: MtjState::AntiParallel,
                voltage_v: V_WRITE,
                pulse_width_s: cfg.write_width_s,
                p_switch,
            },
            // Keep reads below every switching knot.
            ProfileEntry {
                initial_state: MtjState::AntiParallel,
                voltage_v: 0.5,
                pulse_width_s: cfg.write_width_s,
                p_switch: 0.0,
            },
        ],
        Interpolation::Bilinear,
    )?);
    let template = NeuronBank::new(cfg, ResistanceModel::default(), profile)?;
    let comp = template.comparator();
    let want = mode == ErrorMode::ShouldActivate;
    let hits = try_batched_count(trials, seed, |rng, count| {
        let mut bank = template.clone();
        let mut errors = 0;
        for _ in 0..count {
            bank.reinitialize();
            bank.write_activation(V_WRITE, rng)?;
            if bank.burst_read(&comp)?.activation != want {
                errors += 1;
            }
        }
        Ok(errors)
    })?;
    Ok(McEstimate { hits, trials })
}

/// Monte Carlo of the reset loop: a single parallel replica is pulsed with
/// the bank's reset pulse; counts replicas still parallel afterwards.
pub fn mc_reset_residual(
    profile: Arc<SwitchingProfile>,
    cfg: BankConfig,
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    let one = BankConfig {
        n: 1,
        vote_threshold: 1,
        ..cfg
    };
    let template = NeuronBank::new(one, ResistanceModel::default(), profile)?;
    let hits = try_batched_count(trials, seed, |rng, count| {
        let mut bank = template.clone();
        let mut residual = 0;
        for _ in 0..count {
            bank.set_states(&[MtjState::Parallel])?;
            bank.reset_all(rng)?;
            if bank.devices[0].state() == MtjState::Parallel {
                residual += 1;
            }
        }
        Ok(residual)
    })?;
    Ok(McEstimate { hits, trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub p_switch: f64,
    pub mode: ErrorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedundancyConfig {
    pub n_values: Vec<usize>,
    /// Explicit vote thresholds; `ceil(n / 2)` when absent. Values above
    /// `n` are skipped for that `n`.
    pub vote_thresholds: Option<Vec<usize>>,
    pub points: Vec<OperatingPoint>,
    pub mc_trials: u64,
}

impl Default for RedundancyConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 2, 4, 6, 8, 12, 16],
            vote_thresholds: None,
            points: vec![
                OperatingPoint {
                    p_switch: 0.924,
                    mode: ErrorMode::ShouldActivate,
                },
                OperatingPoint {
                    p_switch: 0.062,
                    mode: ErrorMode::ShouldNotActivate,
                },
            ],
            mc_trials: 1_000_000,
        }
    }
}

impl RedundancyConfig {
    pub fn thresholds_for(&self, n: usize) -> Vec<usize> {
        match &self.vote_thresholds {
            Some(t) => t.iter().copied().filter(|&t| t >= 1 && t <= n).collect(),
            None => vec![n.div_ceil(2).max(1)],
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            errors.push("redundancy.n_values must be non-empty and positive".into());
        }
        for p in &self.points {
            if !(0.0..=1.0).contains(&p.p_switch) {
                errors.push(format!("redundancy.points: p_switch {} outside [0, 1]", p.p_switch));
            }
        }
        if self.mc_trials == 0 {
            errors.push("redundancy.mc_trials must be positive".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRow {
    pub n: usize,
    pub p_switch: f64,
    pub vote_threshold: usize,
    pub mode: ErrorMode,
    pub analytic_error: f64,
    pub mc_error: f64,
    pub mc_trials: u64,
}

/// Closed-form and Monte Carlo error for every `(n, threshold, point)`.
/// Row `i` draws from sub-seed `i` of `seed`.
pub fn redundancy_table(cfg: &RedundancyConfig, seed: u64) -> Result<Vec<RedundancyRow>> {
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        for t in cfg.thresholds_for(n) {
            for pt in &cfg.points {
                let mc = mc_bank_error_rate(
                    pt.p_switch,
                    n,
                    t,
                    pt.mode,
                    cfg.mc_trials,
                    derive_seed(seed, rows.len() as u64),
                )?;
                rows.push(RedundancyRow {
                    n,
                    p_switch: pt.p_switch,
                    vote_threshold: t,
                    mode: pt.mode,
                    analytic_error: bank_error_rate(pt.p_switch, n, t, pt.mode)?,
                    mc_error: mc.rate(),
                    mc_trials: cfg.mc_trials,
                });
            }
        }
    }
    Ok(rows)
}

fn try_batched_count<F>(trials: u64, seed: u64, f: F) -> Result<u64>
where
    F: Fn(&mut SimRng, u64) -> Result<u64> + Sync,
{
    let failure = std::sync::Mutex::new(None);
    let total = batched_count(trials, seed, |rng, n| match f(rng, n) {
        Ok(c) => c,
        Err(e) => {
            failure.lock().unwrap().get_or_insert(e);
            0
        }
    });
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
