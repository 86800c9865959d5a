//! Behavioral VC-MTJ model: a two-state stochastic resistor.
//!
//! Switching is driven by an empirical [`SwitchingProfile`] (probability as a
//! function of initial state, pulse amplitude and pulse width). Reads are
//! state-selected resistance lookups and never touch the random stream.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MtjState {
    /// Low resistance. Read as an activated neuron.
    Parallel,
    /// High resistance. The reset state of every neuron.
    AntiParallel,
}

impl MtjState {
    pub const RESET: MtjState = MtjState::AntiParallel;

    pub fn flipped(self) -> Self {
        match self {
            MtjState::Parallel => MtjState::AntiParallel,
            MtjState::AntiParallel => MtjState::Parallel,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            MtjState::Parallel => "P",
            MtjState::AntiParallel => "AP",
        }
    }

    pub fn from_code(s: &str) -> Result<Self> {
        match s.trim() {
            "P" | "p" | "parallel" => Ok(MtjState::Parallel),
            "AP" | "ap" | "anti-parallel" | "antiparallel" => Ok(MtjState::AntiParallel),
            other => Err(Error::Config(format!("unknown initial_state {other:?}"))),
        }
    }

    fn index(self) -> usize {
        match self {
            MtjState::Parallel => 0,
            MtjState::AntiParallel => 1,
        }
    }
}

/// Resistance of the two states. `R_AP` droops linearly with bias magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistanceModel {
    pub r_p: f64,
    pub r_ap_zero_bias: f64,
    /// Fractional drop of `R_AP` per volt of |bias|.
    pub r_ap_voltage_slope: f64,
}

impl Default for ResistanceModel {
    fn default() -> Self {
        // TMR(0) = 1.6
        Self {
            r_p: 2_500.0,
            r_ap_zero_bias: 6_500.0,
            r_ap_voltage_slope: 0.25,
        }
    }
}

impl ResistanceModel {
    pub fn r_ap(&self, v: f64) -> f64 {
        self.r_ap_zero_bias * (1.0 - self.r_ap_voltage_slope * v.abs())
    }

    pub fn tmr(&self, v: f64) -> f64 {
        (self.r_ap(v) - self.r_p) / self.r_p
    }

    pub fn resistance(&self, state: MtjState, v: f64) -> f64 {
        match state {
            MtjState::Parallel => self.r_p,
            MtjState::AntiParallel => self.r_ap(v),
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.r_p > 0.0) {
            errors.push(format!("resistance.r_p must be positive (got {})", self.r_p));
        }
        if !(self.r_ap_voltage_slope >= 0.0) {
            errors.push("resistance.r_ap_voltage_slope must be non-negative".into());
        }
        if !(self.r_ap(1.0) > self.r_p) {
            errors.push("resistance: r_ap(v) must exceed r_p for all |v| <= 1 V".into());
        }
    }
}

/// Free function form of [`ResistanceModel::tmr`].
pub fn tmr(model: &ResistanceModel, v: f64) -> f64 {
    model.tmr(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    NearestNeighbor,
    #[default]
    Bilinear,
    /// Value of the greatest knot at or below the query. Turns a two-knot
    /// profile into an exact step at the upper knot.
    ZeroOrderHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub initial_state: MtjState,
    pub voltage_v: f64,
    pub pulse_width_s: f64,
    pub p_switch: f64,
}

/// Rectangular (voltage × width) table for one initial state.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    voltages: Vec<f64>,
    widths: Vec<f64>,
    /// Row-major: `p[vi * widths.len() + wi]`.
    p: Vec<f64>,
}

impl Grid {
    fn build(state: MtjState, entries: &[ProfileEntry]) -> Result<Option<Grid>> {
        let mine: Vec<&ProfileEntry> = entries.iter().filter(|e| e.initial_state == state).collect();
        if mine.is_empty() {
            return Ok(None);
        }
        let mut voltages: Vec<f64> = mine.iter().map(|e| e.voltage_v).collect();
        let mut widths: Vec<f64> = mine.iter().map(|e| e.pulse_width_s).collect();
        for v in [&mut voltages, &mut widths] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let mut p = vec![f64::NAN; voltages.len() * widths.len()];
        for e in &mine {
            let vi = voltages.partition_point(|&x| x < e.voltage_v);
            let wi = widths.partition_point(|&x| x < e.pulse_width_s);
            let slot = &mut p[vi * widths.len() + wi];
            if !slot.is_nan() {
                return Err(Error::Config(format!(
                    "duplicate profile entry ({}, {} V, {} s)",
                    state.code(),
                    e.voltage_v,
                    e.pulse_width_s
                )));
            }
            *slot = e.p_switch;
        }
        if p.iter().any(|x| x.is_nan()) {
            return Err(Error::Config(format!(
                "profile entries for initial state {} do not form a full voltage x width grid",
                state.code()
            )));
        }
        Ok(Some(Grid { voltages, widths, p }))
    }

    fn at(&self, vi: usize, wi: usize) -> f64 {
        self.p[vi * self.widths.len() + wi]
    }

    fn lookup(&self, v: f64, w: f64, interp: Interpolation) -> f64 {
        match interp {
            Interpolation::NearestNeighbor => self.at(nearest(&self.voltages, v), nearest(&self.widths, w)),
            Interpolation::ZeroOrderHold => self.at(floor_index(&self.voltages, v), floor_index(&self.widths, w)),
            Interpolation::Bilinear => {
                let (v0, v1, tv) = bracket(&self.voltages, v);
                let (w0, w1, tw) = bracket(&self.widths, w);
                let p = self.at(v0, w0) * (1.0 - tv) * (1.0 - tw)
                    + self.at(v1, w0) * tv * (1.0 - tw)
                    + self.at(v0, w1) * (1.0 - tv) * tw
                    + self.at(v1, w1) * tv * tw;
                p.clamp(0.0, 1.0)
            }
        }
    }

    /// Largest voltage below which the interpolant is zero at every width.
    fn zero_region_edge(&self, interp: Interpolation) -> f64 {
        let mut edge = f64::INFINITY;
        for wi in 0..self.widths.len() {
            let first = (0..self.voltages.len()).find(|&vi| self.at(vi, wi) > 0.0);
            let e = match first {
                None => f64::INFINITY,
                Some(0) => f64::NEG_INFINITY,
                Some(k) => match interp {
                    Interpolation::Bilinear => self.voltages[k - 1],
                    Interpolation::ZeroOrderHold => self.voltages[k],
                    Interpolation::NearestNeighbor => 0.5 * (self.voltages[k - 1] + self.voltages[k]),
                },
            };
            edge = edge.min(e);
        }
        edge
    }
}

fn nearest(knots: &[f64], x: f64) -> usize {
    let i = knots.partition_point(|&k| k < x);
    if i == 0 {
        0
    } else if i == knots.len() {
        knots.len() - 1
    } else if x - knots[i - 1] < knots[i] - x {
        i - 1
    } else {
        i
    }
}

fn floor_index(knots: &[f64], x: f64) -> usize {
    knots.partition_point(|&k| k <= x).saturating_sub(1)
}

/// Segment `(lo, hi, t)` containing `x`, clamped to the grid.
fn bracket(knots: &[f64], x: f64) -> (usize, usize, f64) {
    let n = knots.len();
    if n == 1 || x <= knots[0] {
        return (0, 0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = knots.partition_point(|&k| k <= x);
    let lo = hi - 1;
    let t = (x - knots[lo]) / (knots[hi] - knots[lo]);
    (lo, hi, t)
}

/// Empirical switching-probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingProfile {
    entries: Vec<ProfileEntry>,
    interpolation: Interpolation,
    grids: [Option<Grid>; 2],
}

impl SwitchingProfile {
    pub fn new(entries: Vec<ProfileEntry>, interpolation: Interpolation) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("switching profile is empty".into()));
        }
        for e in &entries {
            if !(0.0..=1.0).contains(&e.p_switch) {
                return Err(Error::Config(format!("p_switch {} outside [0, 1]", e.p_switch)));
            }
            if !(e.pulse_width_s > 0.0) || !(e.voltage_v >= 0.0) {
                return Err(Error::Config(format!(
                    "profile entry needs voltage >= 0 and width > 0 (got {} V, {} s)",
                    e.voltage_v, e.pulse_width_s
                )));
            }
        }
        let grids = [
            Grid::build(MtjState::Parallel, &entries)?,
            Grid::build(MtjState::AntiParallel, &entries)?,
        ];
        if let Some(g) = &grids[MtjState::AntiParallel.index()] {
            for wi in 0..g.widths.len() {
                for vi in 1..g.voltages.len() {
                    if g.at(vi, wi) < g.at(vi - 1, wi) {
                        return Err(Error::Config(format!(
                            "AP-initial switching probability decreases between {} V and {} V at {} s",
                            g.voltages[vi - 1],
                            g.voltages[vi],
                            g.widths[wi]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            entries,
            interpolation,
            grids,
        })
    }

    /// Measured anchors: AP→P at 700 ps of 6.2 % / 92.4 % / 97.17 % for
    /// 0.7 / 0.8 / 0.9 V, a zero-switching anchor at 0.5 V, and the
    /// 0.9 V / 500 ps P→AP reset pulse with probability `reset_probability`.
    pub fn builtin(reset_probability: f64) -> Result<Self> {
        use MtjState::*;
        let e = |s, v, w, p| ProfileEntry {
            initial_state: s,
            voltage_v: v,
            pulse_width_s: w,
            p_switch: p,
        };
        Self::new(
            vec![
                e(AntiParallel, 0.5, 700e-12, 0.0),
                e(AntiParallel, 0.7, 700e-12, 0.062),
                e(AntiParallel, 0.8, 700e-12, 0.924),
                e(AntiParallel, 0.9, 700e-12, 0.9717),
                e(Parallel, 0.5, 500e-12, 0.0),
                e(Parallel, 0.9, 500e-12, reset_probability),
            ],
            Interpolation::Bilinear,
        )
    }

    /// Deterministic device: AP→P with certainty at or above `v_sw`, never
    /// below; P→AP with certainty at or above `v_reset`.
    pub fn step(v_sw: f64, v_reset: f64) -> Result<Self> {
        use MtjState::*;
        let e = |s, v, p| ProfileEntry {
            initial_state: s,
            voltage_v: v,
            pulse_width_s: 1e-9,
            p_switch: p,
        };
        Self::new(
            vec![
                e(AntiParallel, 0.0, 0.0),
                e(AntiParallel, v_sw, 1.0),
                e(Parallel, 0.0, 0.0),
                e(Parallel, v_reset, 1.0),
            ],
            Interpolation::ZeroOrderHold,
        )
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn switching_probability(&self, initial: MtjState, v: f64, width: f64) -> Result<f64> {
        if !(width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pulse width must be positive (got {width})"
            )));
        }
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pulse amplitude must be >= 0 (got {v})"
            )));
        }
        let grid = self.grids[initial.index()].as_ref().ok_or_else(|| {
            Error::Config(format!(
                "switching profile has no entries for initial state {}",
                initial.code()
            ))
        })?;
        Ok(grid.lookup(v, width, self.interpolation))
    }

    /// Highest pulse amplitude that is guaranteed not to switch either
    /// state. Reads must stay strictly below it.
    pub fn write_threshold(&self) -> f64 {
        self.grids
            .iter()
            .flatten()
            .map(|g| g.zero_region_edge(self.interpolation))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, interpolation: Interpolation) -> Result<Self> {
        Self::new(read_entries_csv(reader)?, interpolation)
    }

    pub fn load_csv(path: impl AsRef<Path>, interpolation: Interpolation) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, interpolation)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("initial_state,voltage_v,pulse_width_s,p_switch\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{:e},{}\n",
                e.initial_state.code(),
                e.voltage_v,
                e.pulse_width_s,
                e.p_switch
            ));
        }
        out
    }
}

/// Rows of a profile CSV (`initial_state,voltage_v,pulse_width_s,p_switch`)
/// without grid validation.
pub fn read_entries_csv<R: std::io::Read>(reader: R) -> Result<Vec<ProfileEntry>> {
    #[derive(Deserialize)]
    struct Row {
        initial_state: String,
        voltage_v: f64,
        pulse_width_s: f64,
        p_switch: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["initial_state", "voltage_v", "pulse_width_s", "p_switch"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Config(format!(
            "switching profile header must be `{}`",
            expected.join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        entries.push(ProfileEntry {
            initial_state: MtjState::from_code(&row.initial_state)?,
            voltage_v: row.voltage_v,
            pulse_width_s: row.pulse_width_s,
            p_switch: row.p_switch,
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub samples: usize,
    pub knots: usize,
    /// Knots moved by the monotone projection.
    pub adjusted_knots: usize,
    pub max_adjustment: f64,
}

/// Builds a profile from repeated, noisy measurements: duplicate
/// `(state, voltage, width)` rows are averaged, then each `(state, width)`
/// curve is projected onto non-decreasing functions of voltage
/// (pool-adjacent-violators, weighted by sample count).
pub fn fit_profile(samples: &[ProfileEntry], interpolation: Interpolation) -> Result<(SwitchingProfile, FitSummary)> {
    use std::collections::BTreeMap;
    // keyed by (state, width bits, voltage bits); positive floats order by bits
    let mut groups: BTreeMap<(u8, u64, u64), (f64, usize)> = BTreeMap::new();
    for e in samples {
        if !(e.voltage_v >= 0.0 && e.pulse_width_s > 0.0 && (0.0..=1.0).contains(&e.p_switch)) {
            return Err(Error::InvalidArgument(format!("bad measurement {e:?}")));
        }
        let key = (
            (e.initial_state == MtjState::Parallel) as u8,
            e.pulse_width_s.to_bits(),
            (e.voltage_v + 0.0).to_bits(),
        );
        let g = groups.entry(key).or_insert((0.0, 0));
        g.0 += e.p_switch;
        g.1 += 1;
    }
    let mut entries = Vec::with_capacity(groups.len());
    let mut summary = FitSummary {
        samples: samples.len(),
        knots: groups.len(),
        adjusted_knots: 0,
        max_adjustment: 0.0,
    };
    let mut curve: Vec<(f64, f64, usize)> = Vec::new();
    let mut flush = |curve: &mut Vec<(f64, f64, usize)>, state: u8, width: u64| {
        let fitted = isotonic(&curve.iter().map(|&(_, p, n)| (p, n as f64)).collect::<Vec<_>>());
        for (&(v, p, _), q) in curve.iter().zip(fitted) {
            let d = (q - p).abs();
            if d > 1e-12 {
                summary.adjusted_knots += 1;
                summary.max_adjustment = summary.max_adjustment.max(d);
            }
            entries.push(ProfileEntry {
                initial_state: if state == 1 {
                    MtjState::Parallel
                } else {
                    MtjState::AntiParallel
                },
                voltage_v: v,
                pulse_width_s: f64::from_bits(width),
                p_switch: q,
            });
        }
        curve.clear();
    };
    let mut current = None;
    for (&(state, width, v), &(sum, n)) in &groups {
        if current.is_some_and(|c| c != (state, width)) {
            let (s, w) = current.unwrap();
            flush(&mut curve, s, w);
        }
        current = Some((state, width));
        curve.push((f64::from_bits(v), sum / n as f64, n));
    }
    if let Some((s, w)) = current {
        flush(&mut curve, s, w);
    }
    Ok((SwitchingProfile::new(entries, interpolation)?, summary))
}

/// Weighted least-squares non-decreasing fit.
fn isotonic(points: &[(f64, f64)]) -> Vec<f64> {
    // blocks of (mean, weight, len)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for &(y, w) in points {
        blocks.push((y, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, w2, l2) = blocks.pop().unwrap();
            let (m1, w1, l1) = blocks.pop().unwrap();
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, l1 + l2));
        }
    }
    blocks.iter().flat_map(|&(m, _, l)| std::iter::repeat_n(m, l)).collect()
}

/// Free function form of [`SwitchingProfile::switching_probability`].
pub fn switching_probability(profile: &SwitchingProfile, initial: MtjState, v: f64, width: f64) -> Result<f64> {
    profile.switching_probability(initial, v, width)
}

#[derive(Debug, Clone)]
pub struct MtjDevice {
    state: MtjState,
    resistance: ResistanceModel,
    profile: Arc<SwitchingProfile>,
}

impl MtjDevice {
    pub fn new(resistance: ResistanceModel, profile: Arc<SwitchingProfile>) -> Self {
        Self {
            state: MtjState::RESET,
            resistance,
            profile,
        }
    }

    pub fn with_state(mut self, state: MtjState) -> Self {
        self.state = state;
        self
    }

    pub fn state(&self) -> MtjState {
        self.state
    }

    pub fn resistance_model(&self) -> &ResistanceModel {
        &self.resistance
    }

    pub fn profile(&self) -> &SwitchingProfile {
        &self.profile
    }

    /// Applies one write-polarity pulse; the state toggles with the profile's
    /// probability for the current state.
    pub fn apply_pulse<R: Rng + ?Sized>(&mut self, v: f64, width: f64, rng: &mut R) -> Result<MtjState> {
        let p = self.profile.switching_probability(self.state, v, width)?;
        // random() is in [0, 1): p = 0 never flips, p = 1 always flips.
        if rng.random::<f64>() < p {
            self.state = self.state.flipped();
        }
        Ok(self.state)
    }

    pub fn read_resistance(&self, v_read: f64) -> Result<f64> {
        let threshold = self.profile.write_threshold();
        if !(v_read.abs() < threshold) {
            return Err(Error::ReadDisturb { v_read, threshold });
        }
        Ok(self.resistance.resistance(self.state, v_read))
    }
}
