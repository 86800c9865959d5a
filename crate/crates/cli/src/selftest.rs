//! Internal consistency checks: closed form against Monte Carlo, the circuit
//! against the ideal layer, and the system models against their budgets.

use std::sync::Arc;

use pixsim_core::bnn::{
    binary_activate, forward_first_layer, fuse_batchnorm, hoyer_extremum, ActivationTensor, Backend, BatchNorm,
    ConvWeights, FirstLayer, HardwareModel, Image, LayerSpec, ThresholdMode,
};
use pixsim_core::metrics::{
    compression_ratio, csr_size, frame_time, frontend_energy, Architecture, EnergyConfig, GeometrySpec, Parallelism,
    RatioOrientation, TimingConfig, Workload,
};
use pixsim_core::mtj::{MtjDevice, MtjState};
use pixsim_core::neuron::{bank_error_rate, mc_bank_error_rate, mc_reset_residual, ErrorMode, McEstimate};
use pixsim_core::pixel::{unit_convolve, SubtractorConfig, TransferCurve};
use pixsim_core::rng::{batched_count, derive_seed, stream, SimRng};
use pixsim_core::{Result, SimConfig};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::commands::{workload_map, FRAME_BUDGET_S};
use crate::output::OutputDir;

const MC_TRIALS: u64 = 200_000;

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    values: Value,
}

fn check(name: &'static str, passed: bool, values: Value) -> Check {
    Check { name, passed, values }
}

pub fn run(cfg: &SimConfig, out: &mut OutputDir) -> Result<bool> {
    let seed = |k: u64| derive_seed(cfg.seed, k);
    let checks = vec![
        bank_closed_form()?,
        bank_monte_carlo(seed(1))?,
        switching_monte_carlo(cfg, seed(2))?,
        reset_monte_carlo(cfg, seed(3))?,
        threshold_matching(seed(4))?,
        bn_fusion(seed(5))?,
        backend_ladder(seed(6))?,
        hoyer(seed(7))?,
        system_models(cfg)?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    out.write_json("selftest.json", &json!({ "passed": passed, "checks": checks }))?;
    Ok(passed)
}

fn bank_closed_form() -> Result<Check> {
    let miss = bank_error_rate(0.924, 8, 4, ErrorMode::ShouldActivate)?;
    let spurious = bank_error_rate(0.062, 8, 4, ErrorMode::ShouldNotActivate)?;
    Ok(check(
        "bank_error_below_0.1_percent",
        miss < 1e-3 && spurious < 1e-3,
        json!({ "missed_activation": miss, "spurious_activation": spurious }),
    ))
}

fn bank_monte_carlo(seed: u64) -> Result<Check> {
    let mut values = Vec::new();
    let mut ok = true;
    for (i, (p, n, t, mode)) in [
        (0.924, 8, 4, ErrorMode::ShouldActivate),
        (0.062, 8, 4, ErrorMode::ShouldNotActivate),
        (0.7, 3, 2, ErrorMode::ShouldActivate),
        (0.3, 5, 3, ErrorMode::ShouldNotActivate),
    ]
    .into_iter()
    .enumerate()
    {
        let exact = bank_error_rate(p, n, t, mode)?;
        let mc = mc_bank_error_rate(p, n, t, mode, MC_TRIALS, derive_seed(seed, i as u64))?;
        ok &= mc.agrees_with(exact, 4.0);
        values.push(json!({ "p": p, "n": n, "t": t, "mode": mode, "exact": exact, "mc": mc.rate() }));
    }
    Ok(check("bank_error_mc_within_4_sigma", ok, json!(values)))
}

fn switching_monte_carlo(cfg: &SimConfig, seed: u64) -> Result<Check> {
    let profile = Arc::new(cfg.device.profile()?);
    let width = cfg.bank.write_width_s;
    let mut values = Vec::new();
    let mut ok = true;
    for (i, v) in [0.7, 0.75, 0.8].into_iter().enumerate() {
        let p = profile.switching_probability(MtjState::AntiParallel, v, width)?;
        let template = MtjDevice::new(cfg.device.resistance, profile.clone());
        let hits = try_count(MC_TRIALS, derive_seed(seed, i as u64), |rng, n| {
            let mut switched = 0;
            for _ in 0..n {
                let mut d = template.clone();
                if d.apply_pulse(v, width, rng)? == MtjState::Parallel {
                    switched += 1;
                }
            }
            Ok(switched)
        })?;
        let mc = McEstimate {
            hits,
            trials: MC_TRIALS,
        };
        ok &= mc.agrees_with(p, 4.0);
        values.push(json!({ "voltage_v": v, "profile": p, "mc": mc.rate() }));
    }
    Ok(check("switching_probability_mc_within_4_sigma", ok, json!(values)))
}

fn reset_monte_carlo(cfg: &SimConfig, seed: u64) -> Result<Check> {
    let profile = Arc::new(cfg.device.profile()?);
    let p = profile.switching_probability(MtjState::Parallel, cfg.bank.reset_voltage_v, cfg.bank.reset_width_s)?;
    let expect = (1.0 - p).powi(cfg.bank.max_reset_attempts as i32);
    let mc = mc_reset_residual(profile, cfg.bank, MC_TRIALS, seed)?;
    Ok(check(
        "reset_residual_mc_within_4_sigma",
        mc.agrees_with(expect, 4.0),
        json!({ "expected": expect, "mc": mc.rate() }),
    ))
}

fn try_count<F>(trials: u64, seed: u64, f: F) -> Result<u64>
where
    F: Fn(&mut SimRng, u64) -> Result<u64> + Sync,
{
    let failed = std::sync::atomic::AtomicBool::new(false);
    let n = batched_count(trials, seed, |rng, n| {
        f(rng, n).unwrap_or_else(|_| {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            0
        })
    });
    if failed.into_inner() {
        return Err(pixsim_core::Error::InvalidArgument("pulse simulation failed".into()));
    }
    Ok(n)
}

fn threshold_matching(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, 0);
    let (mut agree, mut tested, mut saturated) = (0u32, 0u32, 0u32);
    for _ in 0..1000 {
        let w: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
        let theta = rng.random_range(-2.0..2.0);
        let cfg = SubtractorConfig::default().with_normalized_threshold(theta);
        let v = unit_convolve(&w, &TransferCurve::Identity, &cfg, &x)?;
        if v <= 0.0 || v >= cfg.vdd {
            saturated += 1;
            continue;
        }
        let dot: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        tested += 1;
        agree += u32::from((dot >= theta) == (v >= cfg.v_sw));
    }
    Ok(check(
        "threshold_matching",
        agree == tested,
        json!({ "tested": tested, "agree": agree, "saturated": saturated }),
    ))
}

fn random_layer(rng: &mut SimRng, mode: ThresholdMode) -> Result<FirstLayer> {
    let spec = LayerSpec {
        out_channels: 4,
        v_th: rng.random_range(0.3..1.5),
        threshold_mode: mode,
        ..LayerSpec::default()
    };
    let weights = ConvWeights::new(4, 3, 3, (0..4 * 27).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let bn = (0..4)
        .map(|_| BatchNorm {
            gamma: rng.random_range(0.5..2.0),
            beta: rng.random_range(-0.5..0.5),
            mu: rng.random_range(-1.0..1.0),
            sigma: rng.random_range(0.5..2.0),
        })
        .collect();
    FirstLayer::new(spec, weights, bn)
}

fn bn_fusion(seed: u64) -> Result<Check> {
    let mut mismatches = 0usize;
    for i in 0..20 {
        let mut rng = stream(seed, i);
        let layer = random_layer(&mut rng, ThresholdMode::UnitThreshold)?;
        let img = Image::random(3, 11, 11, &mut rng);
        let plain = binary_activate(
            &layer.preactivations(&img)?,
            layer.spec.v_th,
            ThresholdMode::UnitThreshold,
        )?;
        let (fused, shift) = fuse_batchnorm(&layer.weights, &layer.bn)?;
        let mut u = layer.convolve(&img, &fused)?;
        let per = u.dims.1 * u.dims.2;
        u.values.iter_mut().enumerate().for_each(|(k, v)| *v += shift[k / per]);
        let fused_bits = binary_activate(&u, layer.spec.v_th, ThresholdMode::UnitThreshold)?;
        mismatches += plain.bits.iter().zip(&fused_bits.bits).filter(|(a, b)| a != b).count();
    }
    Ok(check(
        "bn_fusion_bit_equality",
        mismatches == 0,
        json!({ "instances": 20, "mismatches": mismatches }),
    ))
}

fn backend_ladder(seed: u64) -> Result<Check> {
    let hw = HardwareModel::ideal_limit()?;
    let mut mismatches = 0usize;
    for i in 0..4 {
        let mut rng = stream(seed, i);
        let mode = if i % 2 == 0 {
            ThresholdMode::UnitThreshold
        } else {
            ThresholdMode::HoyerScaled
        };
        let layer = random_layer(&mut rng, mode)?;
        let img = Image::random(3, 15, 15, &mut rng);
        let ideal = forward_first_layer(&img, &layer, Backend::Ideal, &hw, i)?.bits;
        for backend in [Backend::HardwareCurve, Backend::HardwareStochastic] {
            let bits = forward_first_layer(&img, &layer, backend, &hw, i)?.bits;
            mismatches += ideal.bits.iter().zip(&bits.bits).filter(|(a, b)| a != b).count();
        }
    }
    Ok(check(
        "backend_ladder_bit_equality",
        mismatches == 0,
        json!({ "frames": 4, "mismatches": mismatches }),
    ))
}

fn hoyer(seed: u64) -> Result<Check> {
    let mut rng = stream(seed, 0);
    let constant = hoyer_extremum(&[0.37; 64]);
    let mut dominated = true;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let u = ActivationTensor {
            dims: (1, 1, n),
            values: (0..n).map(|_| rng.random_range(-1.0..2.0)).collect(),
        };
        let unit = binary_activate(&u, 1.0, ThresholdMode::UnitThreshold)?;
        let scaled = binary_activate(&u, 1.0, ThresholdMode::HoyerScaled)?;
        dominated &= unit.bits.iter().zip(&scaled.bits).all(|(a, b)| !a | b);
    }
    Ok(check(
        "hoyer_properties",
        (constant - 0.37).abs() < 1e-12 && dominated,
        json!({ "constant_tensor_extremum": constant, "superset_on_100_tensors": dominated }),
    ))
}

fn system_models(cfg: &SimConfig) -> Result<Check> {
    let g = GeometrySpec::default();
    let c = compression_ratio(&g, RatioOrientation::InputOverOutput)?;
    let t = frame_time(&TimingConfig::default(), &g).frame_time_s;
    let serial = frame_time(
        &TimingConfig {
            parallelism: Parallelism::Serial,
            ..TimingConfig::default()
        },
        &g,
    )
    .frame_time_s;
    let e = EnergyConfig::calibrated();
    let w = Workload::default();
    let ip = frontend_energy(&e, &g, &w, Architecture::InPixel);
    let vs_base = frontend_energy(&e, &g, &w, Architecture::Baseline) / ip;
    let vs_insensor = frontend_energy(&e, &g, &w, Architecture::InSensor) / ip;
    let size = csr_size(&workload_map(cfg));
    let passed = (c - 6.0).abs() < 1e-9
        && t < FRAME_BUDGET_S
        && serial > FRAME_BUDGET_S
        && (vs_base / 8.2 - 1.0).abs() < 0.05
        && (vs_insensor / 8.0 - 1.0).abs() < 0.05
        && size.chosen() <= size.dense_bits;
    Ok(check(
        "system_models",
        passed,
        json!({
            "C": c,
            "frame_time_s": t,
            "serial_frame_time_s": serial,
            "frontend_ratio_vs_baseline": vs_base,
            "frontend_ratio_vs_in_sensor": vs_insensor,
            "coded_bits": size.chosen(),
            "dense_bits": size.dense_bits,
        }),
    ))
}
