//! Cross-module invariants, checked with property tests against small
//! reference computations written here.

use std::sync::Arc;

use pixsim_core::bnn::{
    binary_activate, forward_first_layer, fuse_batchnorm, inject_errors, ActivationTensor, Backend, BatchNorm,
    BinaryTensor, ConvWeights, ErrorInjection, FirstLayer, HardwareModel, Image, LayerSpec, ThresholdMode,
};
use pixsim_core::io::config::{parse_config, SimConfig};
use pixsim_core::io::image::{demosaic, BayerFrame};
use pixsim_core::metrics::{compression_ratio, csr_size, GeometrySpec, RatioOrientation};
use pixsim_core::mtj::{Interpolation, MtjDevice, MtjState, ResistanceModel, SwitchingProfile};
use pixsim_core::neuron::{bank_error_rate, BankConfig, ErrorMode, NeuronBank};
use pixsim_core::pixel::{unit_convolve, SubtractorConfig, TransferCurve};
use pixsim_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

const AP_WIDTH: f64 = 700e-12;
const P_WIDTH: f64 = 500e-12;

fn profile(interp: Interpolation) -> SwitchingProfile {
    SwitchingProfile::builtin(0.97).unwrap().with_interpolation(interp)
}

#[test]
fn tabulated_switching_points() {
    let p = profile(Interpolation::Bilinear);
    let ap = |v| p.switching_probability(MtjState::AntiParallel, v, AP_WIDTH).unwrap();
    assert_eq!(ap(0.8), 0.924);
    assert_eq!(ap(0.7), 0.062);
    assert!((ap(0.75) - (0.062 + 0.924) / 2.0).abs() < 1e-12);
    assert_eq!(ap(0.3), 0.0);
    assert_eq!(p.switching_probability(MtjState::Parallel, 0.9, P_WIDTH).unwrap(), 0.97);
    assert!(p.write_threshold() >= 0.5 - 1e-12);
}

#[test]
fn zero_order_hold_steps_at_knots() {
    let p = profile(Interpolation::ZeroOrderHold);
    let ap = |v| p.switching_probability(MtjState::AntiParallel, v, AP_WIDTH).unwrap();
    assert_eq!(ap(0.799), 0.062);
    assert_eq!(ap(0.8), 0.924);
}

#[test]
fn spec_bank_example() {
    // N = 8 with majority threshold 4 at the two write levels.
    let miss = bank_error_rate(0.924, 8, 4, ErrorMode::ShouldActivate).unwrap();
    let spurious = bank_error_rate(0.062, 8, 4, ErrorMode::ShouldNotActivate).unwrap();
    assert!(miss < 1e-3 && spurious < 1e-3, "{miss} {spurious}");
}

#[test]
fn reads_below_the_write_threshold_never_switch() {
    let prof = Arc::new(profile(Interpolation::Bilinear));
    let guard = prof.write_threshold();
    let mut rng = stream(1, 0);
    for state in [MtjState::AntiParallel, MtjState::Parallel] {
        let mut d = MtjDevice::new(ResistanceModel::default(), prof.clone()).with_state(state);
        for _ in 0..10_000 {
            let v = rng.random_range(0.0..guard);
            assert_eq!(d.apply_pulse(v, AP_WIDTH, &mut rng).unwrap(), state);
        }
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(parse_config(r#"{ "seed": 1, "sede": 2 }"#).is_err());
    assert!(parse_config(r#"{ "timing": { "t_int": 5e-6, "t_integ": 1 } }"#).is_err());
    let cfg = parse_config("{}").unwrap();
    assert_eq!(cfg, SimConfig::default());
    assert_eq!(parse_config(&cfg.to_json().unwrap()).unwrap(), cfg);
}

#[test]
fn constant_bayer_frame_demosaics_to_gray() {
    let frame = BayerFrame::new(6, 4, 12, vec![2047; 24]).unwrap();
    let img = demosaic(&frame).unwrap();
    assert!(img.data.iter().all(|&v| (v - 2047.0 / 4095.0).abs() < 1e-12));
}

#[test]
fn compression_orientations_are_reciprocal_up_to_the_bit_factor() {
    let g = GeometrySpec::default();
    let a = compression_ratio(&g, RatioOrientation::InputOverOutput).unwrap();
    let b = compression_ratio(&g, RatioOrientation::AsPrinted).unwrap();
    let k = 12.0 * 4.0 / 3.0;
    assert!((a * b - k * k).abs() < 1e-9);
    assert!((compression_ratio(&g.pooled(2), RatioOrientation::InputOverOutput).unwrap() - 24.0).abs() < 1e-12);
}

fn small_layer(seed: u64, channels: usize, mode: ThresholdMode, padding: usize) -> FirstLayer {
    let mut rng = stream(seed, 0);
    let spec = LayerSpec {
        out_channels: channels,
        padding,
        v_th: rng.random_range(0.3..1.5),
        threshold_mode: mode,
        ..LayerSpec::default()
    };
    let weights = ConvWeights::new(
        channels,
        3,
        3,
        (0..channels * 27).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let bn = (0..channels)
        .map(|_| BatchNorm {
            gamma: rng.random_range(-2.0..2.0),
            beta: rng.random_range(-0.5..0.5),
            mu: rng.random_range(-1.0..1.0),
            sigma: rng.random_range(0.2..2.0),
        })
        .collect();
    FirstLayer::new(spec, weights, bn).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn switching_probability_is_a_probability(
        v in 0.0f64..1.5,
        w in 100e-12f64..2e-9,
        interp in prop_oneof![
            Just(Interpolation::Bilinear),
            Just(Interpolation::NearestNeighbor),
            Just(Interpolation::ZeroOrderHold),
        ],
    ) {
        let p = profile(interp);
        for s in [MtjState::AntiParallel, MtjState::Parallel] {
            let x = p.switching_probability(s, v, w).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn switching_is_monotone_in_voltage(a in 0.0f64..1.2, b in 0.0f64..1.2) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for interp in [Interpolation::Bilinear, Interpolation::NearestNeighbor, Interpolation::ZeroOrderHold] {
            let p = profile(interp);
            let f = |v| p.switching_probability(MtjState::AntiParallel, v, AP_WIDTH).unwrap();
            prop_assert!(f(lo) <= f(hi) + 1e-15);
        }
    }

    #[test]
    fn bank_error_falls_with_more_replicas(p in 0.55f64..0.99) {
        // Odd n with strict majority; the error is non-increasing in n.
        let mut last = 1.0;
        for n in [1usize, 3, 5, 7, 9, 11] {
            let e = bank_error_rate(p, n, n / 2 + 1, ErrorMode::ShouldActivate).unwrap();
            prop_assert!(e <= last + 1e-15);
            last = e;
        }
    }

    #[test]
    fn threshold_matching_on_the_ideal_curve(
        w in prop::collection::vec(-1.0f64..1.0, 27),
        x in prop::collection::vec(0.0f64..1.0, 27),
        theta in -2.0f64..2.0,
    ) {
        let cfg = SubtractorConfig::default().with_normalized_threshold(theta);
        let v = unit_convolve(&w, &TransferCurve::Identity, &cfg, &x).unwrap();
        let dot: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        prop_assert!((0.0..=cfg.vdd).contains(&v));
        if v > 0.0 && v < cfg.vdd && (dot - theta).abs() > 1e-9 {
            prop_assert_eq!(dot >= theta, v >= cfg.v_sw);
        }
    }

    #[test]
    fn fused_batchnorm_preserves_bits(seed in any::<u64>(), padding in 0usize..2) {
        let layer = small_layer(seed, 4, ThresholdMode::UnitThreshold, padding);
        let img = Image::random(3, 9, 9, &mut stream(seed, 1));
        let plain = binary_activate(&layer.preactivations(&img).unwrap(), layer.spec.v_th, ThresholdMode::UnitThreshold).unwrap();
        let (fused, shift) = fuse_batchnorm(&layer.weights, &layer.bn).unwrap();
        let mut u = layer.convolve(&img, &fused).unwrap();
        let per = u.dims.1 * u.dims.2;
        u.values.iter_mut().enumerate().for_each(|(k, v)| *v += shift[k / per]);
        let fused_bits = binary_activate(&u, layer.spec.v_th, ThresholdMode::UnitThreshold).unwrap();
        prop_assert_eq!(plain, fused_bits);
    }

    #[test]
    fn ideal_limit_hardware_matches_ideal(seed in any::<u64>(), hoyer in any::<bool>()) {
        let mode = if hoyer { ThresholdMode::HoyerScaled } else { ThresholdMode::UnitThreshold };
        let layer = small_layer(seed, 4, mode, 1);
        let img = Image::random(3, 11, 11, &mut stream(seed, 1));
        let hw = HardwareModel::ideal_limit().unwrap();
        let ideal = forward_first_layer(&img, &layer, Backend::Ideal, &hw, seed).unwrap();
        for b in [Backend::HardwareCurve, Backend::HardwareStochastic] {
            let out = forward_first_layer(&img, &layer, b, &hw, seed).unwrap();
            prop_assert_eq!(&out.bits, &ideal.bits);
            prop_assert_eq!(out.threshold_scale, ideal.threshold_scale);
        }
    }

    #[test]
    fn hoyer_bits_cover_unit_bits(values in prop::collection::vec(-2.0f64..3.0, 1..200), v_th in 0.1f64..2.0) {
        let u = ActivationTensor { dims: (1, 1, values.len()), values };
        let unit = binary_activate(&u, v_th, ThresholdMode::UnitThreshold).unwrap();
        let scaled = binary_activate(&u, v_th, ThresholdMode::HoyerScaled).unwrap();
        prop_assert!(unit.bits.iter().zip(&scaled.bits).all(|(a, b)| !a | b));
    }

    #[test]
    fn injected_flips_stay_within_a_binomial_bound(
        seed in any::<u64>(),
        eps_10 in 0.0f64..0.3,
        eps_01 in 0.0f64..0.3,
    ) {
        let bits = BinaryTensor::random((4, 32, 32), 0.3, &mut stream(seed, 7));
        let out = inject_errors(&bits, &ErrorInjection { eps_10, eps_01, seed }).unwrap();
        let ones = bits.count_ones() as f64;
        let zeros = bits.len() as f64 - ones;
        let down = bits.bits.iter().zip(&out.bits).filter(|(a, b)| **a && !**b).count() as f64;
        let up = bits.bits.iter().zip(&out.bits).filter(|(a, b)| !**a && **b).count() as f64;
        // Six sigma plus slack for tiny means; fails with probability < 1e-8 per case.
        let within = |k: f64, n: f64, p: f64| (k - n * p).abs() <= 6.0 * (n * p * (1.0 - p)).sqrt() + 3.0;
        prop_assert!(within(down, ones, eps_10), "{down} of {ones} at {eps_10}");
        prop_assert!(within(up, zeros, eps_01), "{up} of {zeros} at {eps_01}");
        prop_assert_eq!(inject_errors(&bits, &ErrorInjection { eps_10: 0.0, eps_01: 0.0, seed }).unwrap(), bits);
    }

    #[test]
    fn larger_epsilon_flips_a_superset(seed in any::<u64>(), a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let bits = BinaryTensor::random((2, 16, 16), 0.5, &mut stream(seed, 3));
        let f = |e| inject_errors(&bits, &ErrorInjection { eps_10: e, eps_01: e, seed }).unwrap();
        let (small, large) = (f(lo), f(hi));
        for ((orig, s), l) in bits.bits.iter().zip(&small.bits).zip(&large.bits) {
            prop_assert!(s == orig || l != orig);
        }
    }

    #[test]
    fn csr_is_never_chosen_when_larger(density in 0.0f64..1.0, seed in any::<u64>()) {
        let bits = BinaryTensor::random((8, 16, 16), density, &mut stream(seed, 0));
        let size = csr_size(&bits);
        prop_assert!(size.chosen() <= size.dense_bits);
        prop_assert_eq!(size.chosen() == size.csr_bits, size.csr_bits <= size.dense_bits);
    }

    #[test]
    fn bayer_frames_round_trip(w in 1usize..12, h in 1usize..12, depth in 1u32..=16, seed in any::<u64>()) {
        let (w, h) = (2 * w, 2 * h);
        let mut rng = stream(seed, 0);
        let max = ((1u32 << depth) - 1) as u16;
        let samples: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..=max)).collect();
        let frame = BayerFrame::new(w, h, depth, samples).unwrap();
        prop_assert_eq!(BayerFrame::decode(&frame.encode()).unwrap(), frame.clone());
        let img = demosaic(&frame).unwrap();
        // Native sites pass through unchanged.
        for y in 0..h {
            for x in 0..w {
                let c = BayerFrame::color_at(y, x);
                prop_assert_eq!(img.at(c, y, x), frame.samples[y * w + x] as f64 / max as f64);
            }
        }
    }

    #[test]
    fn bank_activation_counts_track_switched_replicas(seed in any::<u64>(), v in 0.6f64..0.95) {
        let prof = Arc::new(profile(Interpolation::Bilinear));
        let mut bank = NeuronBank::new(BankConfig::default(), ResistanceModel::default(), prof).unwrap();
        let comp = bank.comparator();
        let mut rng = stream(seed, 0);
        bank.write_activation(v, &mut rng).unwrap();
        let switched = bank.states().iter().filter(|&&s| s == MtjState::Parallel).count();
        let read = bank.burst_read(&comp).unwrap();
        prop_assert_eq!(read.activation, switched >= bank.config().vote_threshold);
        bank.reset_all(&mut rng).unwrap();
    }
}
