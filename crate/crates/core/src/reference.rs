//! Built-in first-layer weights and the `PIPW` tensor naming they use.
//!
//! 32 filters of 3x3x3, signed 4-bit codes at 1/8 per step:
//!
//! | filters | kind |
//! |---------|------|
//! | 0..8    | luminance Sobel edges, 4 orientations x 2 polarities |
//! | 8..14   | flat color-opponent pairs |
//! | 14..20  | luminance line detectors, 3 orientations x 2 polarities |
//! | 20..32  | seeded random codes in [-7, 7] |
//!
//! Batch norm standardizes each channel for i.i.d. uniform input
//! (`mu = 0.5 * sum(w)`, `sigma^2 = sum(w^2) / 12`), and `v_th = 0.8` leaves
//! roughly 79 % of outputs inactive on such input.

use rand::Rng;

use crate::bnn::{BatchNorm, ConvWeights, FirstLayer, LayerSpec};
use crate::error::{Error, Result};
use crate::io::container::{Tensor, TensorSet};
use crate::pixel::QuantizedWeight;
use crate::rng::stream;

pub const WEIGHTS: &str = "conv1";
pub const BN_GAMMA: &str = "conv1.bn.gamma";
pub const BN_BETA: &str = "conv1.bn.beta";
pub const BN_MU: &str = "conv1.bn.mu";
pub const BN_SIGMA: &str = "conv1.bn.sigma";
pub const V_TH: &str = "conv1.v_th";

pub const CODE_SCALE: f64 = 1.0 / 8.0;
pub const REFERENCE_V_TH: f64 = 0.8;
const RANDOM_FILTER_SEED: u64 = 0x5EED_0C0A;

const SOBEL_X: [i8; 9] = [-1, 0, 1, -2, 0, 2, -1, 0, 1];
const SOBEL_Y: [i8; 9] = [-1, -2, -1, 0, 0, 0, 1, 2, 1];
const SOBEL_D1: [i8; 9] = [0, 1, 2, -1, 0, 1, -2, -1, 0];
const SOBEL_D2: [i8; 9] = [-2, -1, 0, -1, 0, 1, 0, 1, 2];
const LINE_V: [i8; 9] = [-1, 2, -1, -1, 2, -1, -1, 2, -1];
const LINE_H: [i8; 9] = [-1, -1, -1, 2, 2, 2, -1, -1, -1];
const LINE_D: [i8; 9] = [2, -1, -1, -1, 2, -1, -1, -1, 2];

/// Integer codes, `(32, 3, 3, 3)` row-major.
pub fn reference_codes() -> Vec<i8> {
    let mut codes = Vec::with_capacity(32 * 27);
    let mut luminance = |k: &[i8; 9], gain: i8| {
        for _ in 0..3 {
            codes.extend(k.iter().map(|&v| v * gain));
        }
    };
    for k in [&SOBEL_X, &SOBEL_Y, &SOBEL_D1, &SOBEL_D2] {
        luminance(k, 2);
        luminance(k, -2);
    }
    for (a, b) in [(0, 1), (1, 0), (2, 0), (0, 2), (1, 2), (2, 1)] {
        for c in 0..3 {
            let v = if c == a {
                4
            } else if c == b {
                -4
            } else {
                0
            };
            codes.extend([v; 9]);
        }
    }
    for k in [&LINE_V, &LINE_H, &LINE_D] {
        for gain in [2, -2] {
            for _ in 0..3 {
                codes.extend(k.iter().map(|&v| v * gain));
            }
        }
    }
    let mut rng = stream(RANDOM_FILTER_SEED, 0);
    codes.extend((0..12 * 27).map(|_| rng.random_range(-7i8..=7)));
    codes
}

fn uniform_input_bn(channel: &[f64]) -> BatchNorm {
    let sum: f64 = channel.iter().sum();
    let sq: f64 = channel.iter().map(|w| w * w).sum();
    BatchNorm {
        gamma: 1.0,
        beta: 0.0,
        mu: 0.5 * sum,
        sigma: (sq / 12.0).sqrt(),
    }
}

/// The reference layer as a tensor set (f32, as stored on disk).
pub fn reference_tensors() -> Result<TensorSet> {
    let weights: Vec<f64> = reference_codes()
        .into_iter()
        .map(|c| QuantizedWeight::new(c, CODE_SCALE).map(|q| q.value()))
        .collect::<Result<_>>()?;
    let bn: Vec<BatchNorm> = weights.chunks(27).map(uniform_input_bn).collect();
    let per_channel = |f: fn(&BatchNorm) -> f64| bn.iter().map(f).collect::<Vec<_>>();
    let mut t = TensorSet::new();
    t.insert(WEIGHTS.into(), Tensor::from_f64(vec![32, 3, 3, 3], &weights)?);
    t.insert(BN_GAMMA.into(), Tensor::from_f64(vec![32], &per_channel(|b| b.gamma))?);
    t.insert(BN_BETA.into(), Tensor::from_f64(vec![32], &per_channel(|b| b.beta))?);
    t.insert(BN_MU.into(), Tensor::from_f64(vec![32], &per_channel(|b| b.mu))?);
    t.insert(BN_SIGMA.into(), Tensor::from_f64(vec![32], &per_channel(|b| b.sigma))?);
    t.insert(V_TH.into(), Tensor::from_f64(vec![1], &[REFERENCE_V_TH])?);
    Ok(t)
}

fn tensor<'a>(set: &'a TensorSet, name: &str) -> Result<&'a Tensor> {
    set.get(name)
        .ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))
}

/// Builds a layer from `conv1` and its batch-norm tensors. Geometry comes
/// from `spec`; the kernel shape must match. A stored `conv1.v_th`
/// replaces `spec.v_th`. Missing batch-norm tensors default to identity.
pub fn first_layer_from_tensors(spec: &LayerSpec, set: &TensorSet) -> Result<FirstLayer> {
    let w = tensor(set, WEIGHTS)?;
    let [o, i, kh, kw] = w.dims[..] else {
        return Err(Error::Shape {
            expected: "rank-4 conv1 (out, in, k, k)".into(),
            actual: format!("{:?}", w.dims),
        });
    };
    if kh != kw {
        return Err(Error::Shape {
            expected: "square kernel".into(),
            actual: format!("{kh}x{kw}"),
        });
    }
    let weights = ConvWeights::new(o, i, kh, w.to_f64())?;
    let channel_vec = |name: &str, fill: f64| -> Result<Vec<f64>> {
        match set.get(name) {
            None => Ok(vec![fill; o]),
            Some(t) if t.data.len() == o => Ok(t.to_f64()),
            Some(t) => Err(Error::Shape {
                expected: format!("{name} with {o} values"),
                actual: format!("{:?}", t.dims),
            }),
        }
    };
    let (gamma, beta) = (channel_vec(BN_GAMMA, 1.0)?, channel_vec(BN_BETA, 0.0)?);
    let (mu, sigma) = (channel_vec(BN_MU, 0.0)?, channel_vec(BN_SIGMA, 1.0)?);
    let bn = (0..o)
        .map(|c| BatchNorm {
            gamma: gamma[c],
            beta: beta[c],
            mu: mu[c],
            sigma: sigma[c],
        })
        .collect();
    let mut spec = spec.clone();
    if let Some(t) = set.get(V_TH) {
        spec.v_th = *t
            .to_f64()
            .first()
            .ok_or_else(|| Error::Container("empty conv1.v_th".into()))?;
    }
    FirstLayer::new(spec, weights, bn)
}

/// The built-in reference layer with the given geometry.
pub fn reference_layer(spec: &LayerSpec) -> Result<FirstLayer> {
    first_layer_from_tensors(spec, &reference_tensors()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{forward_first_layer, Backend, HardwareModel, Image};
    use crate::io::container::{decode, encode};

    const SHIPPED: &[u8] = include_bytes!("../data/reference_conv1.pipw");

    #[test]
    fn codes_fit_four_bits() {
        let c = reference_codes();
        assert_eq!(c.len(), 32 * 27);
        assert!(c.iter().all(|&v| (-8..=7).contains(&v)));
        // every filter is non-trivial
        assert!(c.chunks(27).all(|f| f.iter().any(|&v| v != 0)));
    }

    #[test]
    fn shipped_file_matches_generator() {
        assert_eq!(encode(&reference_tensors().unwrap()).unwrap(), SHIPPED);
        let set = decode(SHIPPED).unwrap();
        assert_eq!(set[WEIGHTS].dims, vec![32, 3, 3, 3]);
    }

    #[test]
    fn sparsity_on_random_input() {
        let layer = reference_layer(&LayerSpec::default()).unwrap();
        let hw = HardwareModel::builtin().unwrap();
        let mut total = 0.0;
        for seed in 0..4 {
            let img = Image::random(3, 32, 32, &mut stream(seed, 0));
            total += forward_first_layer(&img, &layer, Backend::Ideal, &hw, seed)
                .unwrap()
                .sparsity;
        }
        let s = total / 4.0;
        assert!((0.70..=0.90).contains(&s), "{s}");
    }

    #[test]
    fn missing_weights_are_reported() {
        let mut set = reference_tensors().unwrap();
        set.remove(WEIGHTS);
        assert!(matches!(
            first_layer_from_tensors(&LayerSpec::default(), &set),
            Err(Error::Container(_))
        ));
    }

    /// Rewrites the shipped data files from the generators.
    #[test]
    #[ignore]
    fn regenerate_data_files() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        crate::io::container::save_weights(dir.join("reference_conv1.pipw"), &reference_tensors().unwrap()).unwrap();
        let profile = crate::mtj::SwitchingProfile::builtin(0.97).unwrap();
        std::fs::write(dir.join("default_switching_profile.csv"), profile.to_csv_string()).unwrap();
    }
}
