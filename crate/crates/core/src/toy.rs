//! Synthetic 10-class task for measuring how activation errors in the first
//! layer degrade classification.
//!
//! Images are 32x32 RGB oriented gratings: five orientations times two
//! spatial frequencies, with random phase, contrast, brightness, color tint
//! and pixel noise. Features are the binary first-layer map of the
//! reference layer; the classifier is a single softmax layer over those
//! bits, trained by seeded SGD.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{forward_first_layer, Backend, BinaryTensor, FirstLayer, HardwareModel, Image};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

pub const CLASSES: usize = 10;

const SALT_TRAIN: u64 = 1;
const SALT_TEST: u64 = 2;
const SALT_SGD: u64 = 3;
const SALT_INJECT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Values used for both flip directions.
    pub eps_grid: Vec<f64>,
    pub seeds: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub image_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Allowed accuracy rise, in percentage points, between neighboring
    /// grid points before a step counts as non-monotone.
    pub monotone_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_grid: vec![0.0, 0.001, 0.01, 0.03, 0.1, 0.2],
            seeds: 5,
            train_samples: 4000,
            test_samples: 1000,
            image_size: 32,
            epochs: 20,
            learning_rate: 0.02,
            l2: 1e-3,
            monotone_tolerance: 0.5,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
            errors.push("sweep.eps_grid must be non-empty with values in [0, 1]".into());
        }
        if self.eps_grid.windows(2).any(|w| w[0] >= w[1]) {
            errors.push("sweep.eps_grid must be strictly increasing".into());
        }
        for (name, v) in [
            ("sweep.seeds", self.seeds as usize),
            ("sweep.train_samples", self.train_samples),
            ("sweep.test_samples", self.test_samples),
            ("sweep.epochs", self.epochs),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        }
        if self.image_size < 8 {
            errors.push("sweep.image_size must be at least 8".into());
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || !(self.monotone_tolerance >= 0.0) {
            errors.push("sweep.learning_rate must be positive; l2 and monotone_tolerance non-negative".into());
        }
    }
}

/// One labeled grating image.
pub fn grating(label: usize, size: usize, rng: &mut impl Rng) -> Image {
    let theta = (label % 5) as f64 * PI / 5.0;
    let period = if label < 5 {
        rng.random_range(9.0..14.0)
    } else {
        rng.random_range(4.5..6.5)
    };
    let phase = rng.random_range(0.0..2.0 * PI);
    let contrast = rng.random_range(0.1..0.35);
    let mean = rng.random_range(0.35..0.65);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..1.0));
    let noise = Normal::new(0.0, 0.1).unwrap();
    let (c, s) = (theta.cos(), theta.sin());
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let t = 2.0 * PI * (x as f64 * c + y as f64 * s) / period + phase;
            let v = mean + contrast * t.sin();
            for ch in 0..3 {
                data[(ch * size + y) * size + x] = (v * tint[ch] + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(3, size, size, data).expect("dims match")
}

/// `n` images with balanced, shuffled labels.
pub fn dataset(n: usize, size: usize, seed: u64) -> Vec<(Image, usize)> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    labels.shuffle(&mut stream(seed, u64::MAX));
    labels
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| (grating(label, size, &mut stream(seed, i as u64)), label))
        .collect()
}

/// Binary feature maps of the reference layer (ideal backend).
pub fn features(layer: &FirstLayer, images: &[(Image, usize)]) -> Result<Vec<BinaryTensor>> {
    let hw = HardwareModel::ideal_limit()?;
    images
        .iter()
        .map(|(img, _)| forward_first_layer(img, layer, Backend::Ideal, &hw, 0).map(|o| o.bits))
        .collect()
}

fn active(bits: &BinaryTensor) -> Vec<u32> {
    bits.bits
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i as u32))
        .collect()
}

/// Softmax regression over binary features. Weights are `(features, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub features: usize,
    pub weights: Vec<f64>,
    pub bias: [f64; CLASSES],
}

impl SoftmaxHead {
    pub fn logits(&self, bits: &BinaryTensor) -> [f64; CLASSES] {
        let mut z = self.bias;
        for (j, _) in bits.bits.iter().enumerate().filter(|(_, &b)| b) {
            self.accumulate(&mut z, j, 1.0);
        }
        z
    }

    fn accumulate(&self, z: &mut [f64; CLASSES], j: usize, sign: f64) {
        let row = &self.weights[j * CLASSES..(j + 1) * CLASSES];
        z.iter_mut().zip(row).for_each(|(a, w)| *a += sign * w);
    }

    pub fn predict(&self, bits: &BinaryTensor) -> usize {
        argmax(&self.logits(bits))
    }

    /// Plain SGD on cross-entropy with weight decay, one sample at a time in
    /// a seeded order. Single-threaded so the result is reproducible.
    pub fn train(train: &[(BinaryTensor, usize)], cfg: &SweepConfig, seed: u64) -> Result<Self> {
        let features = train
            .first()
            .map(|(b, _)| b.len())
            .ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
        let sparse: Vec<(Vec<u32>, usize)> = train.iter().map(|(b, y)| (active(b), *y)).collect();
        let mut head = Self {
            features,
            weights: vec![0.0; features * CLASSES],
            bias: [0.0; CLASSES],
        };
        let mut order: Vec<usize> = (0..sparse.len()).collect();
        let decay = 1.0 - cfg.learning_rate * cfg.l2;
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut stream(seed, epoch as u64));
            let lr = cfg.learning_rate / (1.0 + epoch as f64 * 0.1);
            for &i in &order {
                let (idx, y) = &sparse[i];
                let mut z = head.bias;
                for &j in idx {
                    head.accumulate(&mut z, j as usize, 1.0);
                }
                let p = softmax(&z);
                let grad: [f64; CLASSES] = std::array::from_fn(|k| p[k] - f64::from(k == *y));
                for &j in idx {
                    let row = &mut head.weights[j as usize * CLASSES..(j as usize + 1) * CLASSES];
                    row.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
                }
                head.bias.iter_mut().zip(&grad).for_each(|(b, g)| *b -= lr * g);
            }
            // Lazy weight decay, once per epoch.
            let shrink = decay.powi(sparse.len() as i32);
            head.weights.iter_mut().for_each(|w| *w *= shrink);
        }
        Ok(head)
    }

    pub fn accuracy(&self, data: &[(BinaryTensor, usize)]) -> f64 {
        let correct = data.iter().filter(|(b, y)| self.predict(b) == *y).count();
        100.0 * correct as f64 / data.len() as f64
    }
}

fn softmax(z: &[f64; CLASSES]) -> [f64; CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; CLASSES] = std::array::from_fn(|k| (z[k] - m).exp());
    let s: f64 = e.iter().sum();
    std::array::from_fn(|k| e[k] / s)
}

fn argmax(z: &[f64; CLASSES]) -> usize {
    // first maximum wins ties
    (0..CLASSES).fold(0, |best, k| if z[k] > z[best] { k } else { best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps_10: f64,
    pub eps_01: f64,
    /// Percent, mean over seeds.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub seeds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub clean_accuracy: f64,
    pub train_accuracy: f64,
    /// Row-major over `(eps_10, eps_01)`.
    pub rows: Vec<SweepRow>,
    pub grid: Vec<f64>,
}

impl SweepResult {
    pub fn at(&self, i10: usize, i01: usize) -> &SweepRow {
        &self.rows[i10 * self.grid.len() + i01]
    }

    /// Neighboring grid steps (along either epsilon) where mean accuracy
    /// rises by more than `tolerance` points.
    pub fn monotone_violations(&self, tolerance: f64) -> Vec<(usize, usize, usize, usize)> {
        let n = self.grid.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let here = self.at(i, j).mean_accuracy;
                if i + 1 < n && self.at(i + 1, j).mean_accuracy > here + tolerance {
                    out.push((i, j, i + 1, j));
                }
                if j + 1 < n && self.at(i, j + 1).mean_accuracy > here + tolerance {
                    out.push((i, j, i, j + 1));
                }
            }
        }
        out
    }
}

/// Trains the head on clean features, then evaluates held-out accuracy with
/// injected activation errors at every `(eps_10, eps_01)` grid point.
///
/// Within a seed, each test element draws one uniform that is compared
/// against every epsilon, so raising either epsilon only adds flips.
pub fn error_sweep(layer: &FirstLayer, cfg: &SweepConfig, seed: u64) -> Result<SweepResult> {
    let mut errors = Vec::new();
    cfg.validate(&mut errors);
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let labeled = |n, salt| -> Result<Vec<(BinaryTensor, usize)>> {
        let data = dataset(n, cfg.image_size, derive_seed(seed, salt));
        let f = features(layer, &data)?;
        Ok(f.into_iter().zip(data.into_iter().map(|(_, y)| y)).collect())
    };
    let train = labeled(cfg.train_samples, SALT_TRAIN)?;
    let test = labeled(cfg.test_samples, SALT_TEST)?;
    let head = SoftmaxHead::train(&train, cfg, derive_seed(seed, SALT_SGD))?;

    let grid = &cfg.eps_grid;
    let points = grid.len() * grid.len();
    let inject_seed = derive_seed(seed, SALT_INJECT);
    let per_seed: Vec<Vec<u64>> = (0..cfg.seeds)
        .map(|s| {
            let seed_s = derive_seed(inject_seed, s);
            test.par_iter()
                .enumerate()
                .map(|(i, (bits, y))| {
                    let mut rng = stream(seed_s, i as u64);
                    let u: Vec<f64> = (0..bits.len()).map(|_| rng.random::<f64>()).collect();
                    let base = head.logits(bits);
                    let mut hits = vec![0u64; points];
                    for (a, &e10) in grid.iter().enumerate() {
                        for (b, &e01) in grid.iter().enumerate() {
                            let mut z = base;
                            for (j, (&bit, &uj)) in bits.bits.iter().zip(&u).enumerate() {
                                if bit && uj < e10 {
                                    head.accumulate(&mut z, j, -1.0);
                                } else if !bit && uj < e01 {
                                    head.accumulate(&mut z, j, 1.0);
                                }
                            }
                            hits[a * grid.len() + b] += u64::from(argmax(&z) == *y);
                        }
                    }
                    hits
                })
                .reduce(
                    || vec![0u64; points],
                    |mut acc, h| {
                        acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
                        acc
                    },
                )
        })
        .collect();

    let n = test.len() as f64;
    let rows = (0..points)
        .map(|p| {
            let accs: Vec<f64> = per_seed.iter().map(|h| 100.0 * h[p] as f64 / n).collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
            SweepRow {
                eps_10: grid[p / grid.len()],
                eps_01: grid[p % grid.len()],
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                seeds: cfg.seeds,
            }
        })
        .collect();
    Ok(SweepResult {
        clean_accuracy: head.accuracy(&test),
        train_accuracy: head.accuracy(&train),
        rows,
        grid: grid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::LayerSpec;
    use crate::reference::reference_layer;

    fn small() -> SweepConfig {
        SweepConfig {
            eps_grid: vec![0.0, 0.05, 0.3],
            seeds: 2,
            train_samples: 300,
            test_samples: 200,
            epochs: 8,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn dataset_is_balanced_and_reproducible() {
        let a = dataset(50, 16, 3);
        let b = dataset(50, 16, 3);
        assert_eq!(a, b);
        for c in 0..CLASSES {
            assert_eq!(a.iter().filter(|(_, y)| *y == c).count(), 5);
        }
        assert!(a
            .iter()
            .all(|(img, _)| img.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn head_learns_a_separable_toy() {
        // class k sets only feature k
        let data: Vec<(BinaryTensor, usize)> = (0..100)
            .map(|i| {
                let mut b = BinaryTensor::zeros((1, 1, CLASSES));
                b.bits[i % CLASSES] = true;
                (b, i % CLASSES)
            })
            .collect();
        let head = SoftmaxHead::train(
            &data,
            &SweepConfig {
                epochs: 30,
                learning_rate: 0.5,
                ..SweepConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(head.accuracy(&data), 100.0);
    }

    #[test]
    fn small_sweep_degrades_and_is_reproducible() {
        let layer = reference_layer(&LayerSpec::default()).unwrap();
        let r = error_sweep(&layer, &small(), 11).unwrap();
        assert_eq!(r, error_sweep(&layer, &small(), 11).unwrap());
        assert!(r.clean_accuracy > 50.0, "{}", r.clean_accuracy);
        // (0, 0) is the clean model
        assert_eq!(r.at(0, 0).mean_accuracy, r.clean_accuracy);
        assert!(r.at(2, 2).mean_accuracy < r.clean_accuracy);
    }

    #[test]
    fn bad_grid_is_rejected() {
        let layer = reference_layer(&LayerSpec::default()).unwrap();
        let cfg = SweepConfig {
            eps_grid: vec![0.1, 0.0],
            ..small()
        };
        assert!(matches!(error_sweep(&layer, &cfg, 0), Err(Error::Validation(_))));
    }
}
