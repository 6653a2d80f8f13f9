//! Class-conditional Gaussian blobs rendered on small image grids.
//!
//! Each class owns a handful of blob prototypes at fixed positions. A sample
//! renders every prototype of its class with positional jitter, random
//! amplitude and additive pixel noise. A fraction of labels is flipped so a
//! model that fits its training pool perfectly must memorise those samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureShape, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub blobs_per_class: usize,
    /// Blob radius (standard deviation) in pixels.
    pub blob_sigma: f64,
    /// Standard deviation of per-sample blob displacement in pixels.
    pub position_jitter: f64,
    pub pixel_noise: f64,
    /// Probability that a sample's label is replaced by a different class.
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_samples: 10_000,
            num_classes: 10,
            height: 28,
            width: 28,
            seed: 0,
            blobs_per_class: 3,
            blob_sigma: 2.5,
            position_jitter: 2.5,
            pixel_noise: 0.15,
            label_noise: 0.05,
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> (FeatureShape, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let margin = 3.0_f64.min(h / 4.0).min(w / 4.0);
    let prototypes: Vec<Vec<(f64, f64)>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.blobs_per_class)
                .map(|_| {
                    (
                        rng.gen_range(margin..(h - margin).max(margin + 1e-9)),
                        rng.gen_range(margin..(w - margin).max(margin + 1e-9)),
                    )
                })
                .collect()
        })
        .collect();

    let jitter = Normal::new(0.0, cfg.position_jitter.max(0.0)).expect("finite jitter");
    let noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).expect("finite noise");
    let two_sigma_sq = 2.0 * cfg.blob_sigma * cfg.blob_sigma;

    let mut samples = Vec::with_capacity(cfg.num_samples);
    for id in 0..cfg.num_samples {
        let class = id % cfg.num_classes;
        let mut pixels = vec![0.0; cfg.height * cfg.width];
        for &(cy, cx) in &prototypes[class] {
            let y0 = cy + jitter.sample(&mut rng);
            let x0 = cx + jitter.sample(&mut rng);
            let amp = rng.gen_range(0.6..1.0);
            for y in 0..cfg.height {
                let dy = y as f64 - y0;
                for x in 0..cfg.width {
                    let dx = x as f64 - x0;
                    pixels[y * cfg.width + x] += amp * (-(dy * dy + dx * dx) / two_sigma_sq).exp();
                }
            }
        }
        for p in &mut pixels {
            *p = (*p + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        let label = if cfg.num_classes > 1 && rng.gen_bool(cfg.label_noise.clamp(0.0, 1.0)) {
            (class + rng.gen_range(1..cfg.num_classes)) % cfg.num_classes
        } else {
            class
        };
        samples.push(Sample {
            id: id as u64,
            features: pixels,
            label,
        });
    }
    (
        FeatureShape::Image {
            height: cfg.height,
            width: cfg.width,
            channels: 1,
        },
        samples,
    )
}
