//! Teacher/student classifier families, inference and checkpoints.

mod checkpoint;
mod layers;
mod spec;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::Sample;
use crate::error::{Error, Result};
use layers::{BatchNorm2d, Conv2d, Dense, Geometry, Layer, MaxPool2d, Sequential};

pub(crate) use layers::{Cache, Param};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION,
};
pub use spec::{Architecture, InputShape, ModelSpec, Role, Stem};

/// Rows evaluated per forward pass during inference.
const INFERENCE_CHUNK: usize = 256;

/// Row-wise softmax with the max subtracted for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A classifier built from a [`ModelSpec`].
///
/// Training mutates the model and needs exclusive access; inference through
/// `&self` is reentrant.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    net: Sequential,
}

fn build_residual(
    stem: Stem,
    base_width: usize,
    blocks: &[usize],
    mut g: Geometry,
    rng: &mut ChaCha8Rng,
) -> (Sequential, Geometry) {
    let mut net = Sequential::default();
    let stem_conv = match stem {
        Stem::Imagenet => Conv2d::new(g, base_width, 7, 2, 3, false, rng),
        Stem::Compact => Conv2d::new(g, base_width, 3, 1, 1, false, rng),
    };
    g = stem_conv.output();
    net.push(Layer::Conv(stem_conv));
    net.push(Layer::BatchNorm(BatchNorm2d::new(g)));
    net.push(Layer::Relu);
    if stem == Stem::Imagenet {
        let pool = MaxPool2d::new(g, 3, 2, 1);
        g = pool.output();
        net.push(Layer::MaxPool(pool));
    }
    for (stage, &count) in blocks.iter().enumerate() {
        let width = base_width << stage;
        for block in 0..count {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let mut main = Sequential::default();
            let c1 = Conv2d::new(g, width, 3, stride, 1, false, rng);
            let g1 = c1.output();
            main.push(Layer::Conv(c1));
            main.push(Layer::BatchNorm(BatchNorm2d::new(g1)));
            main.push(Layer::Relu);
            let c2 = Conv2d::new(g1, width, 3, 1, 1, false, rng);
            let g2 = c2.output();
            main.push(Layer::Conv(c2));
            main.push(Layer::BatchNorm(BatchNorm2d::new(g2)));
            let shortcut = (stride != 1 || g.channels != width).then(|| {
                let mut s = Sequential::default();
                let proj = Conv2d::new(g, width, 1, stride, 0, false, rng);
                s.push(Layer::BatchNorm(BatchNorm2d::new(proj.output())));
                s.layers.insert(0, Layer::Conv(proj));
                s
            });
            net.push(Layer::Residual { main, shortcut });
            g = g2;
        }
    }
    net.push(Layer::GlobalAvgPool(g));
    (
        net,
        Geometry {
            channels: g.channels,
            height: 1,
            width: 1,
        },
    )
}

impl Model {
    /// Builds and initialises a model; weights depend only on `(spec, seed)`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = spec.num_classes;
        let net = match (&spec.architecture, spec.input) {
            (Architecture::Mlp { hidden }, input) => {
                let mut net = Sequential::default();
                let mut width = input.len();
                for &h in hidden {
                    net.push(Layer::Dense(Dense::new(width, h, &mut rng)));
                    net.push(Layer::Relu);
                    width = h;
                }
                net.push(Layer::Dense(Dense::new(width, c, &mut rng)));
                net
            }
            (
                Architecture::Conv {
                    channels,
                    kernel,
                    hidden,
                },
                InputShape::Image {
                    channels: ch,
                    height,
                    width,
                },
            ) => {
                let mut net = Sequential::default();
                let mut g = Geometry {
                    channels: ch,
                    height,
                    width,
                };
                for &out in channels {
                    let conv = Conv2d::new(g, out, *kernel, 1, kernel / 2, true, &mut rng);
                    g = conv.output();
                    net.push(Layer::Conv(conv));
                    net.push(Layer::Relu);
                    let pool = MaxPool2d::new(g, 2, 2, 0);
                    g = pool.output();
                    net.push(Layer::MaxPool(pool));
                }
                let mut features = g.len();
                for &h in hidden {
                    net.push(Layer::Dense(Dense::new(features, h, &mut rng)));
                    net.push(Layer::Relu);
                    features = h;
                }
                net.push(Layer::Dense(Dense::new(features, c, &mut rng)));
                net
            }
            (
                Architecture::Residual {
                    stem,
                    base_width,
                    blocks,
                },
                InputShape::Image {
                    channels,
                    height,
                    width,
                },
            ) => {
                let g = Geometry {
                    channels,
                    height,
                    width,
                };
                let (mut net, out) = build_residual(*stem, *base_width, blocks, g, &mut rng);
                net.push(Layer::Dense(Dense::new(out.channels, c, &mut rng)));
                net
            }
            _ => unreachable!("validated above"),
        };
        Ok(Self { spec, seed, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.net.collect_params(&mut out);
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.net.collect_params_mut(&mut out);
        out
    }

    pub(crate) fn buffers(&self) -> Vec<&Array1<f64>> {
        let mut out = Vec::new();
        self.net.collect_buffers(&mut out);
        out
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        let mut out = Vec::new();
        self.net.collect_buffers_mut(&mut out);
        out
    }

    /// Parameters then buffers, in construction order.
    pub fn state_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.params() {
            out.extend(p.value.iter());
        }
        for b in self.buffers() {
            out.extend(b.iter());
        }
        out
    }

    pub(crate) fn load_state_values(&mut self, values: &[f64]) -> Result<()> {
        let expected: usize = self.count_parameters() + self.buffers().iter().map(|b| b.len()).sum::<usize>();
        if values.len() != expected {
            return Err(Error::Integrity(format!(
                "state has {} values, model needs {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.iter_mut().zip(&values[offset..offset + n]).for_each(|(d, s)| *d = *s);
            offset += n;
        }
        for b in self.buffers_mut() {
            let n = b.len();
            b.iter_mut().zip(&values[offset..offset + n]).for_each(|(d, s)| *d = *s);
            offset += n;
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every parameter and buffer.
    pub fn weight_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.state_values() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Packs feature rows (H×W×C order for images) into a network input.
    pub fn input_batch(&self, rows: &[&[f64]]) -> Result<Array2<f64>> {
        let len = self.spec.input.len();
        let mut x = Array2::zeros((rows.len(), len));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != len {
                return Err(Error::Inference(format!(
                    "row {i} has {} features, model expects {len}",
                    row.len()
                )));
            }
            let mut dst = x.row_mut(i);
            match self.spec.input {
                InputShape::Image {
                    channels,
                    height,
                    width,
                } if channels > 1 => {
                    for y in 0..height {
                        for xx in 0..width {
                            for c in 0..channels {
                                dst[c * height * width + y * width + xx] =
                                    row[(y * width + xx) * channels + c];
                            }
                        }
                    }
                }
                _ => dst.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s),
            }
        }
        Ok(x)
    }

    pub fn samples_batch(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        self.input_batch(&rows)
    }

    /// Logits for a packed input batch, evaluated in fixed-size chunks.
    pub fn logits_packed(&self, x: &Array2<f64>) -> Array2<f64> {
        if x.nrows() <= INFERENCE_CHUNK {
            return self.net.forward_eval(x);
        }
        let mut out = Array2::zeros((x.nrows(), self.spec.num_classes));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + INFERENCE_CHUNK).min(x.nrows());
            let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
            out.slice_mut(ndarray::s![start..end, ..]).assign(&self.net.forward_eval(&chunk));
            start = end;
        }
        out
    }

    pub fn logits(&self, rows: &[&[f64]]) -> Result<Array2<f64>> {
        Ok(self.logits_packed(&self.input_batch(rows)?))
    }

    /// Class probabilities; each row sums to one.
    pub fn predict_probs(&self, rows: &[&[f64]]) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(rows)?))
    }

    pub fn predict_samples(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits_packed(&self.samples_batch(samples)?)))
    }

    pub(crate) fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, Vec<Cache>) {
        self.net.forward_train(x)
    }

    pub(crate) fn backward(&mut self, caches: Vec<Cache>, dlogits: &Array2<f64>) {
        self.net.backward(caches, dlogits);
    }

    pub(crate) fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }
}
