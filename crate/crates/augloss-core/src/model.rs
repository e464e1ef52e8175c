//! Small fully-connected classifier: ReLU hidden layers, softmax output.
//!
//! Forward passes produce logits; the loss module owns the softmax and its
//! chain rule. Checkpoints use a flat little-endian binary format with the
//! magic `AGLS`.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::loss::{softmax, Posterior};
use crate::rng::{derive_seed, seeded_rng};
use rand_distr::{Distribution, Normal};
use std::io::{Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"AGLS";
const CHECKPOINT_VERSION: u32 = 1;

/// One dense layer; `weight` is row-major `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }
}

/// The full parameter set. Hidden layers apply ReLU; the final layer emits
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// He-style initialization: `N(0, sqrt(2 / fan_in))` weights, zero
    /// biases, seeded.
    pub fn init_he(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("need at least input and output sizes"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (li, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut rng = seeded_rng(derive_seed(seed, &[0x1e, li as u64]));
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
            let weight = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(Layer {
                fan_in,
                fan_out,
                weight,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(ModelParams { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("need at least input and output sizes"));
        }
        Ok(ModelParams {
            layers: sizes
                .windows(2)
                .map(|p| Layer::zeros(p[0], p[1]))
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} -> {}",
                    pair[0].fan_out, pair[1].fan_in
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.len() != layer.fan_in * layer.fan_out
                || layer.bias.len() != layer.fan_out
            {
                return Err(Error::invalid(format!("layer {i} has inconsistent buffers")));
            }
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Sum of squares of all parameters.
    pub fn l2_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weight.iter().map(|w| w * w).sum::<f64>()
                    + l.bias.iter().map(|b| b * b).sum::<f64>()
            })
            .sum()
    }

    /// Logits for one feature vector, recording every layer's activations
    /// for backpropagation. `trace[0]` is the input; `trace[i]` the
    /// post-ReLU output of layer `i - 1`; the return value the final
    /// logits.
    pub fn forward_trace(&self, features: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if features.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature length {} does not match input dim {}",
                features.len(),
                self.input_dim()
            )));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        trace.push(features.to_vec());
        let mut current = features.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            for (i, &a) in current.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &layer.weight[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (zj, &w) in z.iter_mut().zip(row) {
                    *zj += a * w;
                }
            }
            if li + 1 < self.layers.len() {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                trace.push(z.clone());
                current = z;
            } else {
                return Ok((trace, z));
            }
        }
        unreachable!("loop returns on the last layer")
    }

    /// Logits only.
    pub fn forward_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(features)?.1)
    }
}

/// Softmax posteriors for a batch of raw images (flattened in row-major
/// `(h, w, c)` order). An empty batch yields an empty output.
pub fn forward(params: &ModelParams, batch: &[ImageTensor]) -> Result<Vec<Posterior>> {
    batch
        .iter()
        .map(|img| {
            let logits = params.forward_features(img.data())?;
            Posterior::new(softmax(&logits))
        })
        .collect()
}

/// Writes the checkpoint: magic `AGLS`, version u32, layer count u32, then
/// per layer fan_in u32, fan_out u32, row-major f64 weights, f64 biases,
/// all little-endian.
pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        buf.extend_from_slice(&(layer.fan_in as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.fan_out as u32).to_le_bytes());
        for w in &layer.weight {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::parse(
                path,
                format!("byte offset {pos}"),
                "checkpoint truncated",
            ));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    let magic = take(&mut pos, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(path, "byte offset 0", "bad checkpoint magic"));
    }
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let version = read_u32(&mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            path,
            "byte offset 4",
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let n_layers = read_u32(&mut pos)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let fan_in = read_u32(&mut pos)? as usize;
        let fan_out = read_u32(&mut pos)? as usize;
        let read_f64s = |count: usize, pos: &mut usize| -> Result<Vec<f64>> {
            let raw = take(pos, count * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let weight = read_f64s(fan_in * fan_out, &mut pos)?;
        let bias = read_f64s(fan_out, &mut pos)?;
        layers.push(Layer {
            fan_in,
            fan_out,
            weight,
            bias,
        });
    }
    if pos != bytes.len() {
        return Err(Error::parse(
            path,
            format!("byte offset {pos}"),
            "trailing bytes after checkpoint payload",
        ));
    }
    let params = ModelParams { layers };
    params.validate()?;
    Ok(params)
}
