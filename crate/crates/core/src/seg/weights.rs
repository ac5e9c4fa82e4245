//! WBW1 portable weight format.
//!
//! Layout: the bytes `WBW1`, a little-endian u32 header length, a UTF-8 JSON
//! header `{"format_version":1,"layers":[{"name","kind","shape","offset","nbytes"}]}`,
//! then the payload of little-endian float32 tensors. Offsets are relative
//! to the start of the payload.
//!
//! Per-layer payload:
//! - `conv3d`, shape `[out, in, kz, ky, kx]`: kernel (that layout) then `out` biases.
//! - `batchnorm`, shape `[C]`: gamma, beta, running mean, running variance
//!   (C values each), then epsilon.
//! - `activation`, shape `[]`, no payload; the function is named by the
//!   layer name prefix (`relu…` or `sigmoid…`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"WBW1";
pub const FORMAT_VERSION: u32 = 1;
/// Hidden-layer widths of the shallow lesion network, input and output included.
pub const CHANNEL_CHAIN: [usize; 5] = [2, 16, 32, 64, 1];

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic {0:?}, expected \"WBW1\"")]
    BadMagic(Vec<u8>),
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("layer {layer}: {message}")]
    Layer { layer: String, message: String },
}

fn layer_err(layer: &str, message: impl Into<String>) -> WeightsError {
    WeightsError::Layer { layer: layer.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv3d {
        name: String,
        out_ch: usize,
        in_ch: usize,
        kernel: [usize; 3],
        /// (out, in, kz, ky, kx)
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    BatchNorm {
        name: String,
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        eps: f32,
    },
    Activation {
        name: String,
        func: Activation,
    },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv3d { name, .. } | Layer::BatchNorm { name, .. } | Layer::Activation { name, .. } => name,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv3d { .. } => "conv3d",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Activation { .. } => "activation",
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self {
            Layer::Conv3d { out_ch, in_ch, kernel, .. } => vec![*out_ch, *in_ch, kernel[0], kernel[1], kernel[2]],
            Layer::BatchNorm { gamma, .. } => vec![gamma.len()],
            Layer::Activation { .. } => vec![],
        }
    }

    fn payload(&self) -> Vec<f32> {
        match self {
            Layer::Conv3d { weights, bias, .. } => weights.iter().chain(bias).copied().collect(),
            Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => gamma
                .iter()
                .chain(beta)
                .chain(running_mean)
                .chain(running_var)
                .copied()
                .chain(std::iter::once(*eps))
                .collect(),
            Layer::Activation { .. } => vec![],
        }
    }

    /// Structural and numeric checks that do not depend on neighbours.
    fn check(&self) -> Result<(), WeightsError> {
        let name = self.name();
        if self.payload().iter().any(|v| !v.is_finite()) {
            return Err(layer_err(name, "non-finite parameter"));
        }
        match self {
            Layer::Conv3d { out_ch, in_ch, kernel, weights, bias, .. } => {
                if weights.len() != out_ch * in_ch * kernel.iter().product::<usize>() || bias.len() != *out_ch {
                    return Err(layer_err(name, "parameter count does not match shape"));
                }
            }
            Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => {
                let c = gamma.len();
                if beta.len() != c || running_mean.len() != c || running_var.len() != c {
                    return Err(layer_err(name, "batch-norm vectors differ in length"));
                }
                if running_var.iter().any(|&v| v < 0.0) {
                    return Err(layer_err(name, "negative running variance"));
                }
                if !(*eps >= 0.0) {
                    return Err(layer_err(name, "negative epsilon"));
                }
            }
            Layer::Activation { .. } => {}
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    kind: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layers: Vec<LayerRecord>,
}

/// Ordered layer chain of the lesion network.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModelWeights {
    pub layers: Vec<Layer>,
}

impl SegModelWeights {
    /// Validates that the chain is conv(2→16)+BN+ReLU, conv(16→32)+BN+ReLU,
    /// conv(32→64)+BN+ReLU, conv(64→1)+sigmoid with 3×3×3 kernels.
    pub fn new(layers: Vec<Layer>) -> Result<Self, WeightsError> {
        let w = SegModelWeights { layers };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        for l in &self.layers {
            l.check()?;
        }
        let mut it = self.layers.iter();
        let mut channels = CHANNEL_CHAIN[0];
        let last = CHANNEL_CHAIN.len() - 2;
        for (stage, &out) in CHANNEL_CHAIN[1..].iter().enumerate() {
            let conv = it.next().ok_or_else(|| layer_err("<end>", format!("missing convolution {}", stage + 1)))?;
            match conv {
                Layer::Conv3d { name, out_ch, in_ch, kernel, .. } => {
                    if *in_ch != channels {
                        return Err(layer_err(name, format!("expected {channels} input channels, found {in_ch}")));
                    }
                    if *out_ch != out {
                        return Err(layer_err(name, format!("expected {out} output channels, found {out_ch}")));
                    }
                    if *kernel != [3, 3, 3] {
                        return Err(layer_err(name, format!("expected 3x3x3 kernel, found {kernel:?}")));
                    }
                }
                other => return Err(layer_err(other.name(), format!("expected conv3d, found {}", other.kind()))),
            }
            channels = out;
            if stage < last {
                match it.next() {
                    Some(Layer::BatchNorm { name, gamma, .. }) if gamma.len() != channels => {
                        return Err(layer_err(name, format!("expected {channels} channels, found {}", gamma.len())));
                    }
                    Some(Layer::BatchNorm { .. }) => {}
                    Some(other) => {
                        return Err(layer_err(other.name(), format!("expected batchnorm, found {}", other.kind())))
                    }
                    None => return Err(layer_err("<end>", "missing batchnorm")),
                }
                match it.next() {
                    Some(Layer::Activation { func: Activation::Relu, .. }) => {}
                    Some(other) => return Err(layer_err(other.name(), "expected relu activation")),
                    None => return Err(layer_err("<end>", "missing relu")),
                }
            } else {
                match it.next() {
                    Some(Layer::Activation { func: Activation::Sigmoid, .. }) => {}
                    Some(other) => return Err(layer_err(other.name(), "expected sigmoid activation")),
                    None => return Err(layer_err("<end>", "missing sigmoid")),
                }
            }
        }
        if let Some(extra) = it.next() {
            return Err(layer_err(extra.name(), "unexpected layer after sigmoid"));
        }
        Ok(())
    }

    /// Architecture with every parameter produced by `param(layer, kind, index)`.
    fn build(mut param: impl FnMut(usize, &str, usize) -> f32) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in CHANNEL_CHAIN.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let n = cout * cin * 27;
            layers.push(Layer::Conv3d {
                name: format!("conv{}", i + 1),
                out_ch: cout,
                in_ch: cin,
                kernel: [3, 3, 3],
                weights: (0..n).map(|k| param(i, "w", k)).collect(),
                bias: (0..cout).map(|k| param(i, "b", k)).collect(),
            });
            if i + 2 < CHANNEL_CHAIN.len() {
                layers.push(Layer::BatchNorm {
                    name: format!("bn{}", i + 1),
                    gamma: (0..cout).map(|k| param(i, "gamma", k)).collect(),
                    beta: (0..cout).map(|k| param(i, "beta", k)).collect(),
                    running_mean: (0..cout).map(|k| param(i, "mean", k)).collect(),
                    running_var: (0..cout).map(|k| param(i, "var", k)).collect(),
                    eps: 1e-5,
                });
                layers.push(Layer::Activation { name: format!("relu{}", i + 1), func: Activation::Relu });
            } else {
                layers.push(Layer::Activation { name: "sigmoid".into(), func: Activation::Sigmoid });
            }
        }
        SegModelWeights { layers }
    }

    /// All convolution and batch-norm parameters zero (variance 0, eps 1e-5).
    pub fn zeros() -> Self {
        Self::build(|_, _, _| 0.0)
    }

    /// Seeded random network with He-style kernel scaling, unit-ish BN stats.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(|layer, kind, _| {
            let cin = CHANNEL_CHAIN[layer] as f32;
            let u: f32 = rng.random_range(-1.0..1.0);
            match kind {
                "w" => u * (6.0 / (cin * 27.0)).sqrt(),
                "b" => 0.1 * u,
                "gamma" => 1.0 + 0.2 * u,
                "beta" => 0.1 * u,
                "mean" => 0.1 * u,
                "var" => 1.0 + 0.5 * u,
                _ => unreachable!(),
            }
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for l in &self.layers {
            let values = l.payload();
            records.push(LayerRecord {
                name: l.name().to_string(),
                kind: l.kind().to_string(),
                shape: l.shape(),
                offset: payload.len(),
                nbytes: values.len() * 4,
            });
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header { format_version: FORMAT_VERSION, layers: records }).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses WBW1 bytes without checking the layer chain.
    pub fn parse_unchecked(bytes: &[u8]) -> Result<Self, WeightsError> {
        if bytes.len() < 8 {
            return Err(WeightsError::Truncated(format!("{} bytes, need at least 8", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(WeightsError::BadMagic(bytes[..4].to_vec()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + hlen {
            return Err(WeightsError::Truncated(format!("header needs {} bytes, file has {}", 8 + hlen, bytes.len())));
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + hlen])?;
        if header.format_version != FORMAT_VERSION {
            return Err(WeightsError::Version(header.format_version));
        }
        let payload = &bytes[8 + hlen..];
        let mut layers = Vec::with_capacity(header.layers.len());
        for rec in header.layers {
            let end = rec.offset.checked_add(rec.nbytes).filter(|&e| e <= payload.len()).ok_or_else(|| {
                WeightsError::Truncated(format!("layer {} extends past the payload", rec.name))
            })?;
            if rec.nbytes % 4 != 0 {
                return Err(layer_err(&rec.name, "nbytes is not a multiple of 4"));
            }
            let values: Vec<f32> =
                payload[rec.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let expect = |n: usize| -> Result<(), WeightsError> {
                if values.len() != n {
                    return Err(layer_err(&rec.name, format!("shape {:?} needs {} floats, nbytes gives {}", rec.shape, n, values.len())));
                }
                Ok(())
            };
            let layer = match rec.kind.as_str() {
                "conv3d" => {
                    let [o, i, kz, ky, kx] = rec.shape[..] else {
                        return Err(layer_err(&rec.name, "conv3d shape must have 5 entries"));
                    };
                    let nw = o * i * kz * ky * kx;
                    expect(nw + o)?;
                    Layer::Conv3d {
                        name: rec.name,
                        out_ch: o,
                        in_ch: i,
                        kernel: [kz, ky, kx],
                        weights: values[..nw].to_vec(),
                        bias: values[nw..].to_vec(),
                    }
                }
                "batchnorm" => {
                    let [c] = rec.shape[..] else {
                        return Err(layer_err(&rec.name, "batchnorm shape must have 1 entry"));
                    };
                    expect(4 * c + 1)?;
                    Layer::BatchNorm {
                        name: rec.name,
                        gamma: values[..c].to_vec(),
                        beta: values[c..2 * c].to_vec(),
                        running_mean: values[2 * c..3 * c].to_vec(),
                        running_var: values[3 * c..4 * c].to_vec(),
                        eps: values[4 * c],
                    }
                }
                "activation" => {
                    expect(0)?;
                    let func = if rec.name.starts_with("relu") {
                        Activation::Relu
                    } else if rec.name.starts_with("sigmoid") {
                        Activation::Sigmoid
                    } else {
                        return Err(layer_err(&rec.name, "activation name must start with relu or sigmoid"));
                    };
                    Layer::Activation { name: rec.name, func }
                }
                other => return Err(layer_err(&rec.name, format!("unknown kind {other:?}"))),
            };
            layers.push(layer);
        }
        Ok(SegModelWeights { layers })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let w = Self::parse_unchecked(bytes)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| WeightsError::Io { path: path.display().to_string(), source })
    }
}

/// Reads and validates a WBW1 file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<SegModelWeights, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io { path: path.display().to_string(), source })?;
    SegModelWeights::from_bytes(&bytes)
}
