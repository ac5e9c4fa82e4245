//! Forward pass of the shallow volumetric CNN (inference only: dropout off,
//! batch-norm from running statistics).

use super::weights::{Activation, Layer, SegModelWeights};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("input has {found} channels, network expects {expected}")]
    Channels { expected: usize, found: usize },
    #[error("layer {index} ({name}): {message}")]
    Layer { index: usize, name: String, message: String },
    #[error("non-finite activation after layer {index} ({name})")]
    NonFinite { index: usize, name: String },
    #[error("patch shape {found:?} does not match configured {expected:?}")]
    PatchShape { expected: [usize; 3], found: [usize; 3] },
}

/// Channel-first activation tensor, layout (c, z, y, x) with x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    /// (nz, ny, nx)
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, shape: [usize; 3]) -> Self {
        Tensor { channels, shape, data: vec![0.0; channels * shape.iter().product::<usize>()] }
    }

    pub fn filled(channels: usize, shape: [usize; 3], value: f32) -> Self {
        Tensor { channels, shape, data: vec![value; channels * shape.iter().product::<usize>()] }
    }

    pub fn spatial_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        let [_, ny, nx] = self.shape;
        self.data[c * self.spatial_len() + (z * ny + y) * nx + x]
    }
}

/// Same-padded 3D convolution with zero padding and odd kernels.
pub fn conv3d(input: &Tensor, out_ch: usize, kernel: [usize; 3], weights: &[f32], bias: &[f32]) -> Tensor {
    let [nz, ny, nx] = input.shape;
    let n = input.spatial_len();
    let in_ch = input.channels;
    let [kz, ky, kx] = kernel;
    let (pz, py, px) = ((kz / 2) as isize, (ky / 2) as isize, (kx / 2) as isize);
    let ksize = kz * ky * kx;
    let channels: Vec<Vec<f32>> = (0..out_ch)
        .into_par_iter()
        .map(|o| {
            let mut out = vec![bias[o]; n];
            for i in 0..in_ch {
                let src = input.channel(i);
                let wbase = (o * in_ch + i) * ksize;
                for dz in 0..kz {
                    let oz = dz as isize - pz;
                    for dy in 0..ky {
                        let oy = dy as isize - py;
                        for dx in 0..kx {
                            let ox = dx as isize - px;
                            let w = weights[wbase + (dz * ky + dy) * kx + dx];
                            if w == 0.0 {
                                continue;
                            }
                            let z_lo = (-oz).max(0) as usize;
                            let z_hi = (nz as isize - oz).min(nz as isize).max(0) as usize;
                            let y_lo = (-oy).max(0) as usize;
                            let y_hi = (ny as isize - oy).min(ny as isize).max(0) as usize;
                            let x_lo = (-ox).max(0) as usize;
                            let x_hi = (nx as isize - ox).min(nx as isize).max(0) as usize;
                            if x_lo >= x_hi {
                                continue;
                            }
                            for z in z_lo..z_hi {
                                let sz = (z as isize + oz) as usize;
                                for y in y_lo..y_hi {
                                    let sy = (y as isize + oy) as usize;
                                    let drow = (z * ny + y) * nx;
                                    let srow = (sz * ny + sy) * nx;
                                    let sx0 = (x_lo as isize + ox) as usize;
                                    let dst = &mut out[drow + x_lo..drow + x_hi];
                                    let s = &src[srow + sx0..srow + sx0 + (x_hi - x_lo)];
                                    for (d, v) in dst.iter_mut().zip(s) {
                                        *d += w * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Tensor { channels: out_ch, shape: input.shape, data: channels.concat() }
}

fn sigmoid(x: f32) -> f32 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep strictly inside (0, 1) where f32 would round to an endpoint
    y.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
}

/// Applies one layer in place (conv layers allocate a new tensor).
pub fn apply_layer(layer: &Layer, x: Tensor) -> Result<Tensor, String> {
    match layer {
        Layer::Conv3d { in_ch, out_ch, kernel, weights, bias, .. } => {
            if x.channels != *in_ch {
                return Err(format!("expects {in_ch} input channels, got {}", x.channels));
            }
            if kernel.iter().any(|k| k % 2 == 0) {
                return Err("kernel sizes must be odd for same padding".into());
            }
            Ok(conv3d(&x, *out_ch, *kernel, weights, bias))
        }
        Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => {
            if x.channels != gamma.len() {
                return Err(format!("expects {} channels, got {}", gamma.len(), x.channels));
            }
            let mut x = x;
            let n = x.spatial_len();
            for c in 0..x.channels {
                let scale = gamma[c] / (running_var[c] + eps).sqrt();
                let shift = beta[c] - running_mean[c] * scale;
                for v in &mut x.data[c * n..(c + 1) * n] {
                    *v = *v * scale + shift;
                }
            }
            Ok(x)
        }
        Layer::Activation { func, .. } => {
            let mut x = x;
            match func {
                Activation::Relu => x.data.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Sigmoid => x.data.iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
            Ok(x)
        }
    }
}

/// Runs an arbitrary layer chain.
pub fn forward_layers(layers: &[Layer], input: &Tensor) -> Result<Tensor, CnnError> {
    let mut x = input.clone();
    for (index, layer) in layers.iter().enumerate() {
        x = apply_layer(layer, x).map_err(|message| CnnError::Layer { index, name: layer.name().into(), message })?;
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::NonFinite { index, name: layer.name().into() });
        }
    }
    Ok(x)
}

/// Lesion probability for one 2-channel patch (skeleton probability,
/// normalized b900). Output has one channel and the input's spatial shape.
pub fn cnn_forward(weights: &SegModelWeights, patch: &Tensor) -> Result<Tensor, CnnError> {
    if patch.channels != 2 {
        return Err(CnnError::Channels { expected: 2, found: patch.channels });
    }
    forward_layers(&weights.layers, patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gives_half() {
        let out = cnn_forward(&SegModelWeights::zeros(), &Tensor::filled(2, [8, 8, 8], 3.0)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
        assert_eq!((out.channels, out.shape), (1, [8, 8, 8]));
    }

    #[test]
    fn final_bias_sets_constant_output() {
        let mut w = SegModelWeights::zeros();
        if let Some(Layer::Conv3d { bias, .. }) = w.layers.iter_mut().rev().find(|l| matches!(l, Layer::Conv3d { .. })) {
            bias[0] = 3f32.ln();
        }
        let out = cnn_forward(&w, &Tensor::filled(2, [8, 8, 8], 1.0)).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn wrong_channel_count() {
        assert_eq!(
            cnn_forward(&SegModelWeights::zeros(), &Tensor::zeros(3, [8, 8, 8])).unwrap_err(),
            CnnError::Channels { expected: 2, found: 3 }
        );
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut w = SegModelWeights::zeros();
        if let Some(Layer::Conv3d { bias, .. }) = w.layers.iter_mut().rev().find(|l| matches!(l, Layer::Conv3d { .. })) {
            bias[0] = 200.0;
        }
        let out = cnn_forward(&w, &Tensor::zeros(2, [8, 8, 8])).unwrap();
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
