//! Layer kinds and their stateless kernels.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::numerics::Rng;

/// Activation volume: channels x height x width, flattened channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Flat vector of `units` neurons.
    pub const fn flat(units: usize) -> Self {
        Self::new(units, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    Dense {
        in_units: usize,
        out_units: usize,
    },
    /// Inverted dropout on the layer input, training only.
    Dropout { drop_prob: f64 },
    /// Additive Gaussian noise on the layer input, training only.
    Noise { sigma_r: f64 },
}

impl LayerSpec {
    /// True for layers holding weights and LIF neurons.
    pub fn is_spiking(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Noise { .. } => "noise",
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
                stride,
            } => {
                if input.channels != in_channels {
                    return Err(Error::invalid(format!(
                        "conv2d expects {in_channels} input channels, got {}",
                        input.channels
                    )));
                }
                if kernel == 0 || stride == 0 {
                    return Err(Error::invalid("conv2d kernel and stride must be positive"));
                }
                let out_dim = |d: usize| -> Result<usize> {
                    let padded = d + 2 * padding;
                    if padded < kernel {
                        return Err(Error::invalid(format!("conv2d kernel {kernel} larger than padded input {padded}")));
                    }
                    Ok((padded - kernel) / stride + 1)
                };
                Ok(Shape::new(out_channels, out_dim(input.height)?, out_dim(input.width)?))
            }
            LayerSpec::Dense { in_units, out_units } => {
                if input.len() != in_units {
                    return Err(Error::invalid(format!("dense expects {in_units} inputs, got {}", input.len())));
                }
                Ok(Shape::flat(out_units))
            }
            LayerSpec::Dropout { drop_prob } => {
                if !(0.0..1.0).contains(&drop_prob) {
                    return Err(Error::invalid(format!("dropout probability {drop_prob} outside [0, 1)")));
                }
                Ok(input)
            }
            LayerSpec::Noise { sigma_r } => {
                if !(sigma_r >= 0.0) {
                    return Err(Error::invalid(format!("noise sigma {sigma_r} must be >= 0")));
                }
                Ok(input)
            }
        }
    }

    /// (weights, biases) stored for this layer.
    pub fn param_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerSpec::Dense { in_units, out_units } => (in_units * out_units, out_units),
            _ => (0, 0),
        }
    }

    /// Synaptic inputs per neuron.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { in_units, .. } => in_units,
            _ => 0,
        }
    }
}

/// Geometry of a convolution applied to a specific input shape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(spec: &LayerSpec, input: Shape) -> Result<Self> {
        let out = spec.output_shape(input)?;
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
                stride,
            } => Ok(Self {
                cin: in_channels,
                h: input.height,
                w: input.width,
                cout: out_channels,
                k: kernel,
                pad: padding,
                stride,
                ho: out.height,
                wo: out.width,
            }),
            _ => Err(Error::invalid("not a convolution")),
        }
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one input frame into a `patch x positions` matrix (zero padding)
    /// whose rows are `ld` apart, so several frames can sit side by side.
    pub fn im2col(&self, frame: &[f64], cols: &mut [f64], ld: usize) {
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * ld;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut cols[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if iy < 0 || iy as usize >= self.h {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &frame[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix as usize >= self.w { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a `patch x positions` gradient (rows `ld` apart) back onto
    /// an input frame.
    pub fn col2im(&self, cols: &[f64], frame: &mut [f64], ld: usize) {
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((ci * self.k + ky) * self.k + kx) * ld;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let base = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                frame[base + ix as usize] += cols[row + oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Frames per batched GEMM, keeping the unfolded matrix around 8 MB.
    pub fn group_frames(&self) -> usize {
        ((1 << 20) / (self.patch() * self.positions()).max(1)).max(1)
    }
}

/// Cross-correlation of one `cin x h x w` frame with zero padding; output is
/// channel-major `cout x ho x wo`. Weights are laid out `[cout][cin][ky][kx]`.
pub fn conv2d_forward(input: &[f64], in_shape: Shape, spec: &LayerSpec, weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let g = ConvGeom::new(spec, in_shape)?;
    if input.len() != in_shape.len() {
        return Err(Error::invalid(format!("conv2d input has {} values, shape says {}", input.len(), in_shape)));
    }
    let (nw, nb) = spec.param_shape();
    if weights.len() != nw || bias.len() != nb {
        return Err(Error::invalid("conv2d parameter size mismatch"));
    }
    let mut out = vec![0.0; g.cout * g.positions()];
    conv_frames(&g, input, 1, weights, bias, &mut out);
    Ok(out)
}

/// Convolve `frames` consecutive frames (row-major) into `out`.
pub(crate) fn conv_frames(g: &ConvGeom, input: &[f64], frames: usize, weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let in_len = g.cin * g.h * g.w;
    let (p, k) = (g.positions(), g.patch());
    let out_len = g.cout * p;
    let group = g.group_frames().min(frames.max(1));
    let mut cols = vec![0.0; k * group * p];
    let mut wide = vec![0.0; g.cout * group * p];
    let mut f0 = 0;
    while f0 < frames {
        let n = group.min(frames - f0);
        let ld = n * p;
        for j in 0..n {
            let f = f0 + j;
            g.im2col(&input[f * in_len..(f + 1) * in_len], &mut cols[j * p..], ld);
        }
        gemm(1.0, Mat::new(weights, g.cout, k), Mat::new(&cols[..k * ld], k, ld), 0.0, &mut wide[..g.cout * ld]);
        for j in 0..n {
            let dst = &mut out[(f0 + j) * out_len..(f0 + j + 1) * out_len];
            for (c, chunk) in dst.chunks_mut(p).enumerate() {
                let src = &wide[c * ld + j * p..][..p];
                for (d, s) in chunk.iter_mut().zip(src) {
                    *d = s + bias[c];
                }
            }
        }
        f0 += n;
    }
}

/// `W * input + b` for a row-major `out x in` weight matrix.
pub fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let out_units = bias.len();
    if out_units == 0 || weights.len() != out_units * input.len() {
        return Err(Error::invalid(format!(
            "dense shapes disagree: {} weights for {} inputs and {} outputs",
            weights.len(),
            input.len(),
            out_units
        )));
    }
    let mut out = vec![0.0; out_units];
    dense_rows(input, 1, input.len(), weights, bias, &mut out);
    Ok(out)
}

/// Batched dense pre-activation: `rows x in` times `W^T`, plus bias.
pub(crate) fn dense_rows(input: &[f64], rows: usize, in_units: usize, weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let out_units = bias.len();
    for chunk in out[..rows * out_units].chunks_mut(out_units) {
        chunk.copy_from_slice(bias);
    }
    gemm(
        1.0,
        Mat::new(input, rows, in_units),
        Mat::new(weights, out_units, in_units).t(),
        1.0,
        out,
    );
}

/// Add `N(0, sigma_r^2)` to every element while training; identity otherwise.
pub fn apply_noise(x: &mut [f64], sigma_r: f64, rng: &mut Rng, training: bool) {
    if !training || sigma_r == 0.0 {
        return;
    }
    for v in x {
        *v += sigma_r * rng.standard_normal();
    }
}

/// Inverted dropout. Returns the applied per-element scale (0 or `1/(1-p)`)
/// when anything was dropped, so the backward pass can reuse it.
pub fn apply_dropout(x: &mut [f64], drop_prob: f64, rng: &mut Rng, training: bool) -> Option<Vec<f64>> {
    if !training || drop_prob == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - drop_prob);
    let mask: Vec<f64> = x
        .iter_mut()
        .map(|v| {
            let m = if rng.uniform() < drop_prob { 0.0 } else { keep };
            *v *= m;
            m
        })
        .collect();
    Some(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(cin: usize, cout: usize, stride: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
            padding: 1,
            stride,
        }
    }

    #[test]
    fn conv_output_dims() {
        let s = Shape::new(1, 20, 80);
        assert_eq!(conv(1, 4, 1).output_shape(s).unwrap(), Shape::new(4, 20, 80));
        assert_eq!(conv(1, 4, 2).output_shape(s).unwrap(), Shape::new(4, 10, 40));
        assert!(conv(2, 4, 1).output_shape(s).is_err());
    }

    #[test]
    fn identity_kernel_copies_input() {
        let shape = Shape::new(1, 4, 5);
        let input: Vec<f64> = (0..20).map(|v| v as f64 * 0.1).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let out = conv2d_forward(&input, shape, &conv(1, 1, 1), &w, &[0.0]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = Rng::new(3);
        let shape = Shape::new(2, 5, 7);
        let spec = conv(2, 3, 2);
        let input: Vec<f64> = (0..shape.len()).map(|_| rng.uniform()).collect();
        let w: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.uniform() - 0.5).collect();
        let b = [0.1, -0.2, 0.3];
        let out = conv2d_forward(&input, shape, &spec, &w, &b).unwrap();
        let o = spec.output_shape(shape).unwrap();
        for co in 0..3 {
            for oy in 0..o.height {
                for ox in 0..o.width {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < 5 && (ix as usize) < 7 {
                                    acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * input[(ci * 5 + iy as usize) * 7 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = out[(co * o.height + oy) * o.width + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_cases() {
        assert_eq!(dense_forward(&[1.0, 2.0], &[0.0; 6], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 outputs x 2 inputs
        assert_eq!(dense_forward(&[0.0, 1.0], &w, &[0.0; 3]).unwrap(), vec![2.0, 4.0, 6.0]);
        assert!(dense_forward(&[1.0], &w, &[0.0; 3]).is_err());
        let spec = LayerSpec::Dense {
            in_units: 1600,
            out_units: 800,
        };
        assert_eq!(spec.output_shape(Shape::new(1, 20, 80)).unwrap(), Shape::flat(800));
        assert_eq!(spec.param_shape(), (1_280_000, 800));
    }

    #[test]
    fn noise_modes() {
        let mut rng = Rng::new(1);
        let mut x = vec![0.5; 10];
        apply_noise(&mut x, 0.0, &mut rng, true);
        apply_noise(&mut x, 0.3, &mut rng, false);
        assert_eq!(x, vec![0.5; 10]);

        let mut z = vec![0.0; 1_000_000];
        apply_noise(&mut z, 0.1, &mut rng, true);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.0997..=0.1003).contains(&std), "std {std}");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(2);
        let mut x = vec![1.0; 100];
        assert!(apply_dropout(&mut x, 0.0, &mut rng, true).is_none());
        assert!(apply_dropout(&mut x, 0.5, &mut rng, false).is_none());
        assert_eq!(x, vec![1.0; 100]);

        let mut ones = vec![1.0; 1_000_000];
        let mask = apply_dropout(&mut ones, 0.1, &mut rng, true).unwrap();
        let mean = ones.iter().sum::<f64>() / ones.len() as f64;
        assert!((0.995..=1.005).contains(&mean), "mean {mean}");
        assert_eq!(mask, ones);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(&conv(2, 1, 2), Shape::new(2, 5, 6)).unwrap();
        let mut rng = Rng::new(4);
        let x: Vec<f64> = (0..60).map(|_| rng.uniform()).collect();
        let y: Vec<f64> = (0..g.patch() * g.positions()).map(|_| rng.uniform()).collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols, g.positions());
        let mut back = vec![0.0; 60];
        g.col2im(&y, &mut back, g.positions());
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
