//! Forward and backward kernels for the seven layer kinds.

use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    },
    Relu,
    /// 2x2 average pooling with stride 2; odd edges average the in-bounds
    /// pixels, so the output is `ceil(h/2) x ceil(w/2)`.
    Downsample2,
    /// Bilinear x2 upsampling with half-pixel centres and edge clamping.
    Upsample2,
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
        has_bias: bool,
    },
    L2Normalize,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            has_bias: true,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
            has_bias: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv3x3",
            LayerSpec::Relu => "relu",
            LayerSpec::Downsample2 => "downsample2",
            LayerSpec::Upsample2 => "upsample2",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::L2Normalize => "l2_normalize",
        }
    }

    /// `(weight count, bias count)` for learnable layers.
    pub fn param_layout(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                has_bias,
            } => Some((
                out_channels * in_channels * 9,
                if has_bias { out_channels } else { 0 },
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
                has_bias,
            } => Some((
                out_features * in_features,
                if has_bias { out_features } else { 0 },
            )),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { in_channels, .. } => in_channels * 9,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }
}

pub(crate) fn conv3x3_forward(
    input: &Tensor,
    params: &[f64],
    cin: usize,
    cout: usize,
    has_bias: bool,
) -> Tensor {
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let mut out = Tensor::zeros(cout, h, w);
    let weights = &params[..cout * cin * 9];
    for co in 0..cout {
        let dst = &mut out.data[co * hw..(co + 1) * hw];
        if has_bias {
            dst.fill(params[cout * cin * 9 + co]);
        }
        for ci in 0..cin {
            let src = &input.data[ci * hw..(ci + 1) * hw];
            let k = &weights[(co * cin + ci) * 9..(co * cin + ci) * 9 + 9];
            for ky in 0..3 {
                // output row y reads input row y + ky - 1
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (o, i) in d.iter_mut().zip(s) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv3x3_backward(
    input: &Tensor,
    params: &[f64],
    grad_out: &Tensor,
    cin: usize,
    cout: usize,
    has_bias: bool,
    grad_params: &mut [f64],
) -> Tensor {
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let mut grad_in = Tensor::zeros(cin, h, w);
    let nweights = cout * cin * 9;
    for co in 0..cout {
        let g = &grad_out.data[co * hw..(co + 1) * hw];
        if has_bias {
            grad_params[nweights + co] += g.iter().sum::<f64>();
        }
        for ci in 0..cin {
            let src = &input.data[ci * hw..(ci + 1) * hw];
            let base = (co * cin + ci) * 9;
            for ky in 0..3 {
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..3 {
                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = params[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let go = &g[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += go.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        let gi = &mut grad_in.data[ci * hw + sy * w + x0 + kx - 1
                            ..ci * hw + sy * w + x1 + kx - 1];
                        for (d, gv) in gi.iter_mut().zip(go) {
                            *d += wv * gv;
                        }
                    }
                    grad_params[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    grad_in
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in &mut out.data {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (d, &x) in g.data.iter_mut().zip(&input.data) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

fn pooled_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

pub(crate) fn downsample_forward(input: &Tensor) -> Tensor {
    let (h, w) = (input.height, input.width);
    let (oh, ow) = pooled_dims(h, w);
    let mut out = Tensor::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0;
                let mut n = 0.0;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        sum += input.at(c, y, x);
                        n += 1.0;
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = sum / n;
            }
        }
    }
    out
}

pub(crate) fn downsample_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let (h, w) = (input.height, input.width);
    let (oh, ow) = pooled_dims(h, w);
    let mut g = Tensor::zeros(input.channels, h, w);
    for c in 0..input.channels {
        for oy in 0..oh {
            let ny = ((2 * oy + 2).min(h) - 2 * oy) as f64;
            for ox in 0..ow {
                let nx = ((2 * ox + 2).min(w) - 2 * ox) as f64;
                let share = grad_out.data[(c * oh + oy) * ow + ox] / (ny * nx);
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        g.data[(c * h + y) * w + x] += share;
                    }
                }
            }
        }
    }
    g
}

/// Per-output-coordinate `(lo, hi, weight_hi)` for x2 bilinear upsampling of
/// an axis of length `n`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward(input: &Tensor) -> Tensor {
    let (h, w) = (input.height, input.width);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        let plane = &input.data[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let row = &mut out.data[(c * oh + oy) * ow..(c * oh + oy + 1) * ow];
            for (o, &(x0, x1, wx)) in row.iter_mut().zip(&tx) {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                *o = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let (h, w) = (input.height, input.width);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = Tensor::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let plane = &mut g.data[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            let row = &grad_out.data[(c * oh + oy) * ow..(c * oh + oy + 1) * ow];
            for (&go, &(x0, x1, wx)) in row.iter().zip(&tx) {
                plane[y0 * w + x0] += go * (1.0 - wy) * (1.0 - wx);
                plane[y0 * w + x1] += go * (1.0 - wy) * wx;
                plane[y1 * w + x0] += go * wy * (1.0 - wx);
                plane[y1 * w + x1] += go * wy * wx;
            }
        }
    }
    g
}

pub(crate) fn gap_forward(input: &Tensor) -> Tensor {
    let hw = input.plane() as f64;
    Tensor::vector(
        input
            .data
            .chunks_exact(input.plane())
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect(),
    )
}

pub(crate) fn gap_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let hw = input.plane();
    let mut g = Tensor::zeros(input.channels, input.height, input.width);
    for (c, chunk) in g.data.chunks_exact_mut(hw).enumerate() {
        chunk.fill(grad_out.data[c] / hw as f64);
    }
    g
}

pub(crate) fn dense_forward(
    input: &Tensor,
    params: &[f64],
    nin: usize,
    nout: usize,
    has_bias: bool,
) -> Tensor {
    let x = &input.data;
    Tensor::vector(
        (0..nout)
            .map(|o| {
                let row = &params[o * nin..(o + 1) * nin];
                let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                if has_bias {
                    dot + params[nout * nin + o]
                } else {
                    dot
                }
            })
            .collect(),
    )
}

pub(crate) fn dense_backward(
    input: &Tensor,
    params: &[f64],
    grad_out: &Tensor,
    nin: usize,
    nout: usize,
    has_bias: bool,
    grad_params: &mut [f64],
) -> Tensor {
    let mut g = vec![0.0; nin];
    for o in 0..nout {
        let go = grad_out.data[o];
        let row = &params[o * nin..(o + 1) * nin];
        let grow = &mut grad_params[o * nin..(o + 1) * nin];
        for i in 0..nin {
            grow[i] += go * input.data[i];
            g[i] += go * row[i];
        }
        if has_bias {
            grad_params[nout * nin + o] += go;
        }
    }
    Tensor {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data: g,
    }
}

/// Returns the normalized tensor and whether the input was the zero vector.
pub(crate) fn l2_forward(input: &Tensor) -> (Tensor, bool) {
    let norm = input.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = input.clone();
    if norm == 0.0 {
        return (out, true);
    }
    for v in &mut out.data {
        *v /= norm;
    }
    (out, false)
}

pub(crate) fn l2_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let norm = input.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut g = grad_out.clone();
    if norm == 0.0 {
        g.data.fill(0.0);
        return g;
    }
    // d(x/|x|) = (I - y y^T) / |x|
    let dot: f64 = input.data.iter().zip(&grad_out.data).map(|(x, g)| x * g).sum::<f64>() / norm;
    for (d, &x) in g.data.iter_mut().zip(&input.data) {
        *d = (*d - (x / norm) * dot) / norm;
    }
    g
}
