//! Differentiable tensor operations.
//!
//! Shapes follow ndarray broadcasting for the binary elementwise ops. Image
//! tensors are channel-last: `[batch, height, width, channels]`.

use std::rc::Rc;

use ndarray::{concatenate, Axis, Ix2, IxDyn, Slice, Zip};

use super::tensor::{Array, Tensor};

fn some(t: Tensor) -> Option<Tensor> {
    Some(t)
}

fn map(x: &Array, f: impl Fn(f64) -> f64) -> Array {
    x.mapv(f)
}

// ---------------------------------------------------------------------------
// broadcasting helpers

/// Sums `x` down to `shape`, reversing a broadcast.
pub fn sum_to(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let value = reduce_to(x.value(), shape);
    let src: Vec<usize> = x.shape().to_vec();
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(broadcast_to(g, &src))]),
    )
}

fn reduce_to(x: &Array, shape: &[usize]) -> Array {
    let mut v = x.clone();
    let lead = x.ndim() - shape.len();
    for _ in 0..lead {
        v = v.sum_axis(Axis(0));
    }
    for (axis, &n) in shape.iter().enumerate() {
        if n == 1 && v.shape()[axis] != 1 {
            v = v.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    v
}

pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let value = x
        .value()
        .broadcast(IxDyn(shape))
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", x.shape(), shape))
        .to_owned();
    let src: Vec<usize> = x.shape().to_vec();
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(sum_to(g, &src))]),
    )
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            if da == db || db == 1 {
                da
            } else if da == 1 {
                db
            } else {
                panic!("incompatible shapes {a:?} and {b:?}")
            }
        })
        .collect()
}

fn bin_value(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        Zip::from(&mut out).and(b).for_each(|o, &y| *o = f(*o, y));
        return out;
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

// ---------------------------------------------------------------------------
// binary elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let value = bin_value(a.value(), b.value(), |x, y| x + y);
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| vec![some(sum_to(g, p[0].shape())), some(sum_to(g, p[1].shape()))]),
    )
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    let value = bin_value(a.value(), b.value(), |x, y| x - y);
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| {
            vec![
                some(sum_to(g, p[0].shape())),
                some(sum_to(&neg(g), p[1].shape())),
            ]
        }),
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    let value = bin_value(a.value(), b.value(), |x, y| x * y);
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| {
            let ga = p[0]
                .requires_grad()
                .then(|| sum_to(&mul(g, &p[1]), p[0].shape()));
            let gb = p[1]
                .requires_grad()
                .then(|| sum_to(&mul(g, &p[0]), p[1].shape()));
            vec![ga, gb]
        }),
    )
}

pub fn div(a: &Tensor, b: &Tensor) -> Tensor {
    let value = bin_value(a.value(), b.value(), |x, y| x / y);
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, out| {
            let ga = p[0]
                .requires_grad()
                .then(|| sum_to(&div(g, &p[1]), p[0].shape()));
            let gb = p[1]
                .requires_grad()
                .then(|| sum_to(&neg(&div(&mul(g, out), &p[1])), p[1].shape()));
            vec![ga, gb]
        }),
    )
}

// ---------------------------------------------------------------------------
// unary elementwise

pub fn neg(x: &Tensor) -> Tensor {
    scale(x, -1.0)
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let value = x.value() * c;
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(scale(g, c))]),
    )
}

pub fn add_scalar(x: &Tensor, c: f64) -> Tensor {
    let value = x.value() + c;
    Tensor::from_op(value, vec![x.clone()], Box::new(|g, _, _| vec![some(g.clone())]))
}

pub fn square(x: &Tensor) -> Tensor {
    let value = map(x.value(), |v| v * v);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, p, _| vec![some(scale(&mul(g, &p[0]), 2.0))]),
    )
}

pub fn exp(x: &Tensor) -> Tensor {
    let value = map(x.value(), f64::exp);
    Tensor::from_op(value, vec![x.clone()], Box::new(|g, _, out| vec![some(mul(g, out))]))
}

pub fn log(x: &Tensor) -> Tensor {
    let value = map(x.value(), f64::ln);
    Tensor::from_op(value, vec![x.clone()], Box::new(|g, p, _| vec![some(div(g, &p[0]))]))
}

pub fn sqrt(x: &Tensor) -> Tensor {
    let value = map(x.value(), f64::sqrt);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, _, out| vec![some(scale(&div(g, out), 0.5))]),
    )
}

pub fn tanh(x: &Tensor) -> Tensor {
    let value = map(x.value(), f64::tanh);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, _, out| {
            let one_minus = add_scalar(&neg(&square(out)), 1.0);
            vec![some(mul(g, &one_minus))]
        }),
    )
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let value = map(x.value(), sigmoid_f64);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, _, out| {
            let d = mul(out, &add_scalar(&neg(out), 1.0));
            vec![some(mul(g, &d))]
        }),
    )
}

pub fn sigmoid_f64(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`, evaluated without overflow for large `|x|`.
pub fn softplus_f64(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub fn softplus(x: &Tensor) -> Tensor {
    let value = map(x.value(), softplus_f64);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, p, _| vec![some(mul(g, &sigmoid(&p[0])))]),
    )
}

pub fn abs(x: &Tensor) -> Tensor {
    let value = map(x.value(), f64::abs);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, p, _| {
            let sign = Tensor::constant(map(p[0].value(), |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }));
            vec![some(mul(g, &sign))]
        }),
    )
}

/// Leaky ReLU; `slope = 0` gives the plain ReLU.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let value = map(x.value(), |v| if v > 0.0 { v } else { slope * v });
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, p, _| {
            let mask = Tensor::constant(map(p[0].value(), |v| if v > 0.0 { 1.0 } else { slope }));
            vec![some(mul(g, &mask))]
        }),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    leaky_relu(x, 0.0)
}

// ---------------------------------------------------------------------------
// reductions and shape

pub fn sum_all(x: &Tensor) -> Tensor {
    let value = Array::from_elem(IxDyn(&[]), x.value().sum());
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, p, _| vec![some(broadcast_to(g, p[0].shape()))]),
    )
}

pub fn mean_all(x: &Tensor) -> Tensor {
    let n = x.len().max(1) as f64;
    scale(&sum_all(x), 1.0 / n)
}

/// Sum over `axis`, keeping it with length 1.
pub fn sum_axis(x: &Tensor, axis: usize) -> Tensor {
    let value = x.value().sum_axis(Axis(axis)).insert_axis(Axis(axis));
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(|g, p, _| vec![some(broadcast_to(g, p[0].shape()))]),
    )
}

pub fn mean_axis(x: &Tensor, axis: usize) -> Tensor {
    let n = x.shape()[axis].max(1) as f64;
    scale(&sum_axis(x, axis), 1.0 / n)
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let value = x
        .value()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .unwrap_or_else(|e| panic!("reshape {:?} -> {:?}: {e}", x.shape(), shape));
    let src: Vec<usize> = x.shape().to_vec();
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(reshape(g, &src))]),
    )
}

pub fn permute(x: &Tensor, axes: &[usize]) -> Tensor {
    let value = x
        .value()
        .view()
        .permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .into_owned();
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(permute(g, &inverse))]),
    )
}

pub fn transpose2(x: &Tensor) -> Tensor {
    permute(x, &[1, 0])
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let av = a.value().view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-D");
    let bv = b.value().view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-D");
    assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimension mismatch");
    let value = av.dot(&bv).into_dyn();
    Tensor::from_op(
        value,
        vec![a.clone(), b.clone()],
        Box::new(|g, p, _| {
            let ga = p[0].requires_grad().then(|| matmul(g, &transpose2(&p[1])));
            let gb = p[1].requires_grad().then(|| matmul(&transpose2(&p[0]), g));
            vec![ga, gb]
        }),
    )
}

pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
    let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
    let value = concatenate(Axis(axis), &views).expect("concat shape mismatch");
    let sizes: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
    Tensor::from_op(
        value,
        parts.to_vec(),
        Box::new(move |g, _, _| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&n| {
                    let s = narrow(g, axis, start, n);
                    start += n;
                    some(s)
                })
                .collect()
        }),
    )
}

pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let full = x.shape()[axis];
    if start == 0 && len == full {
        return x.clone();
    }
    let value = x
        .value()
        .slice_axis(Axis(axis), Slice::from(start..start + len))
        .to_owned();
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(pad_axis(g, axis, start, full))]),
    )
}

/// Embeds `x` at offset `start` along `axis` inside a zero tensor whose axis
/// length is `full`. The adjoint of [`narrow`].
pub fn pad_axis(x: &Tensor, axis: usize, start: usize, full: usize) -> Tensor {
    let len = x.shape()[axis];
    let mut shape = x.shape().to_vec();
    shape[axis] = full;
    let mut value = Array::zeros(IxDyn(&shape));
    value
        .slice_axis_mut(Axis(axis), Slice::from(start..start + len))
        .assign(x.value());
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(narrow(g, axis, start, len))]),
    )
}

/// Selects rows of a tensor along axis 0.
pub fn index_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let value = x.value().select(Axis(0), rows);
    let rows: Rc<Vec<usize>> = Rc::new(rows.to_vec());
    let n = x.shape()[0];
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(scatter_rows(g, rows.clone(), n))]),
    )
}

fn scatter_rows(g: &Tensor, rows: Rc<Vec<usize>>, n: usize) -> Tensor {
    let mut shape = g.shape().to_vec();
    shape[0] = n;
    let mut value = Array::zeros(IxDyn(&shape));
    for (i, &r) in rows.iter().enumerate() {
        let mut dst = value.index_axis_mut(Axis(0), r);
        dst += &g.value().index_axis(Axis(0), i);
    }
    let rows2 = rows.clone();
    Tensor::from_op(
        value,
        vec![g.clone()],
        Box::new(move |gg, _, _| vec![some(index_rows(gg, &rows2))]),
    )
}

// ---------------------------------------------------------------------------
// convolution support

/// Geometry of a stride-1 "same" convolution patch extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl PatchGeom {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
    fn cols(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }
}

/// Extracts `kernel × kernel` zero-padded patches from an NHWC tensor into a
/// `[B·H·W, k·k·C]` matrix, patch entries ordered (ky, kx, c).
pub fn im2col(x: &Tensor, kernel: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "im2col expects NHWC");
    let geom = PatchGeom {
        batch: s[0],
        height: s[1],
        width: s[2],
        channels: s[3],
        kernel,
    };
    let value = im2col_value(x.value(), geom);
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(col2im(g, geom))]),
    )
}

fn im2col_value(x: &Array, geom: PatchGeom) -> Array {
    let PatchGeom { batch, height, width, channels, kernel } = geom;
    let pad = geom.pad();
    let src = x.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let ncols = geom.cols();
    let mut out = vec![0.0; batch * height * width * ncols];
    for b in 0..batch {
        for y in 0..height {
            for xx in 0..width {
                let row = ((b * height + y) * width + xx) * ncols;
                for ky in 0..kernel {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        let s0 = ((b * height + sy as usize) * width + sx as usize) * channels;
                        let d0 = row + (ky * kernel + kx) * channels;
                        out[d0..d0 + channels].copy_from_slice(&src[s0..s0 + channels]);
                    }
                }
            }
        }
    }
    Array::from_shape_vec(IxDyn(&[batch * height * width, ncols]), out).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back into an image.
pub fn col2im(cols: &Tensor, geom: PatchGeom) -> Tensor {
    let PatchGeom { batch, height, width, channels, kernel } = geom;
    let pad = geom.pad();
    let ncols = geom.cols();
    let src = cols.value().as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = vec![0.0; batch * height * width * channels];
    for b in 0..batch {
        for y in 0..height {
            for xx in 0..width {
                let row = ((b * height + y) * width + xx) * ncols;
                for ky in 0..kernel {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let sx = xx as isize + kx as isize - pad;
                        if sx < 0 || sx >= width as isize {
                            continue;
                        }
                        let d0 = ((b * height + sy as usize) * width + sx as usize) * channels;
                        let s0 = row + (ky * kernel + kx) * channels;
                        for c in 0..channels {
                            out[d0 + c] += src[s0 + c];
                        }
                    }
                }
            }
        }
    }
    let value = Array::from_shape_vec(IxDyn(&[batch, height, width, channels]), out)
        .expect("col2im shape");
    Tensor::from_op(
        value,
        vec![cols.clone()],
        Box::new(move |g, _, _| vec![some(im2col(g, kernel))]),
    )
}

/// Stride-1 zero-padded convolution. `weight` is `[k·k·C_in, C_out]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, kernel: usize) -> Tensor {
    let s = x.shape().to_vec();
    let cout = weight.shape()[1];
    let cols = if kernel == 1 {
        reshape(x, &[s[0] * s[1] * s[2], s[3]])
    } else {
        im2col(x, kernel)
    };
    let y = reshape(&matmul(&cols, weight), &[s[0], s[1], s[2], cout]);
    match bias {
        Some(b) => add(&y, b),
        None => y,
    }
}

/// 2×2 average pooling on NHWC.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    assert!(s[1] % 2 == 0 && s[2] % 2 == 0, "avg_pool2 needs even spatial dims");
    let r = reshape(x, &[s[0], s[1] / 2, 2, s[2] / 2, 2, s[3]]);
    let r = sum_axis(&sum_axis(&r, 4), 2);
    scale(&reshape(&r, &[s[0], s[1] / 2, s[2] / 2, s[3]]), 0.25)
}

/// Nearest-neighbour 2× upsampling on NHWC.
pub fn upsample2(x: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let r = reshape(x, &[s[0], s[1], 1, s[2], 1, s[3]]);
    let r = broadcast_to(&r, &[s[0], s[1], 2, s[2], 2, s[3]]);
    reshape(&r, &[s[0], s[1] * 2, s[2] * 2, s[3]])
}

/// Mean over the two spatial axes: `[B,H,W,C] -> [B,C]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let r = reshape(x, &[s[0], s[1] * s[2], s[3]]);
    reshape(&mean_axis(&r, 1), &[s[0], s[3]])
}

/// Per-sample spatial remapping of an NHWC tensor: output pixel `i` of
/// sample `b` copies source pixel `map[b·H·W + i]` (or zero when `None`).
pub fn spatial_gather(x: &Tensor, map: Rc<Vec<Option<u32>>>) -> Tensor {
    let s = x.shape().to_vec();
    let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
    assert_eq!(map.len(), b * hw, "spatial map length");
    let src = x.value().as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = vec![0.0; b * hw * c];
    for bi in 0..b {
        for i in 0..hw {
            if let Some(j) = map[bi * hw + i] {
                let d = (bi * hw + i) * c;
                let s0 = (bi * hw + j as usize) * c;
                out[d..d + c].copy_from_slice(&src[s0..s0 + c]);
            }
        }
    }
    let value = Array::from_shape_vec(IxDyn(&s), out).expect("gather shape");
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| vec![some(spatial_scatter(g, map.clone()))]),
    )
}

fn spatial_scatter(g: &Tensor, map: Rc<Vec<Option<u32>>>) -> Tensor {
    let s = g.shape().to_vec();
    let (b, hw, c) = (s[0], s[1] * s[2], s[3]);
    let src = g.value().as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let mut out = vec![0.0; b * hw * c];
    for bi in 0..b {
        for i in 0..hw {
            if let Some(j) = map[bi * hw + i] {
                let s0 = (bi * hw + i) * c;
                let d = (bi * hw + j as usize) * c;
                for k in 0..c {
                    out[d + k] += src[s0 + k];
                }
            }
        }
    }
    let value = Array::from_shape_vec(IxDyn(&s), out).expect("scatter shape");
    Tensor::from_op(
        value,
        vec![g.clone()],
        Box::new(move |gg, _, _| vec![some(spatial_gather(gg, map.clone()))]),
    )
}

/// Row-wise log-softmax over the last axis of a 2-D tensor.
pub fn log_softmax(x: &Tensor) -> Tensor {
    let v = x.value();
    let n = v.shape()[0];
    let mut maxes = Array::zeros(IxDyn(&[n, 1]));
    for (i, row) in v.outer_iter().enumerate() {
        maxes[[i, 0]] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    // max is treated as a constant: the result is shift-invariant.
    let shifted = sub(x, &Tensor::constant(maxes));
    let lse = log(&sum_axis(&exp(&shifted), 1));
    sub(&shifted, &lse)
}

pub fn softmax(x: &Tensor) -> Tensor {
    exp(&log_softmax(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::tensor::grad;
    use ndarray::ArrayD;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::leaf(ArrayD::from_shape_vec(IxDyn(shape), data.to_vec()).unwrap())
    }

    /// Central-difference check of d(sum(w * f(x)))/dx.
    fn check_unary(f: impl Fn(&Tensor) -> Tensor, x0: &[f64], shape: &[usize]) {
        let x = t(shape, x0);
        let out_shape = f(&x).shape().to_vec();
        let n: usize = out_shape.iter().product();
        let weights: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * (i % 13) as f64).collect();
        let w = Tensor::constant(ArrayD::from_shape_vec(IxDyn(&out_shape), weights).unwrap());
        let y = sum_all(&mul(&f(&x), &w));
        let g = grad(&y, &[&x], false).unwrap()[0].clone().unwrap().to_vec();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.to_vec();
            xp[i] += h;
            let mut xm = x0.to_vec();
            xm[i] -= h;
            let fp = sum_all(&mul(&f(&t(shape, &xp)), &w)).item();
            let fm = sum_all(&mul(&f(&t(shape, &xm)), &w)).item();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "i={i} fd={fd} an={}", g[i]);
        }
    }

    #[test]
    fn elementwise_gradients() {
        let x = [0.3, -1.2, 2.0, 0.7, -0.1, 1.5];
        check_unary(tanh, &x, &[2, 3]);
        check_unary(sigmoid, &x, &[2, 3]);
        check_unary(softplus, &x, &[2, 3]);
        check_unary(|v| leaky_relu(v, 0.2), &x, &[2, 3]);
        check_unary(exp, &x, &[2, 3]);
        check_unary(|v| sqrt(&add_scalar(&square(v), 1.0)), &x, &[2, 3]);
        check_unary(log_softmax, &x, &[2, 3]);
        check_unary(|v| mul(v, &sum_axis(v, 1)), &x, &[2, 3]);
        check_unary(|v| div(v, &add_scalar(&square(v), 2.0)), &x, &[2, 3]);
    }

    #[test]
    fn conv_and_pool_gradients() {
        let x: Vec<f64> = (0..2 * 4 * 4 * 2).map(|i| ((i * 37 % 11) as f64) / 7.0 - 0.6).collect();
        let w = Tensor::constant(
            ArrayD::from_shape_vec(
                IxDyn(&[18, 3]),
                (0..54).map(|i| ((i * 13 % 7) as f64) / 5.0 - 0.5).collect(),
            )
            .unwrap(),
        );
        check_unary(|v| conv2d(v, &w, None, 3), &x, &[2, 4, 4, 2]);
        check_unary(avg_pool2, &x, &[2, 4, 4, 2]);
        check_unary(|v| upsample2(v), &x, &[2, 4, 4, 2]);
        check_unary(global_avg_pool, &x, &[2, 4, 4, 2]);
        let map: Rc<Vec<Option<u32>>> =
            Rc::new((0..32).map(|i| if i % 5 == 0 { None } else { Some(((i * 7) % 16) as u32) }).collect());
        check_unary(|v| spatial_gather(v, map.clone()), &x, &[2, 4, 4, 2]);
    }

    #[test]
    fn second_order_through_conv() {
        // d/dw || d/dx sum(conv(x, w)^2) ||^2 against finite differences in w.
        let x0: Vec<f64> = (0..1 * 3 * 3 * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let w0: Vec<f64> = (0..18 * 2).map(|i| (i as f64 * 0.91).cos() * 0.5).collect();
        let f = |wv: &[f64]| -> (f64, Vec<f64>) {
            let x = t(&[1, 3, 3, 2], &x0);
            let w = t(&[18, 2], wv);
            let y = sum_all(&square(&conv2d(&x, &w, None, 3)));
            let gx = grad(&y, &[&x], true).unwrap()[0].clone().unwrap();
            let pen = sum_all(&square(&gx));
            let gw = grad(&pen, &[&w], false).unwrap()[0].clone().unwrap().to_vec();
            (pen.item(), gw)
        };
        let (_, gw) = f(&w0);
        let h = 1e-5;
        for i in 0..w0.len() {
            let mut wp = w0.clone();
            wp[i] += h;
            let mut wm = w0.clone();
            wm[i] -= h;
            let fd = (f(&wp).0 - f(&wm).0) / (2.0 * h);
            assert!((fd - gw[i]).abs() < 1e-5 * (1.0 + fd.abs()), "i={i} fd={fd} an={}", gw[i]);
        }
    }

    #[test]
    fn broadcasting_add_reduces_gradient() {
        let a = t(&[2, 3], &[1.0; 6]);
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        let y = sum_all(&mul(&add(&a, &b), &add(&a, &b)));
        let g = grad(&y, &[&b], false).unwrap()[0].clone().unwrap();
        assert_eq!(g.shape(), &[3]);
        assert_eq!(g.to_vec(), vec![8.0, 12.0, 16.0]);
    }
}
