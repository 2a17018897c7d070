//! 3×3 same-padded convolution, batch normalization and PReLU, with
//! hand-written backward passes.
//!
//! Activations are `(batch, channels, height, width)` tensors in standard
//! layout. Per-sample work runs in parallel; cross-sample reductions are
//! summed in sample order so results do not depend on scheduling.

use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;

use super::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Unfolds a `(C, H, W)` image into `(C·9, H·W)` columns of 3×3
/// neighbourhoods, zero outside the image.
pub fn im2col<T: Scalar>(x: ArrayView3<'_, T>) -> Array2<T> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<T>::zeros((c * 9, h * w));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ch * 9 + ky * 3 + kx;
                let out = &mut dst[row * h * w..(row + 1) * h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let out_row = &mut out[y * w..(y + 1) * w];
                    // out_row[x] = src_row[x + kx - 1]
                    match kx {
                        0 => out_row[1..].copy_from_slice(&src_row[..w - 1]),
                        1 => out_row.copy_from_slice(src_row),
                        _ => out_row[..w - 1].copy_from_slice(&src_row[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds `(C·9, H·W)` columns back onto `(C, H, W)`,
/// accumulating overlapping contributions.
pub fn col2im<T: Scalar>(cols: ArrayView2<'_, T>, dim: (usize, usize, usize)) -> Array1<T> {
    let (c, h, w) = dim;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ch * 9 + ky * 3 + kx;
                let col = &src[row * h * w..(row + 1) * h * w];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let col_row = &col[y * w..(y + 1) * w];
                    match kx {
                        0 => dst_row[..w - 1]
                            .iter_mut()
                            .zip(&col_row[1..])
                            .for_each(|(d, s)| *d += *s),
                        1 => dst_row
                            .iter_mut()
                            .zip(col_row)
                            .for_each(|(d, s)| *d += *s),
                        _ => dst_row[1..]
                            .iter_mut()
                            .zip(&col_row[..w - 1])
                            .for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
    Array1::from(out)
}

fn stack_samples<T: Scalar>(samples: Vec<Array2<T>>, dim: (usize, usize, usize)) -> Array4<T> {
    let (c, h, w) = dim;
    let b = samples.len();
    let mut data = Vec::with_capacity(b * c * h * w);
    for s in samples {
        data.extend(s.as_standard_layout().iter().copied());
    }
    Array4::from_shape_vec((b, c, h, w), data).expect("sample shapes agree")
}

/// Same-padded 3×3 convolution. `weight` is `(out, in·9)`.
pub fn conv_forward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<'_, T>,
    bias: Option<ArrayView1<'_, T>>,
) -> Array4<T> {
    let (b, _, h, w) = x.dim();
    let c_out = weight.nrows();
    let outs: Vec<Array2<T>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.index_axis(Axis(0), i));
            let mut y = weight.dot(&cols);
            if let Some(bias) = bias {
                for (mut row, &bv) in y.rows_mut().into_iter().zip(bias.iter()) {
                    row.mapv_inplace(|v| v + bv);
                }
            }
            y
        })
        .collect();
    stack_samples(outs, (c_out, h, w))
}

pub struct ConvGrads<T> {
    pub dx: Option<Array4<T>>,
    pub dweight: Array2<T>,
    pub dbias: Array1<T>,
}

/// Gradients of a same-padded 3×3 convolution given the upstream gradient
/// `dy`. `dx` is skipped when `need_dx` is false.
pub fn conv_backward<T: Scalar>(
    x: &Array4<T>,
    weight: ArrayView2<'_, T>,
    dy: &Array4<T>,
    need_dx: bool,
) -> ConvGrads<T> {
    let (b, c_in, h, w) = x.dim();
    let c_out = weight.nrows();
    let per_sample: Vec<(Array2<T>, Option<Array2<T>>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.index_axis(Axis(0), i));
            let dy_i = dy
                .index_axis(Axis(0), i)
                .to_shape((c_out, h * w))
                .expect("contiguous")
                .to_owned();
            let dw = dy_i.dot(&cols.t());
            let dx = need_dx.then(|| {
                let dcols = weight.t().dot(&dy_i);
                col2im(dcols.view(), (c_in, h, w))
                    .into_shape_with_order((c_in, h * w))
                    .expect("sized")
            });
            (dw, dx)
        })
        .collect();

    let mut dweight = Array2::<T>::zeros(weight.raw_dim());
    let mut dx_parts = Vec::with_capacity(if need_dx { b } else { 0 });
    for (dw, dx) in per_sample {
        dweight += &dw;
        if let Some(dx) = dx {
            dx_parts.push(dx);
        }
    }
    let dbias = dy
        .axis_iter(Axis(1))
        .map(|ch| ch.iter().fold(T::zero(), |acc, &v| acc + v))
        .collect();
    ConvGrads {
        dx: need_dx.then(|| stack_samples(dx_parts, (c_in, h, w))),
        dweight,
        dbias,
    }
}

/// Saved tensors of a training-mode batch-norm forward pass.
pub struct BnCache<T> {
    pub xhat: Array4<T>,
    pub inv_std: Array1<T>,
    pub batch_mean: Array1<T>,
    pub batch_var: Array1<T>,
}

fn channel_slices<T: Scalar>(x: &Array4<T>) -> impl Iterator<Item = (usize, &[T])> {
    let (_, c, h, w) = x.dim();
    let plane = h * w;
    x.as_slice()
        .expect("standard layout")
        .chunks(plane)
        .enumerate()
        .map(move |(k, s)| (k % c, s))
}

/// Batch normalization with batch statistics (population variance).
pub fn bn_forward_train<T: Scalar>(
    x: &Array4<T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
) -> (Array4<T>, BnCache<T>) {
    let (b, c, h, w) = x.dim();
    let count = T::from_usize(b * h * w).unwrap();
    let mut mean = Array1::<T>::zeros(c);
    for (ch, s) in channel_slices(x) {
        mean[ch] += s.iter().fold(T::zero(), |a, &v| a + v);
    }
    mean.mapv_inplace(|v| v / count);
    let mut var = Array1::<T>::zeros(c);
    for (ch, s) in channel_slices(x) {
        let m = mean[ch];
        var[ch] += s.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
    }
    var.mapv_inplace(|v| v / count);
    let eps = T::from_f64(BN_EPS).unwrap();
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());

    let mut xhat = x.clone();
    let mut y = x.clone();
    let plane = h * w;
    for (k, (xs, ys)) in xhat
        .as_slice_mut()
        .unwrap()
        .chunks_mut(plane)
        .zip(y.as_slice_mut().unwrap().chunks_mut(plane))
        .enumerate()
    {
        let ch = k % c;
        let (m, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
        for (xv, yv) in xs.iter_mut().zip(ys.iter_mut()) {
            let n = (*xv - m) * is;
            *xv = n;
            *yv = g * n + bt;
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Batch normalization with frozen running statistics.
pub fn bn_forward_infer<T: Scalar>(
    x: &Array4<T>,
    gamma: ArrayView1<'_, T>,
    beta: ArrayView1<'_, T>,
    running_mean: ArrayView1<'_, T>,
    running_var: ArrayView1<'_, T>,
) -> Array4<T> {
    let (_, c, h, w) = x.dim();
    let eps = T::from_f64(BN_EPS).unwrap();
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| beta[ch] - running_mean[ch] * scale[ch])
        .collect();
    let mut y = x.clone();
    for (k, ys) in y.as_slice_mut().unwrap().chunks_mut(h * w).enumerate() {
        let ch = k % c;
        ys.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
    }
    y
}

pub struct BnGrads<T> {
    pub dx: Array4<T>,
    pub dgamma: Array1<T>,
    pub dbeta: Array1<T>,
}

pub fn bn_backward<T: Scalar>(dy: &Array4<T>, gamma: ArrayView1<'_, T>, cache: &BnCache<T>) -> BnGrads<T> {
    let (b, c, h, w) = dy.dim();
    let plane = h * w;
    let count = T::from_usize(b * plane).unwrap();
    let mut dgamma = Array1::<T>::zeros(c);
    let mut dbeta = Array1::<T>::zeros(c);
    let dys = dy.as_slice().expect("standard layout");
    let xh = cache.xhat.as_slice().expect("standard layout");
    for (k, (d, x)) in dys.chunks(plane).zip(xh.chunks(plane)).enumerate() {
        let ch = k % c;
        let (mut sg, mut sb) = (T::zero(), T::zero());
        for (&dv, &xv) in d.iter().zip(x) {
            sg += dv * xv;
            sb += dv;
        }
        dgamma[ch] += sg;
        dbeta[ch] += sb;
    }
    let mut dx = dy.clone();
    for (k, (out, x)) in dx
        .as_slice_mut()
        .unwrap()
        .chunks_mut(plane)
        .zip(xh.chunks(plane))
        .enumerate()
    {
        let ch = k % c;
        let factor = gamma[ch] * cache.inv_std[ch] / count;
        let (dg, db) = (dgamma[ch], dbeta[ch]);
        for (o, &xv) in out.iter_mut().zip(x) {
            *o = factor * (count * *o - db - xv * dg);
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

/// PReLU with one shared slope: `x` for `x > 0`, `slope·x` otherwise.
pub fn prelu_forward<T: Scalar>(x: &Array4<T>, slope: T) -> Array4<T> {
    x.mapv(|v| if v > T::zero() { v } else { slope * v })
}

pub fn prelu_backward<T: Scalar>(x: &Array4<T>, slope: T, dy: &Array4<T>) -> (Array4<T>, T) {
    let mut dslope = T::zero();
    let mut dx = dy.clone();
    for (d, &xv) in dx.iter_mut().zip(x.iter()) {
        if xv <= T::zero() {
            dslope += *d * xv;
            *d *= slope;
        }
    }
    (dx, dslope)
}
