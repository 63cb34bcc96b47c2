//! Stateless layer kernels. Batches are the leading axis everywhere; images
//! are NHWC.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use crate::error::{check_shape, Result};

/// `x · w + b` for `x: batch×in`, `w: in×out`, `b: out`.
pub fn dense(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array2<f64>> {
    check_shape("dense", &[x.ncols()], &[w.nrows()])?;
    check_shape("dense bias", &[w.ncols()], &[b.len()])?;
    Ok(x.dot(&w) + b)
}

pub struct DenseGrads {
    pub dx: Array2<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

pub fn dense_backward(x: ArrayView2<f64>, w: ArrayView2<f64>, dy: ArrayView2<f64>) -> Result<DenseGrads> {
    check_shape("dense_backward", &[x.nrows(), w.ncols()], dy.shape())?;
    Ok(DenseGrads {
        dx: dy.dot(&w.t()),
        dw: x.t().dot(&dy),
        db: dy.sum_axis(Axis(0)),
    })
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the layer *output*.
pub fn relu_backward<D: ndarray::Dimension>(
    out: &ndarray::Array<f64, D>,
    dy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Geometry of a "same"-padded stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    fn pad_top(&self) -> usize {
        (self.kh - 1) / 2
    }
    fn pad_left(&self) -> usize {
        (self.kw - 1) / 2
    }
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Patch matrix with one row per output pixel, zero outside the image.
fn im2col(x: ArrayView4<f64>, cs: ConvShape) -> Array2<f64> {
    let (b, h, w, c) = x.dim();
    let mut cols = Array2::<f64>::zeros((b * h * w, cs.patch()));
    let (pt, pl) = (cs.pad_top() as isize, cs.pad_left() as isize);
    for n in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row = (n * h + i) * w + j;
                let mut dst = cols.row_mut(row);
                for di in 0..cs.kh {
                    let si = i as isize + di as isize - pt;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..cs.kw {
                        let sj = j as isize + dj as isize - pl;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let off = (di * cs.kw + dj) * c;
                        let src = x.slice(s![n, si as usize, sj as usize, ..]);
                        dst.slice_mut(s![off..off + c]).assign(&src);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, dims: (usize, usize, usize, usize), cs: ConvShape) -> Array4<f64> {
    let (b, h, w, c) = dims;
    let mut x = Array4::<f64>::zeros(dims);
    let (pt, pl) = (cs.pad_top() as isize, cs.pad_left() as isize);
    for n in 0..b {
        for i in 0..h {
            for j in 0..w {
                let row = cols.row((n * h + i) * w + j);
                for di in 0..cs.kh {
                    let si = i as isize + di as isize - pt;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dj in 0..cs.kw {
                        let sj = j as isize + dj as isize - pl;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let off = (di * cs.kw + dj) * c;
                        let mut dst = x.slice_mut(s![n, si as usize, sj as usize, ..]);
                        dst += &row.slice(s![off..off + c]);
                    }
                }
            }
        }
    }
    x
}

/// Cached input patches needed by [`conv2d_backward`].
pub struct ConvCache {
    cols: Array2<f64>,
    in_dims: (usize, usize, usize, usize),
}

/// Stride-1 zero-padded ("same") convolution.
///
/// `kernel` is `kh×kw×cin×cout` flattened to `(kh·kw·cin)×cout`, `bias` has
/// length `cout`. The output keeps the spatial size of the input.
pub fn conv2d(
    x: ArrayView4<f64>,
    kernel: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    cs: ConvShape,
) -> Result<(Array4<f64>, ConvCache)> {
    let (b, h, w, c) = x.dim();
    check_shape("conv2d input channels", &[cs.cin], &[c])?;
    check_shape("conv2d kernel", &[cs.patch(), cs.cout], kernel.shape())?;
    check_shape("conv2d bias", &[cs.cout], &[bias.len()])?;
    let cols = im2col(x, cs);
    let out = cols.dot(&kernel) + bias;
    let out = out
        .into_shape_with_order((b, h, w, cs.cout))
        .expect("conv output reshape");
    Ok((out, ConvCache { cols, in_dims: (b, h, w, c) }))
}

pub struct ConvGrads {
    pub dx: Array4<f64>,
    pub dkernel: Array2<f64>,
    pub dbias: Array1<f64>,
}

pub fn conv2d_backward(
    cache: &ConvCache,
    kernel: ArrayView2<f64>,
    dy: ArrayView4<f64>,
    cs: ConvShape,
) -> Result<ConvGrads> {
    let (b, h, w, _) = cache.in_dims;
    check_shape("conv2d_backward", &[b, h, w, cs.cout], dy.shape())?;
    let dy2 = dy
        .to_shape((b * h * w, cs.cout))
        .expect("conv grad reshape");
    let dkernel = cache.cols.t().dot(&dy2);
    let dbias = dy2.sum_axis(Axis(0));
    let dcols = dy2.dot(&kernel.t());
    let dx = col2im(&dcols, cache.in_dims, cs);
    Ok(ConvGrads { dx, dkernel, dbias })
}

pub struct PoolCache {
    argmax: Vec<usize>,
    in_dims: (usize, usize, usize, usize),
}

/// 2×2 max pooling with stride 2; odd extents round up (the last window is
/// partial).
pub fn maxpool2x2(x: ArrayView4<f64>) -> (Array4<f64>, PoolCache) {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array4::<f64>::zeros((b, oh, ow, c));
    let mut argmax = vec![0usize; b * oh * ow * c];
    let xs = x.as_standard_layout();
    let flat = xs.as_slice().expect("standard layout");
    for n in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..2 {
                        let si = 2 * i + di;
                        if si >= h {
                            continue;
                        }
                        for dj in 0..2 {
                            let sj = 2 * j + dj;
                            if sj >= w {
                                continue;
                            }
                            let idx = ((n * h + si) * w + sj) * c + ch;
                            if flat[idx] > best {
                                best = flat[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[[n, i, j, ch]] = best;
                    argmax[((n * oh + i) * ow + j) * c + ch] = best_idx;
                }
            }
        }
    }
    (out, PoolCache { argmax, in_dims: (b, h, w, c) })
}

pub fn maxpool2x2_backward(cache: &PoolCache, dy: ArrayView4<f64>) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros(cache.in_dims);
    {
        let flat = dx.as_slice_mut().expect("fresh array is contiguous");
        for (g, &idx) in dy.iter().zip(cache.argmax.iter()) {
            flat[idx] += g;
        }
    }
    dx
}
