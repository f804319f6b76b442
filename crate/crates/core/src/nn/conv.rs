//! 2-D convolution via im2col + gemm.

use ndarray::{Array1, Array2, Array4};

use crate::rng::{normal, Rng};
use crate::scalar::{fl, Scalar};

/// Square-kernel 2-D convolution. Weight layout is `(c_out, c_in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Array4<T>,
    pub b: Array1<T>,
    pub stride: usize,
    pub pad: usize,
}

/// Forward cache: the im2col matrix plus the shapes needed to run backward.
pub struct Conv2dCache<T> {
    cols: Array2<T>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    /// DCGAN-style N(0, init_std) weight init, zero bias.
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut w: Array4<T> = normal(rng, (c_out, c_in, k, k));
        w.mapv_inplace(|v| v * fl::<T>(init_std));
        Conv2d {
            w,
            b: Array1::zeros(c_out),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, Conv2dCache<T>) {
        let (n, c_in, h, w) = x.dim();
        debug_assert_eq!(c_in, self.in_channels());
        let (oh, ow) = self.out_size(h, w);
        let cols = im2col(x, self.kernel(), self.stride, self.pad, oh, ow);
        let c_out = self.out_channels();
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * self.kernel() * self.kernel()))
            .expect("conv weight is contiguous");
        // (c_out, n*oh*ow)
        let y_mat = w_mat.dot(&cols);
        let mut y = Array4::<T>::zeros((n, c_out, oh, ow));
        {
            let y_slice = y.as_slice_mut().expect("contiguous");
            let chunk = oh * ow;
            for co in 0..c_out {
                let bias = self.b[co];
                let row = y_mat.row(co);
                let row = row.as_slice().expect("gemm output row contiguous");
                for ni in 0..n {
                    let src = &row[ni * chunk..(ni + 1) * chunk];
                    let base = ((ni * c_out) + co) * chunk;
                    let dst = &mut y_slice[base..base + chunk];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *s + bias;
                    }
                }
            }
        }
        (
            y,
            Conv2dCache {
                cols,
                in_shape: (n, c_in, h, w),
                out_hw: (oh, ow),
            },
        )
    }

    /// Backward pass. Returns `dx`; when `grads` is given it receives
    /// `(dw, db)` accumulated for this layer.
    pub fn backward(
        &self,
        cache: &Conv2dCache<T>,
        dy: &Array4<T>,
        mut grads: Option<(&mut Array4<T>, &mut Array1<T>)>,
    ) -> Array4<T> {
        let (n, c_in, h, w) = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let c_out = self.out_channels();
        let k = self.kernel();
        debug_assert_eq!(dy.dim(), (n, c_out, oh, ow));

        // Re-pack dy as (c_out, n*oh*ow) matching the column layout.
        let mut dy_mat = Array2::<T>::zeros((c_out, n * oh * ow));
        {
            let dy_slice = dy.as_slice().expect("contiguous");
            let chunk = oh * ow;
            for co in 0..c_out {
                let mut row = dy_mat.row_mut(co);
                let row = row.as_slice_mut().expect("contiguous");
                for ni in 0..n {
                    let base = ((ni * c_out) + co) * chunk;
                    row[ni * chunk..(ni + 1) * chunk]
                        .copy_from_slice(&dy_slice[base..base + chunk]);
                }
            }
        }

        if let Some((dw, db)) = grads.as_mut() {
            let dw_mat = dy_mat.dot(&cache.cols.t());
            let dw_new = dw_mat
                .into_shape_with_order((c_out, c_in, k, k))
                .expect("shape");
            **dw += &dw_new;
            for co in 0..c_out {
                (*db)[co] += dy_mat.row(co).iter().copied().sum::<T>();
            }
        }

        let w_mat = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous");
        let dcols = w_mat.t().dot(&dy_mat);
        col2im(&dcols, (n, c_in, h, w), k, self.stride, self.pad, oh, ow)
    }
}

/// Unfold `x` into a `(c_in*k*k, n*oh*ow)` matrix (zero padding).
fn im2col<T: Scalar>(
    x: &Array4<T>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let (n, c_in, h, w) = x.dim();
    let mut cols = Array2::<T>::zeros((c_in * k * k, n * oh * ow));
    let x_slice = x.as_slice().expect("contiguous");
    let cols_slice = cols.as_slice_mut().expect("contiguous");
    let row_len = n * oh * ow;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k) + ki) * k + kj;
                let out_row = &mut cols_slice[row * row_len..(row + 1) * row_len];
                for ni in 0..n {
                    let x_base = (ni * c_in + c) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        let dst_base = (ni * oh + oy) * ow;
                        if iy < 0 || iy >= h as isize {
                            continue; // zeros already in place
                        }
                        let iy = iy as usize;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out_row[dst_base + ox] = x_slice[x_base + iy * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold a `(c_in*k*k, n*oh*ow)` gradient matrix back onto the input layout.
fn col2im<T: Scalar>(
    dcols: &Array2<T>,
    in_shape: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<T> {
    let (n, c_in, h, w) = in_shape;
    let mut dx = Array4::<T>::zeros((n, c_in, h, w));
    let dx_slice = dx.as_slice_mut().expect("contiguous");
    let dcols_slice = dcols.as_slice().expect("contiguous");
    let row_len = n * oh * ow;
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k) + ki) * k + kj;
                let src_row = &dcols_slice[row * row_len..(row + 1) * row_len];
                for ni in 0..n {
                    let dx_base = (ni * c_in + c) * h * w;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let src_base = (ni * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx_slice[dx_base + iy * w + ix as usize] += src_row[src_base + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Reference direct convolution for cross-checking the im2col path.
    fn conv_naive(x: &Array4<f64>, conv: &Conv2d<f64>) -> Array4<f64> {
        let (n, c_in, h, w) = x.dim();
        let k = conv.kernel();
        let (oh, ow) = conv.out_size(h, w);
        let c_out = conv.out_channels();
        let mut y = Array4::<f64>::zeros((n, c_out, oh, ow));
        for ni in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.b[co];
                        for ci in 0..c_in {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[[ni, ci, iy as usize, ix as usize]]
                                        * conv.w[[co, ci, ki, kj]];
                                }
                            }
                        }
                        y[[ni, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = seeded(11);
        for &(stride, pad, h) in &[(1usize, 1usize, 6usize), (2, 1, 8), (1, 0, 5)] {
            let conv = Conv2d::<f64>::new(3, 4, 3, stride, pad, 0.3, &mut rng);
            let x: Array4<f64> = normal(&mut rng, (2, 3, h, h));
            let (y, _) = conv.forward(&x);
            let y_ref = conv_naive(&x, &conv);
            let max = (&y - &y_ref).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max < 1e-12, "stride={stride} pad={pad}: dev {max}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, 0.4, &mut rng);
        let x: Array4<f64> = normal(&mut rng, (2, 2, 5, 5));
        // Loss = weighted sum of outputs so dL/dy is a fixed random tensor.
        let (y, cache) = conv.forward(&x);
        let dy: Array4<f64> = normal(&mut rng, y.dim());
        let loss = |y: &Array4<f64>| (y * &dy).sum();

        let mut dw = Array4::<f64>::zeros(conv.w.dim());
        let mut db = Array1::<f64>::zeros(conv.b.len());
        let dx = conv.backward(&cache, &dy, Some((&mut dw, &mut db)));

        let eps = 1e-6;
        // dx check on a few entries
        let mut x_pert = x.clone();
        for &(ni, ci, yy, xx) in &[(0usize, 0usize, 0usize, 0usize), (1, 1, 4, 4), (0, 1, 2, 3)] {
            let orig = x_pert[[ni, ci, yy, xx]];
            x_pert[[ni, ci, yy, xx]] = orig + eps;
            let lp = loss(&conv.forward(&x_pert).0);
            x_pert[[ni, ci, yy, xx]] = orig - eps;
            let lm = loss(&conv.forward(&x_pert).0);
            x_pert[[ni, ci, yy, xx]] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dx[[ni, ci, yy, xx]]).abs() < 1e-6, "dx mismatch");
        }
        // dw / db spot checks
        for &(co, ci, ki, kj) in &[(0usize, 0usize, 0usize, 0usize), (2, 1, 2, 2)] {
            let orig = conv.w[[co, ci, ki, kj]];
            conv.w[[co, ci, ki, kj]] = orig + eps;
            let lp = loss(&conv.forward(&x).0);
            conv.w[[co, ci, ki, kj]] = orig - eps;
            let lm = loss(&conv.forward(&x).0);
            conv.w[[co, ci, ki, kj]] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dw[[co, ci, ki, kj]]).abs() < 1e-6, "dw mismatch");
        }
        let orig = conv.b[1];
        conv.b[1] = orig + eps;
        let lp = loss(&conv.forward(&x).0);
        conv.b[1] = orig - eps;
        let lm = loss(&conv.forward(&x).0);
        conv.b[1] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        assert!((fd - db[1]).abs() < 1e-6, "db mismatch");
    }
}
