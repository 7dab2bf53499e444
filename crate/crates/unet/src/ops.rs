//! Per-sample kernels on `C x H x W` slices.

use crate::scalar::{gemm_strided, Mat, Scalar};

/// Upper bound on im2col buffer elements; larger images are processed in
/// bands of rows.
const COLUMN_BUDGET: usize = 1 << 22;

fn band_rows(patch: usize, h: usize, w: usize) -> usize {
    (COLUMN_BUDGET / (patch * w).max(1)).clamp(1, h)
}

fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize, rows: (usize, usize), cols: &mut [T]) {
    let p = (k / 2) as isize;
    let n = (rows.1 - rows.0) * w;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                for (oy, y) in (rows.0..rows.1).enumerate() {
                    let sy = y as isize + ky as isize - p;
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - p;
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *d = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, rows: (usize, usize), dx: &mut [T]) {
    let p = (k / 2) as isize;
    let n = (rows.1 - rows.0) * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                for (oy, y) in (rows.0..rows.1).enumerate() {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - p;
                    for (x, &v) in row[oy * w..(oy + 1) * w].iter().enumerate() {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] = dst[sx as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Shape of a same-padded square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// `out = W * x + b`, optionally followed by ReLU. `out` is `cout x h x w`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Scalar>(
    s: ConvShape,
    weights: &[T],
    bias: &[T],
    x: &[T],
    h: usize,
    w: usize,
    relu: bool,
    out: &mut [T],
) {
    let hw = h * w;
    let wm = Mat::new(weights, s.cout, s.patch());
    if s.k == 1 {
        gemm_strided(wm, Mat::new(x, s.cin, hw), T::zero(), out, hw);
    } else {
        let band = band_rows(s.patch(), h, w);
        let mut cols = vec![T::zero(); s.patch() * band * w];
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + band).min(h);
            let n = (r1 - r0) * w;
            im2col(x, s.cin, h, w, s.k, (r0, r1), &mut cols);
            gemm_strided(wm, Mat::new(&cols[..s.patch() * n], s.patch(), n), T::zero(), &mut out[r0 * w..], hw);
            r0 = r1;
        }
    }
    for (co, plane) in out.chunks_mut(hw).enumerate().take(s.cout) {
        let b = bias[co];
        for v in plane {
            *v = *v + b;
            if relu && *v < T::zero() {
                *v = T::zero();
            }
        }
    }
}

/// Accumulates weight and bias gradients and, when asked, writes the input
/// gradient. `dout` must already include the activation derivative.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    s: ConvShape,
    weights: &[T],
    x: &[T],
    dout: &[T],
    h: usize,
    w: usize,
    dweights: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    let hw = h * w;
    for (co, plane) in dout.chunks(hw).enumerate().take(s.cout) {
        dbias[co] = dbias[co] + plane.iter().copied().sum::<T>();
    }
    let wm = Mat::new(weights, s.cout, s.patch());
    if s.k == 1 {
        gemm_strided(Mat::new(dout, s.cout, hw), Mat::new(x, s.cin, hw).t(), T::one(), dweights, s.patch());
        if let Some(dx) = dx {
            gemm_strided(wm.t(), Mat::new(dout, s.cout, hw), T::zero(), dx, hw);
        }
        return;
    }
    let band = band_rows(s.patch(), h, w);
    let mut cols = vec![T::zero(); s.patch() * band * w];
    let mut dcols = dx.as_ref().map(|_| vec![T::zero(); s.patch() * band * w]);
    let mut dx = dx;
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + band).min(h);
        let n = (r1 - r0) * w;
        im2col(x, s.cin, h, w, s.k, (r0, r1), &mut cols);
        let dband = Mat::strided(&dout[r0 * w..], s.cout, n, hw);
        gemm_strided(dband, Mat::new(&cols[..s.patch() * n], s.patch(), n).t(), T::one(), dweights, s.patch());
        if let (Some(dx), Some(dcols)) = (dx.as_deref_mut(), dcols.as_mut()) {
            gemm_strided(wm.t(), dband, T::zero(), &mut dcols[..s.patch() * n], n);
            col2im_add(&dcols[..s.patch() * n], s.cin, h, w, s.k, (r0, r1), dx);
        }
        r0 = r1;
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling; `arg` records which of the four inputs won.
pub fn maxpool_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T], arg: &mut [u8]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let plane = &x[ci * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = 0u8;
                let mut val = plane[2 * y * w + 2 * xx];
                for (i, (dy, dx)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = plane[(2 * y + dy) * w + 2 * xx + dx];
                    // NaN propagates so divergence is not masked.
                    if v > val || v.is_nan() {
                        val = v;
                        best = i as u8 + 1;
                    }
                }
                let o = (ci * oh + y) * ow + xx;
                out[o] = val;
                arg[o] = best;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(dout: &[T], arg: &[u8], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    dx.fill(T::zero());
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let o = (ci * oh + y) * ow + xx;
                let (dy, ddx) = [(0, 0), (0, 1), (1, 0), (1, 1)][arg[o] as usize];
                dx[ci * h * w + (2 * y + dy) * w + 2 * xx + ddx] = dout[o];
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling of `c x h x w` into `c x 2h x 2w`.
pub fn upsample_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let ow = 2 * w;
    for ci in 0..c {
        for y in 0..2 * h {
            let src = &x[(ci * h + y / 2) * w..][..w];
            let dst = &mut out[(ci * 2 * h + y) * ow..][..ow];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
}

pub fn upsample_backward<T: Scalar>(dout: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let ow = 2 * w;
    dx.fill(T::zero());
    for ci in 0..c {
        for y in 0..2 * h {
            let src = &dout[(ci * 2 * h + y) * ow..][..ow];
            let dst = &mut dx[(ci * h + y / 2) * w..][..w];
            for (x, &v) in src.iter().enumerate() {
                dst[x / 2] = dst[x / 2] + v;
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution. Weights are `(cout * 4) x cin`,
/// row `co * 4 + 2 * a + b` feeding output offset `(a, b)`.
#[allow(clippy::too_many_arguments)]
pub fn tconv_forward<T: Scalar>(
    cin: usize,
    cout: usize,
    weights: &[T],
    bias: &[T],
    x: &[T],
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let hw = h * w;
    let mut tmp = vec![T::zero(); cout * 4 * hw];
    gemm_strided(Mat::new(weights, cout * 4, cin), Mat::new(x, cin, hw), T::zero(), &mut tmp, hw);
    let ow = 2 * w;
    for co in 0..cout {
        for ab in 0..4 {
            let (a, b) = (ab / 2, ab % 2);
            let src = &tmp[(co * 4 + ab) * hw..][..hw];
            for y in 0..h {
                for xx in 0..w {
                    let v = src[y * w + xx] + bias[co];
                    out[(co * 2 * h + 2 * y + a) * ow + 2 * xx + b] = if v > T::zero() { v } else { T::zero() };
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tconv_backward<T: Scalar>(
    cin: usize,
    cout: usize,
    weights: &[T],
    x: &[T],
    dout: &[T],
    h: usize,
    w: usize,
    dweights: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let hw = h * w;
    let ow = 2 * w;
    let mut dtmp = vec![T::zero(); cout * 4 * hw];
    for co in 0..cout {
        let mut acc = T::zero();
        for ab in 0..4 {
            let (a, b) = (ab / 2, ab % 2);
            let dst = &mut dtmp[(co * 4 + ab) * hw..][..hw];
            for y in 0..h {
                for xx in 0..w {
                    let g = dout[(co * 2 * h + 2 * y + a) * ow + 2 * xx + b];
                    dst[y * w + xx] = g;
                    acc = acc + g;
                }
            }
        }
        dbias[co] = dbias[co] + acc;
    }
    gemm_strided(Mat::new(&dtmp, cout * 4, hw), Mat::new(x, cin, hw).t(), T::one(), dweights, cin);
    gemm_strided(Mat::new(weights, cout * 4, cin).t(), Mat::new(&dtmp, cout * 4, hw), T::zero(), dx, hw);
}
