//! Raw forward/backward kernels over flat row-major buffers.
//!
//! Convolutions are lowered to GEMM through an im2col buffer per sample; every
//! reduction runs in a fixed order so results are bit-reproducible.

use super::scalar::{matmul, Layout, Scalar};

/// Spatial geometry of a stride-1 square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Valid output-column range `[lo, hi)` for kernel offset `k` along an axis of length `len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        // input index = out + k - padding must lie in [0, len)
        let lo = self.padding.saturating_sub(k);
        let hi = (len + self.padding).saturating_sub(k).min(out_len);
        (lo, hi.max(lo))
    }
}

/// Unfold one `[C, H, W]` image into a `[C*k*k, OH*OW]` patch matrix.
pub fn im2col<T: Scalar>(src: &[T], g: &ConvGeom, col: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, p) = (g.height, g.width, g.kernel, g.padding);
    debug_assert_eq!(col.len(), g.col_rows() * g.col_cols());
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (ylo, yhi) = g.valid_range(ky, h, oh);
            for kx in 0..k {
                let (xlo, xhi) = g.valid_range(kx, w, ow);
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if oy < ylo || oy >= yhi {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let iy = oy + ky - p;
                    line[..xlo].iter_mut().for_each(|v| *v = T::zero());
                    line[xhi..].iter_mut().for_each(|v| *v = T::zero());
                    if xhi > xlo {
                        let ix0 = xlo + kx - p;
                        line[xlo..xhi]
                            .copy_from_slice(&plane[iy * w + ix0..iy * w + ix0 + (xhi - xlo)]);
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into a `[C, H, W]` image.
pub fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, dst: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, k, p) = (g.height, g.width, g.kernel, g.padding);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (ylo, yhi) = g.valid_range(ky, h, oh);
            for kx in 0..k {
                let (xlo, xhi) = g.valid_range(kx, w, ow);
                let srcrow = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in ylo..yhi {
                    let iy = oy + ky - p;
                    let ix0 = xlo + kx - p;
                    let out = &mut plane[iy * w + ix0..iy * w + ix0 + (xhi - xlo)];
                    let inp = &srcrow[oy * ow + xlo..oy * ow + xhi];
                    for (o, &v) in out.iter_mut().zip(inp) {
                        *o += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation of `[N, C, H, W]` with `[F, C, k, k]`, plus bias: returns `[N, F, OH, OW]`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    filters: usize,
) -> Vec<T> {
    let (kk, ohw) = (g.col_rows(), g.col_cols());
    let in_plane = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * filters * ohw];
    let mut col = vec![T::zero(); kk * ohw];
    for s in 0..n {
        im2col(&x[s * in_plane..(s + 1) * in_plane], g, &mut col);
        let o = &mut out[s * filters * ohw..(s + 1) * filters * ohw];
        for (f, chunk) in o.chunks_mut(ohw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[f]);
        }
        matmul(filters, kk, ohw, weight, Layout::Normal, &col, Layout::Normal, o, true);
    }
    out
}

/// Gradients of [`conv2d_forward`]. Each optional output is computed only when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    filters: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (kk, ohw) = (g.col_rows(), g.col_cols());
    let in_plane = g.channels * g.height * g.width;
    let mut col = vec![T::zero(); kk * ohw];
    for s in 0..n {
        let d = &dout[s * filters * ohw..(s + 1) * filters * ohw];
        if let Some(db) = db.as_deref_mut() {
            for (f, chunk) in d.chunks(ohw).enumerate() {
                db[f] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[s * in_plane..(s + 1) * in_plane], g, &mut col);
            matmul(filters, ohw, kk, d, Layout::Normal, &col, Layout::Transposed, dw, true);
        }
        if let Some(dx) = dx.as_deref_mut() {
            matmul(kk, filters, ohw, weight, Layout::Transposed, d, Layout::Normal, &mut col, false);
            col2im_add(&col, g, &mut dx[s * in_plane..(s + 1) * in_plane]);
        }
    }
}

/// Transposed convolution, the adjoint of [`conv2d_forward`] with the same weight.
///
/// `y` is `[N, F, OH, OW]`, `weight` is `[F, C, k, k]`; the result is `[N, C, H, W]` where
/// `g` describes the `[C, H, W]` side.
pub fn conv_transpose2d_forward<T: Scalar>(
    y: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    filters: usize,
) -> Vec<T> {
    let (kk, ohw) = (g.col_rows(), g.col_cols());
    let out_plane = g.channels * g.height * g.width;
    let hw = g.height * g.width;
    let mut out = vec![T::zero(); n * out_plane];
    let mut col = vec![T::zero(); kk * ohw];
    for s in 0..n {
        let ys = &y[s * filters * ohw..(s + 1) * filters * ohw];
        matmul(kk, filters, ohw, weight, Layout::Transposed, ys, Layout::Normal, &mut col, false);
        let o = &mut out[s * out_plane..(s + 1) * out_plane];
        for (c, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[c]);
        }
        col2im_add(&col, g, o);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    y: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    filters: usize,
    dout: &[T],
    mut dy: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let (kk, ohw) = (g.col_rows(), g.col_cols());
    let out_plane = g.channels * g.height * g.width;
    let hw = g.height * g.width;
    let mut col = vec![T::zero(); kk * ohw];
    for s in 0..n {
        let d = &dout[s * out_plane..(s + 1) * out_plane];
        if let Some(db) = db.as_deref_mut() {
            for (c, chunk) in d.chunks(hw).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if dy.is_none() && dw.is_none() {
            continue;
        }
        im2col(d, g, &mut col);
        if let Some(dy) = dy.as_deref_mut() {
            let dys = &mut dy[s * filters * ohw..(s + 1) * filters * ohw];
            matmul(filters, kk, ohw, weight, Layout::Normal, &col, Layout::Normal, dys, true);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let ys = &y[s * filters * ohw..(s + 1) * filters * ohw];
            matmul(filters, ohw, kk, ys, Layout::Normal, &col, Layout::Transposed, dw, true);
        }
    }
}

/// 2x2 stride-2 max pooling with floor semantics.
///
/// Returns the pooled values and, per output, the flat index (within its input plane) of the
/// winning element. Ties go to the first element in row-major window order.
pub fn maxpool2x2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let r0 = 2 * oy * w;
            let r1 = r0 + w;
            for ox in 0..ow {
                let c = 2 * ox;
                let mut best = r0 + c;
                for cand in [r0 + c + 1, r1 + c, r1 + c + 1] {
                    if plane[cand] > plane[best] {
                        best = cand;
                    }
                }
                out.push(plane[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2x2_backward<T: Scalar>(
    dout: &[T],
    argmax: &[u32],
    planes: usize,
    h: usize,
    w: usize,
    dx: &mut [T],
) {
    let per_out = (h / 2) * (w / 2);
    for p in 0..planes {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..per_out {
            let o = p * per_out + i;
            plane[argmax[o] as usize] += dout[o];
        }
    }
}

/// Nearest-neighbour source index for each target position: `floor(i * src / dst)`.
pub fn nearest_index_map(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|i| i * src / dst).collect()
}

pub fn interpolate_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    rows: &[usize],
    cols: &[usize],
) -> Vec<T> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for &r in rows {
            let line = &plane[r * w..(r + 1) * w];
            out.extend(cols.iter().map(|&c| line[c]));
        }
    }
    out
}

pub fn interpolate_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    (h, w): (usize, usize),
    rows: &[usize],
    cols: &[usize],
    dx: &mut [T],
) {
    let (oh, ow) = (rows.len(), cols.len());
    for p in 0..planes {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let d = &dout[p * oh * ow..(p + 1) * oh * ow];
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                plane[r * w + c] += d[i * ow + j];
            }
        }
    }
}

/// Per-channel statistics of an `[N, C, H*W]` buffer in a fixed summation order.
pub fn channel_mean_var<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let m = T::lit((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = 0.0f64;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            acc += x[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = acc / (n * hw) as f64;
        let mut sq = 0.0f64;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            sq += x[base..base + hw]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = T::lit(mu);
        var[ch] = T::lit(sq) / m;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &[f64], g: &ConvGeom, w: &[f64], f: usize) -> Vec<f64> {
        let (oh, ow, k, p) = (g.out_height(), g.out_width(), g.kernel, g.padding as isize);
        let mut out = vec![0.0; f * oh * ow];
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..g.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize + ky as isize - p;
                                let ix = ox as isize + kx as isize - p;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                acc += x[(c * g.height + iy as usize) * g.width + ix as usize]
                                    * w[((fi * g.channels + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(fi * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn gemm_conv_matches_nested_loops() {
        let g = ConvGeom { channels: 2, height: 5, width: 4, kernel: 3, padding: 1 };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..3 * 18).map(|i| ((i * 5 % 7) as f64) * 0.1 - 0.3).collect();
        let got = conv2d_forward(&x, 1, &g, &w, &[0.0; 3], 3);
        let want = direct_conv(&x, &g, &w, 3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { channels: 2, height: 4, width: 3, kernel: 3, padding: 1 };
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.3).sin()).collect();
        let c: Vec<f64> = (0..18 * 12).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; 18 * 12];
        im2col(&x, &g, &mut col);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 24];
        col2im_add(&c, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_floor_and_tie_break() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let (o, i) = maxpool2x2_forward(&x, 1, 2, 2);
        assert_eq!(o, vec![4.0]);
        assert_eq!(i, vec![3]);
        let c = [5.0f64; 9];
        let (o, i) = maxpool2x2_forward(&c, 1, 3, 3);
        assert_eq!(o, vec![5.0]);
        assert_eq!(i, vec![0]);
    }

    #[test]
    fn index_map_for_seven_to_fifteen() {
        let m = nearest_index_map(7, 15);
        let want: Vec<usize> = (0..15).map(|i| i * 7 / 15).collect();
        assert_eq!(m, want);
        assert_eq!(m[14], 6);
        assert_eq!(nearest_index_map(2, 4), vec![0, 0, 1, 1]);
    }
}
