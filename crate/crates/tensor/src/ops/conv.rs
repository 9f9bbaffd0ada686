use crate::gemm::{sgemm, MatRef};
use crate::{Graph, Tensor, Var};

/// Upper bound on im2col scratch size, in floats.
const COLS_BUDGET: usize = 1 << 21;

/// Sliding-window geometry between an image `[c, h, w]` and an output grid
/// `[oh, ow]`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1 && k >= 1);
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.ckk() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kx` at stride 1.
    fn unit_stride_span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow).max(lo);
        (lo, hi)
    }
}

/// Unfolds output rows `[row0, row0 + nrows)` into `cols` laid out as
/// `[c*k*k, nrows*ow]`.
fn im2col(img: &[f32], g: &Geom, row0: usize, nrows: usize, cols: &mut [f32]) {
    let ncols = nrows * g.ow;
    let plane = g.h * g.w;
    for ci in 0..g.c {
        let src_plane = &img[ci * plane..(ci + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * ncols..(r + 1) * ncols];
                for oy in 0..nrows {
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = ((row0 + oy) * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &src_plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kx);
                        drow[..lo].fill(0.0);
                        drow[hi..].fill(0.0);
                        let off = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `img`, accumulating.
fn col2im_add(cols: &[f32], g: &Geom, row0: usize, nrows: usize, img: &mut [f32]) {
    let ncols = nrows * g.ow;
    let plane = g.h * g.w;
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let src = &cols[r * ncols..(r + 1) * ncols];
                for oy in 0..nrows {
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    let iy = ((row0 + oy) * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = ci * plane + iy as usize * g.w;
                    let dst = &mut img[base..base + g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kx);
                        let off = lo + kx - g.pad;
                        for (d, s) in dst[off..off + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += *s;
                        }
                    } else {
                        for (ox, s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &Geom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

fn add_bias(out: &mut [f32], bias: &Tensor, plane: usize) {
    for (ch, b) in out.chunks_mut(plane).zip(bias.data()) {
        for v in ch {
            *v += *b;
        }
    }
}

fn bias_grad(gy: &Tensor) -> Tensor {
    let (c, h, w) = gy.chw();
    let plane = h * w;
    let data = gy
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect();
    Tensor::new(&[c], data)
}

/// Cross-correlation of `x: [c, h, w]` with `weight: [o, c, k, k]`, zero padded.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (c, h, w) = x.chw();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "conv weight must be [o, c, k, k]");
    assert_eq!(ws[1], c, "conv input channels {c} vs weight {ws:?}");
    assert_eq!(ws[2], ws[3], "square kernels only");
    let o = ws[0];
    let g = Geom::new(c, h, w, ws[2], stride, pad);
    let n = g.oh * g.ow;
    let mut out = vec![0.0f32; o * n];
    let wmat = MatRef::row_major(weight.data(), o, g.ckk());
    if is_pointwise(&g) {
        sgemm(1.0, wmat, MatRef::row_major(x.data(), c, n), 0.0, &mut out, n);
    } else {
        let rows = g.rows_per_chunk();
        let mut cols = vec![0.0f32; g.ckk() * rows * g.ow];
        let mut row0 = 0;
        while row0 < g.oh {
            let nrows = rows.min(g.oh - row0);
            let ncols = nrows * g.ow;
            let buf = &mut cols[..g.ckk() * ncols];
            im2col(x.data(), &g, row0, nrows, buf);
            sgemm(
                1.0,
                wmat,
                MatRef::row_major(buf, g.ckk(), ncols),
                0.0,
                &mut out[row0 * g.ow..],
                n,
            );
            row0 += nrows;
        }
    }
    if let Some(b) = bias {
        assert_eq!(b.shape(), [o], "conv bias shape");
        add_bias(&mut out, b, n);
    }
    Tensor::new(&[o, g.oh, g.ow], out)
}

/// Returns `(dx, dweight)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor) {
    let (c, h, w) = x.chw();
    let ws = weight.shape();
    let o = ws[0];
    let g = Geom::new(c, h, w, ws[2], stride, pad);
    let n = g.oh * g.ow;
    assert_eq!(gy.shape(), [o, g.oh, g.ow], "conv grad shape");
    let ckk = g.ckk();
    let mut dw = vec![0.0f32; o * ckk];
    let mut dx = need_dx.then(|| vec![0.0f32; c * h * w]);

    if is_pointwise(&g) {
        // dW = gY · Xᵀ, dX = Wᵀ · gY
        sgemm(
            1.0,
            MatRef::row_major(gy.data(), o, n),
            MatRef::transposed(x.data(), n, c),
            0.0,
            &mut dw,
            c,
        );
        if let Some(dx) = dx.as_mut() {
            sgemm(
                1.0,
                MatRef::transposed(weight.data(), c, o),
                MatRef::row_major(gy.data(), o, n),
                0.0,
                dx,
                n,
            );
        }
    } else {
        let rows = g.rows_per_chunk();
        let mut cols = vec![0.0f32; ckk * rows * g.ow];
        let mut row0 = 0;
        while row0 < g.oh {
            let nrows = rows.min(g.oh - row0);
            let ncols = nrows * g.ow;
            let gblock = MatRef::col_block(gy.data(), o, n, row0 * g.ow, ncols);
            let buf = &mut cols[..ckk * ncols];
            im2col(x.data(), &g, row0, nrows, buf);
            sgemm(1.0, gblock, MatRef::transposed(buf, ncols, ckk), 1.0, &mut dw, ckk);
            if let Some(dx) = dx.as_mut() {
                sgemm(1.0, MatRef::transposed(weight.data(), ckk, o), gblock, 0.0, buf, ncols);
                col2im_add(buf, &g, row0, nrows, dx);
            }
            row0 += nrows;
        }
    }
    (dx.map(|d| Tensor::new(&[c, h, w], d)), Tensor::new(ws, dw))
}

/// Output size of a transposed convolution along one axis.
pub fn conv_transpose_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    ((len - 1) * stride + k)
        .checked_sub(2 * pad)
        .expect("transposed conv padding exceeds kernel extent")
}

/// Transposed convolution of `x: [ci, h, w]` with `weight: [ci, co, k, k]`:
/// the adjoint of a stride-`stride` convolution.
pub fn conv_transpose2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (ci, h, w) = x.chw();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "transposed conv weight must be [ci, co, k, k]");
    assert_eq!(ws[0], ci, "transposed conv input channels");
    assert_eq!(ws[2], ws[3], "square kernels only");
    let (co, k) = (ws[1], ws[2]);
    let (oh, ow) = (
        conv_transpose_out(h, k, stride, pad),
        conv_transpose_out(w, k, stride, pad),
    );
    let g = Geom::new(co, oh, ow, k, stride, pad);
    assert_eq!((g.oh, g.ow), (h, w), "transposed conv geometry is not invertible");
    let cokk = g.ckk();
    let n = h * w;
    let mut out = vec![0.0f32; co * oh * ow];
    let rows = g.rows_per_chunk();
    let mut cols = vec![0.0f32; cokk * rows * w];
    let wt = MatRef::transposed(weight.data(), cokk, ci);
    let mut row0 = 0;
    while row0 < h {
        let nrows = rows.min(h - row0);
        let ncols = nrows * w;
        let buf = &mut cols[..cokk * ncols];
        sgemm(
            1.0,
            wt,
            MatRef::col_block(x.data(), ci, n, row0 * w, ncols),
            0.0,
            buf,
            ncols,
        );
        col2im_add(buf, &g, row0, nrows, &mut out);
        row0 += nrows;
    }
    if let Some(b) = bias {
        assert_eq!(b.shape(), [co], "transposed conv bias shape");
        add_bias(&mut out, b, oh * ow);
    }
    Tensor::new(&[co, oh, ow], out)
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor>, Tensor) {
    let (ci, h, w) = x.chw();
    let ws = weight.shape();
    let (co, k) = (ws[1], ws[2]);
    let (_, oh, ow) = gy.chw();
    let g = Geom::new(co, oh, ow, k, stride, pad);
    let cokk = g.ckk();
    let n = h * w;
    let mut dw = vec![0.0f32; ci * cokk];
    let mut dx = need_dx.then(|| vec![0.0f32; ci * n]);
    let rows = g.rows_per_chunk();
    let mut cols = vec![0.0f32; cokk * rows * w];
    let mut row0 = 0;
    while row0 < h {
        let nrows = rows.min(h - row0);
        let ncols = nrows * w;
        let buf = &mut cols[..cokk * ncols];
        im2col(gy.data(), &g, row0, nrows, buf);
        let dcols = MatRef::row_major(buf, cokk, ncols);
        sgemm(
            1.0,
            MatRef::col_block(x.data(), ci, n, row0 * w, ncols),
            MatRef::transposed(buf, ncols, cokk),
            1.0,
            &mut dw,
            cokk,
        );
        if let Some(dx) = dx.as_mut() {
            sgemm(
                1.0,
                MatRef::row_major(weight.data(), ci, cokk),
                dcols,
                0.0,
                &mut dx[row0 * w..],
                n,
            );
        }
        row0 += nrows;
    }
    (dx.map(|d| Tensor::new(&[ci, h, w], d)), Tensor::new(ws, dw))
}

impl Graph {
    /// 2-D convolution, `weight: [o, c, k, k]`, optional `bias: [o]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(value, &parents, || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let need_dx = g.requires_grad(x);
                let (dx, dw) = conv2d_backward(g.value(x), g.value(weight), gy, stride, pad, need_dx);
                let mut out = vec![(weight, dw)];
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(b) = bias {
                    out.push((b, bias_grad(gy)));
                }
                out
            })
        })
    }

    /// Transposed convolution, `weight: [ci, co, k, k]`, optional `bias: [co]`.
    pub fn conv_transpose2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = conv_transpose2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(value, &parents, || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let need_dx = g.requires_grad(x);
                let (dx, dw) = conv_transpose2d_backward(g.value(x), g.value(weight), gy, stride, pad, need_dx);
                let mut out = vec![(weight, dw)];
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(b) = bias {
                    out.push((b, bias_grad(gy)));
                }
                out
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (c, h, wd) = x.chw();
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[(ic * h + iy as usize) * wd + ix as usize] as f64
                                    * w.data()[((oc * c + ic) * k + ky) * k + kx] as f64;
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    /// Direct scatter definition of a transposed convolution.
    fn naive_conv_t(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (ci, h, wd) = x.chw();
        let (co, k) = (w.shape()[1], w.shape()[2]);
        let oh = conv_transpose_out(h, k, stride, pad);
        let ow = conv_transpose_out(wd, k, stride, pad);
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for ic in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x.data()[(ic * h + iy) * wd + ix];
                    for oc in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out.data_mut()[(oc * oh + y as usize) * ow + xx as usize] +=
                                    xv * w.data()[((ic * co + oc) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn seq(shape: &[usize], seed: f32) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i as f32 + seed) * 0.731).sin()).collect())
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_matches_naive_across_geometries() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (4, 2, 1), (3, 1, 0)] {
            let x = seq(&[3, 9, 7], 0.5);
            let w = seq(&[4, 3, k, k], 1.5);
            assert_close(
                &conv2d_forward(&x, &w, None, stride, pad),
                &naive_conv(&x, &w, stride, pad),
                1e-5,
            );
        }
    }

    #[test]
    fn conv_transpose_matches_naive() {
        for &(k, stride, pad) in &[(4, 2, 1), (3, 1, 1), (2, 2, 0)] {
            let x = seq(&[3, 5, 4], 0.2);
            let w = seq(&[3, 2, k, k], 2.0);
            assert_close(
                &conv_transpose2d_forward(&x, &w, None, stride, pad),
                &naive_conv_t(&x, &w, stride, pad),
                1e-5,
            );
        }
    }

    #[test]
    fn transpose_doubles_spatial_size() {
        let x = seq(&[2, 8, 10], 0.0);
        let w = seq(&[2, 3, 4, 4], 0.0);
        assert_eq!(conv_transpose2d_forward(&x, &w, None, 2, 1).shape(), [3, 16, 20]);
    }

    /// <conv(x), y> == <x, conv_transpose(y)> when both share a weight.
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let x = seq(&[3, 8, 6], 0.3);
        let w = seq(&[5, 3, 4, 4], 0.9);
        let y = conv2d_forward(&x, &w, None, 2, 1);
        let probe = seq(y.shape(), 4.0);
        let lhs: f64 = y
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        // weight [o, c, k, k] reinterpreted as transposed-conv weight [ci=o, co=c, k, k]
        let back = conv_transpose2d_forward(&probe, &w, None, 2, 1);
        let rhs: f64 = x
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn chunked_path_matches_single_chunk() {
        // Large enough that the im2col budget forces several chunks.
        let x = seq(&[16, 160, 130], 0.1);
        let w = seq(&[2, 16, 3, 3], 0.7);
        let g = Geom::new(16, 160, 130, 3, 1, 1);
        assert!(g.rows_per_chunk() < g.oh);
        let fast = conv2d_forward(&x, &w, None, 1, 1);
        let slow = naive_conv(&x, &w, 1, 1);
        assert_close(&fast, &slow, 1e-4);
    }
}
