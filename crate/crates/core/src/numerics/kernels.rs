//! Raw slice kernels behind the graph ops. Feature maps are stored as
//! `(h·w) × c` token matrices, i.e. HWC row-major.

use super::tensor::Scalar;

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Softmax over `d` contiguous elements, max-subtracted.
pub(crate) fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Same-padded im2col: output is `(h·w) × (kh·kw·c)` with column order
/// `(ky, kx, ci)`.
pub(crate) fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, kh: usize, kw: usize) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = kh * kw * c;
    let mut out = vec![T::zero(); h * w * cols];
    for y in 0..h {
        for xx in 0..w {
            let dst_row = &mut out[(y * w + xx) * cols..(y * w + xx + 1) * cols];
            for ky in 0..kh {
                let sy = y as isize + ky as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pw as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = (ky * kw + kx) * c;
                    dst_row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub(crate) fn col2im_add<T: Scalar>(
    col: &[T],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    dx: &mut [T],
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let cols = kh * kw * c;
    for y in 0..h {
        for xx in 0..w {
            let src_row = &col[(y * w + xx) * cols..(y * w + xx + 1) * cols];
            for ky in 0..kh {
                let sy = y as isize + ky as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pw as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = (ky * kw + kx) * c;
                    for ci in 0..c {
                        dx[dst + ci] += src_row[src + ci];
                    }
                }
            }
        }
    }
}

/// Depth-wise same-padded convolution; `k` is `kh × kw × c`.
pub(crate) fn depthwise_forward<T: Scalar>(
    x: &[T],
    k: &[T],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[(y * w + xx) * c..(y * w + xx + 1) * c];
            for ky in 0..kh {
                let sy = y as isize + ky as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pw as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &x[(sy as usize * w + sx as usize) * c..][..c];
                    let kr = &k[(ky * kw + kx) * c..][..c];
                    for ((o, &s), &kv) in o.iter_mut().zip(src).zip(kr) {
                        *o += s * kv;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dy: &[T],
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
) {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut dx = dx;
    let mut dk = dk;
    for y in 0..h {
        for xx in 0..w {
            let g = &dy[(y * w + xx) * c..][..c];
            for ky in 0..kh {
                let sy = y as isize + ky as isize - ph as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let sx = xx as isize + kx as isize - pw as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let base = (sy as usize * w + sx as usize) * c;
                    let kbase = (ky * kw + kx) * c;
                    if let Some(dx) = dx.as_deref_mut() {
                        let kr = &k[kbase..kbase + c];
                        for ((d, &gv), &kv) in dx[base..base + c].iter_mut().zip(g).zip(kr) {
                            *d += gv * kv;
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        let src = &x[base..base + c];
                        for ((d, &gv), &s) in dk[kbase..kbase + c].iter_mut().zip(g).zip(src) {
                            *d += gv * s;
                        }
                    }
                }
            }
        }
    }
}

/// `(h·w) × c` → `(h/f · w/f) × (f·f·c)`, channel order `(dy, dx, c)`.
pub(crate) fn space_to_depth<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let oc = f * f * c;
    let mut out = vec![T::zero(); oh * ow * oc];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * oc..][..oc];
            for dy in 0..f {
                for dx in 0..f {
                    let src = ((oy * f + dy) * w + ox * f + dx) * c;
                    dst[(dy * f + dx) * c..][..c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    out
}

/// Inverse of [`space_to_depth`]; `h`, `w` are the coarse extents.
pub(crate) fn depth_to_space<T: Scalar>(x: &[T], h: usize, w: usize, c_out: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let ic = f * f * c_out;
    let mut out = vec![T::zero(); oh * ow * c_out];
    for y in 0..h {
        for xx in 0..w {
            let src = &x[(y * w + xx) * ic..][..ic];
            for dy in 0..f {
                for dx in 0..f {
                    let dst = ((y * f + dy) * ow + xx * f + dx) * c_out;
                    out[dst..dst + c_out].copy_from_slice(&src[(dy * f + dx) * c_out..][..c_out]);
                }
            }
        }
    }
    out
}

/// Source taps `(i0, i1, t)` of each output position when a length-`n` axis
/// is upsampled by `f` with half-pixel centres and clamped edges.
fn bilinear_taps(n: usize, f: usize) -> Vec<(usize, usize, f64)> {
    (0..n * f)
        .map(|o| {
            let s = ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear `f×` upsampling of an `h × w × c` map.
pub(crate) fn upsample_bilinear<T: Scalar>(x: &[T], h: usize, w: usize, c: usize, f: usize) -> Vec<T> {
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let ow = w * f;
    let mut out = vec![T::zero(); h * f * ow * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let taps = [
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ];
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for (src, wt) in taps {
                let wt = T::of(wt);
                for (d, &s) in dst.iter_mut().zip(&x[src * c..src * c + c]) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`]: scatters an upsampled gradient back
/// onto the `h × w × c` source map.
pub(crate) fn upsample_bilinear_adjoint<T: Scalar>(g: &[T], h: usize, w: usize, c: usize, f: usize) -> Vec<T> {
    let (ty, tx) = (bilinear_taps(h, f), bilinear_taps(w, f));
    let ow = w * f;
    let mut out = vec![T::zero(); h * w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let taps = [
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ];
            let src = &g[(oy * ow + ox) * c..][..c];
            for (dst, wt) in taps {
                let wt = T::of(wt);
                for (d, &s) in out[dst * c..dst * c + c].iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    out
}

/// Copies head `h` (columns `h·dh .. (h+1)·dh`) into a contiguous buffer.
pub(crate) fn head_slice<T: Scalar>(x: &[T], rows: usize, d: usize, head: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&x[r * d + head * dh..][..dh]);
    }
    out
}

pub(crate) fn head_scatter_add<T: Scalar>(src: &[T], rows: usize, d: usize, head: usize, dh: usize, dst: &mut [T]) {
    for r in 0..rows {
        for (o, &s) in dst[r * d + head * dh..][..dh].iter_mut().zip(&src[r * dh..][..dh]) {
            *o += s;
        }
    }
}

pub(crate) fn head_write<T: Scalar>(src: &[T], rows: usize, d: usize, head: usize, dh: usize, dst: &mut [T]) {
    for r in 0..rows {
        dst[r * d + head * dh..][..dh].copy_from_slice(&src[r * dh..][..dh]);
    }
}
