//! Layer primitives with explicit forward and reverse passes.
//!
//! Every function works on NCHW [`Tensor`]s. Reverse passes take the
//! upstream gradient and whatever the forward pass cached, and accumulate
//! parameter gradients into caller-owned buffers.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, gemm_ct, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    Reflect,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Group,
    Batch,
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Tanh,
}

pub const NORM_EPS: f64 = 1e-5;

/// Source index for a tap at `i` (may be -1 or n), or `None` for a zero tap.
#[inline]
fn tap(i: isize, n: usize, mode: PaddingMode) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PaddingMode::Zeros => None,
        PaddingMode::Reflect => {
            if n == 1 {
                Some(0)
            } else if i < 0 {
                Some((-i) as usize)
            } else {
                Some((2 * (n - 1) - i) as usize)
            }
        }
    }
}

/// Unfold one sample (c×h×w) into a (c·9)×(h·w) patch matrix.
fn im2col<F: Real>(x: &[F], c: usize, h: usize, w: usize, mode: PaddingMode, cols: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let Some(sy) = tap(y as isize + ky as isize - 1, h, mode) else {
                        dst.fill(F::ZERO);
                        continue;
                    };
                    let srow = &src[sy * w..(sy + 1) * w];
                    match kx {
                        1 => dst.copy_from_slice(srow),
                        0 => {
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                            dst[0] = tap(-1, w, mode).map_or(F::ZERO, |s| srow[s]);
                        }
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = tap(w as isize, w, mode).map_or(F::ZERO, |s| srow[s]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the sample.
fn col2im<F: Real>(cols: &[F], c: usize, h: usize, w: usize, mode: PaddingMode, dx: &mut [F]) {
    let hw = h * w;
    for ci in 0..c {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let g = &row[y * w..(y + 1) * w];
                    let Some(sy) = tap(y as isize + ky as isize - 1, h, mode) else {
                        continue;
                    };
                    let drow = &mut dst[sy * w..(sy + 1) * w];
                    match kx {
                        1 => drow.iter_mut().zip(g).for_each(|(d, &v)| *d += v),
                        0 => {
                            drow[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, &v)| *d += v);
                            if let Some(s) = tap(-1, w, mode) {
                                drow[s] += g[0];
                            }
                        }
                        _ => {
                            drow[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, &v)| *d += v);
                            if let Some(s) = tap(w as isize, w, mode) {
                                drow[s] += g[w - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, padding 1, no bias. `weight` is cout×cin×3×3.
pub fn conv3x3_forward<F: Real>(x: &Tensor<F>, weight: &[F], cout: usize, mode: PaddingMode) -> Tensor<F> {
    let (cin, h, w) = (x.c, x.h, x.w);
    assert_eq!(weight.len(), cout * cin * 9, "conv3x3 weight shape");
    let hw = h * w;
    let mut y = Tensor::zeros(x.n, cout, h, w);
    let mut cols = vec![F::ZERO; cin * 9 * hw];
    for s in 0..x.n {
        im2col(x.sample(s), cin, h, w, mode, &mut cols);
        gemm(cout, cin * 9, hw, weight, false, &cols, false, y.sample_mut(s), F::ZERO);
    }
    y
}

/// Reverse pass of [`conv3x3_forward`]. Accumulates into `dweight`, returns dx.
pub fn conv3x3_backward<F: Real>(
    x: &Tensor<F>,
    weight: &[F],
    dy: &Tensor<F>,
    mode: PaddingMode,
    dweight: &mut [F],
) -> Tensor<F> {
    let (cin, h, w) = (x.c, x.h, x.w);
    let cout = dy.c;
    let hw = h * w;
    let k = cin * 9;
    let mut dx = Tensor::zeros_like(x);
    let mut cols = vec![F::ZERO; k * hw];
    let mut dcols = vec![F::ZERO; k * hw];
    for s in 0..x.n {
        im2col(x.sample(s), cin, h, w, mode, &mut cols);
        let g = dy.sample(s);
        gemm_ct(k, hw, cout, &cols, false, g, true, dweight, F::ONE);
        gemm(k, cout, hw, weight, true, g, false, &mut dcols, F::ZERO);
        col2im(&dcols, cin, h, w, mode, dx.sample_mut(s));
    }
    dx
}

/// 1×1 convolution with bias. `weight` is cout×cin.
pub fn conv1x1_forward<F: Real>(x: &Tensor<F>, weight: &[F], bias: &[F]) -> Tensor<F> {
    let cout = bias.len();
    assert_eq!(weight.len(), cout * x.c, "conv1x1 weight shape");
    let hw = x.plane();
    let mut y = Tensor::zeros(x.n, cout, x.h, x.w);
    for s in 0..x.n {
        let ys = y.sample_mut(s);
        for (co, &b) in bias.iter().enumerate() {
            ys[co * hw..(co + 1) * hw].fill(b);
        }
        gemm(cout, x.c, hw, weight, false, x.sample(s), false, ys, F::ONE);
    }
    y
}

pub fn conv1x1_backward<F: Real>(
    x: &Tensor<F>,
    weight: &[F],
    dy: &Tensor<F>,
    dweight: &mut [F],
    dbias: &mut [F],
) -> Tensor<F> {
    let cout = dy.c;
    let hw = x.plane();
    let mut dx = Tensor::zeros_like(x);
    for s in 0..x.n {
        let g = dy.sample(s);
        for (co, db) in dbias.iter_mut().enumerate() {
            *db += g[co * hw..(co + 1) * hw].iter().copied().sum::<F>();
        }
        gemm(cout, hw, x.c, g, false, x.sample(s), true, dweight, F::ONE);
        gemm(x.c, cout, hw, weight, true, g, false, dx.sample_mut(s), F::ZERO);
    }
    dx
}

/// Cached state of a normalization layer.
#[derive(Debug, Clone)]
pub struct NormCache<F> {
    xhat: Tensor<F>,
    /// One entry per statistics set, in set order.
    inv_std: Vec<F>,
}

/// Statistics sets as lists of contiguous (offset, len) runs.
fn norm_sets(kind: NormKind, groups: usize, n: usize, c: usize, hw: usize) -> Vec<Vec<(usize, usize)>> {
    let chw = c * hw;
    match kind {
        NormKind::Group | NormKind::Instance => {
            let g = if kind == NormKind::Instance { c } else { groups };
            assert!(g > 0 && c % g == 0, "channels {c} not divisible by groups {g}");
            let cg = c / g;
            (0..n)
                .flat_map(|s| (0..g).map(move |gi| vec![(s * chw + gi * cg * hw, cg * hw)]))
                .collect()
        }
        NormKind::Batch => (0..c)
            .map(|ch| (0..n).map(|s| (s * chw + ch * hw, hw)).collect())
            .collect(),
    }
}

/// Normalization with per-channel affine `gamma`, `beta`. Batch norm always
/// uses the statistics of the batch in hand.
pub fn norm_forward<F: Real>(
    x: &Tensor<F>,
    kind: NormKind,
    groups: usize,
    gamma: &[F],
    beta: &[F],
) -> (Tensor<F>, NormCache<F>) {
    let hw = x.plane();
    let c = x.c;
    let sets = norm_sets(kind, groups, x.n, c, hw);
    let mut xhat = Tensor::zeros_like(x);
    let mut y = Tensor::zeros_like(x);
    let mut inv_std = Vec::with_capacity(sets.len());
    let eps = F::from_f64(NORM_EPS);
    for runs in &sets {
        let count = F::from_f64(runs.iter().map(|r| r.1).sum::<usize>() as f64);
        let mut sum = F::ZERO;
        for &(o, l) in runs {
            sum += x.data[o..o + l].iter().copied().sum::<F>();
        }
        let mean = sum / count;
        let mut var = F::ZERO;
        for &(o, l) in runs {
            var += x.data[o..o + l].iter().map(|&v| (v - mean) * (v - mean)).sum::<F>();
        }
        let inv = F::ONE / (var / count + eps).sqrt();
        inv_std.push(inv);
        for &(o, l) in runs {
            // Runs start on plane boundaries, so each chunk is one channel.
            for base in (o..o + l).step_by(hw) {
                let ch = (base / hw) % c;
                let (g, b) = (gamma[ch], beta[ch]);
                let xs = &x.data[base..base + hw];
                let hs = &mut xhat.data[base..base + hw];
                let ys = &mut y.data[base..base + hw];
                for ((h, yv), &v) in hs.iter_mut().zip(ys.iter_mut()).zip(xs) {
                    let xh = (v - mean) * inv;
                    *h = xh;
                    *yv = g * xh + b;
                }
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn norm_backward<F: Real>(
    cache: &NormCache<F>,
    kind: NormKind,
    groups: usize,
    gamma: &[F],
    dy: &Tensor<F>,
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Tensor<F> {
    let xhat = &cache.xhat;
    let hw = xhat.plane();
    let c = xhat.c;
    let sets = norm_sets(kind, groups, xhat.n, c, hw);
    let mut dx = Tensor::zeros_like(xhat);
    for (runs, &inv) in sets.iter().zip(&cache.inv_std) {
        let m = runs.iter().map(|r| r.1).sum::<usize>();
        let mf = F::from_f64(m as f64);
        let mut sum_d = F::ZERO;
        let mut sum_dx = F::ZERO;
        for &(o, l) in runs {
            for base in (o..o + l).step_by(hw) {
                let ch = (base / hw) % c;
                let gs = &dy.data[base..base + hw];
                let hs = &xhat.data[base..base + hw];
                let s_g: F = gs.iter().copied().sum();
                let s_gx: F = gs.iter().zip(hs).map(|(&g, &h)| g * h).sum();
                dgamma[ch] += s_gx;
                dbeta[ch] += s_g;
                sum_d += gamma[ch] * s_g;
                sum_dx += gamma[ch] * s_gx;
            }
        }
        let scale = inv / mf;
        for &(o, l) in runs {
            for base in (o..o + l).step_by(hw) {
                let g = gamma[(base / hw) % c];
                let gs = &dy.data[base..base + hw];
                let hs = &xhat.data[base..base + hw];
                let ds = &mut dx.data[base..base + hw];
                for ((d, &gv), &h) in ds.iter_mut().zip(gs).zip(hs) {
                    *d = scale * (mf * gv * g - sum_d - h * sum_dx);
                }
            }
        }
    }
    dx
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Applies the activation and returns its pointwise derivative alongside,
/// which is all the reverse pass needs.
pub fn activation_forward<F: Real>(x: &Tensor<F>, act: Activation) -> (Tensor<F>, Tensor<F>) {
    let half = F::from_f64(0.5);
    let r = F::from_f64(INV_SQRT2);
    let p = F::from_f64(INV_SQRT_2PI);
    let mut y = Tensor::zeros_like(x);
    let mut d = Tensor::zeros_like(x);
    for ((yv, dv), &v) in y.data.iter_mut().zip(d.data.iter_mut()).zip(&x.data) {
        (*yv, *dv) = match act {
            Activation::Gelu => {
                let cdf = half * (F::ONE + (v * r).erf());
                (v * cdf, cdf + v * p * (-half * v * v).exp())
            }
            Activation::Relu => {
                if v > F::ZERO {
                    (v, F::ONE)
                } else {
                    (F::ZERO, F::ZERO)
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                (t, F::ONE - t * t)
            }
        };
    }
    (y, d)
}

/// Reverse pass given the derivative returned by [`activation_forward`].
pub fn activation_backward<F: Real>(deriv: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let data = deriv.data.iter().zip(&dy.data).map(|(&d, &g)| d * g).collect();
    Tensor::from_vec(deriv.n, deriv.c, deriv.h, deriv.w, data)
}

/// 2×2 average pool, stride 2. Requires even spatial size.
pub fn avgpool_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "avgpool needs even size");
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    let q = F::from_f64(0.25);
    for p in 0..x.n * x.c {
        let src = &x.data[p * x.h * x.w..][..x.h * x.w];
        let dst = &mut y.data[p * h2 * w2..][..h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                let a = src[2 * i * x.w + 2 * j];
                let b = src[2 * i * x.w + 2 * j + 1];
                let c = src[(2 * i + 1) * x.w + 2 * j];
                let d = src[(2 * i + 1) * x.w + 2 * j + 1];
                dst[i * w2 + j] = (a + b + c + d) * q;
            }
        }
    }
    y
}

pub fn avgpool_backward<F: Real>(dy: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let q = F::from_f64(0.25);
    for p in 0..dy.n * dy.c {
        let src = &dy.data[p * dy.h * dy.w..][..dy.h * dy.w];
        let dst = &mut dx.data[p * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * dy.w + x / 2] * q;
            }
        }
    }
    dx
}

/// Per output index: (low source, high source, weight of high).
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear ×2 upsampling with half-pixel centers (corners not aligned).
pub fn upsample_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let ty = bilinear_taps(x.h);
    let tx = bilinear_taps(x.w);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    for p in 0..x.n * x.c {
        let src = &x.data[p * x.h * x.w..][..x.h * x.w];
        let dst = &mut y.data[p * h2 * w2..][..h2 * w2];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, my) = (F::from_f64(ly), F::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, mx) = (F::from_f64(lx), F::from_f64(1.0 - lx));
                let top = mx * src[y0 * x.w + x0] + lx * src[y0 * x.w + x1];
                let bot = mx * src[y1 * x.w + x0] + lx * src[y1 * x.w + x1];
                dst[oy * w2 + ox] = my * top + ly * bot;
            }
        }
    }
    y
}

pub fn upsample_backward<F: Real>(dy: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let ty = bilinear_taps(h);
    let tx = bilinear_taps(w);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for p in 0..dy.n * dy.c {
        let src = &dy.data[p * dy.h * dy.w..][..dy.h * dy.w];
        let dst = &mut dx.data[p * h * w..][..h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, my) = (F::from_f64(ly), F::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, mx) = (F::from_f64(lx), F::from_f64(1.0 - lx));
                let g = src[oy * dy.w + ox];
                dst[y0 * w + x0] += my * mx * g;
                dst[y0 * w + x1] += my * lx * g;
                dst[y1 * w + x0] += ly * mx * g;
                dst[y1 * w + x1] += ly * lx * g;
            }
        }
    }
    dx
}

/// Weight slice for kernel tap (a, b) of a cin×cout×2×2 transpose kernel,
/// rearranged as a cout×cin matrix.
fn tap_matrix<F: Real>(weight: &[F], cin: usize, cout: usize, a: usize, b: usize) -> Vec<F> {
    let mut m = vec![F::ZERO; cout * cin];
    for ci in 0..cin {
        for co in 0..cout {
            m[co * cin + ci] = weight[((ci * cout + co) * 2 + a) * 2 + b];
        }
    }
    m
}

/// 2×2 transpose convolution, stride 2, with bias. `weight` is cin×cout×2×2.
pub fn transpose_conv_forward<F: Real>(x: &Tensor<F>, weight: &[F], bias: &[F]) -> Tensor<F> {
    let cin = x.c;
    let cout = bias.len();
    assert_eq!(weight.len(), cin * cout * 4, "transpose conv weight shape");
    let hw = x.plane();
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.n, cout, h2, w2);
    let mut tmp = vec![F::ZERO; cout * hw];
    for a in 0..2 {
        for b in 0..2 {
            let m = tap_matrix(weight, cin, cout, a, b);
            for s in 0..x.n {
                gemm(cout, cin, hw, &m, false, x.sample(s), false, &mut tmp, F::ZERO);
                let ys = y.sample_mut(s);
                for co in 0..cout {
                    for i in 0..x.h {
                        for j in 0..x.w {
                            ys[(co * h2 + 2 * i + a) * w2 + 2 * j + b] = tmp[co * hw + i * x.w + j] + bias[co];
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn transpose_conv_backward<F: Real>(
    x: &Tensor<F>,
    weight: &[F],
    dy: &Tensor<F>,
    dweight: &mut [F],
    dbias: &mut [F],
) -> Tensor<F> {
    let cin = x.c;
    let cout = dy.c;
    let hw = x.plane();
    let (h2, w2) = (dy.h, dy.w);
    let mut dx = Tensor::zeros_like(x);
    let mut g = vec![F::ZERO; cout * hw];
    let mut dm = vec![F::ZERO; cout * cin];
    for a in 0..2 {
        for b in 0..2 {
            let m = tap_matrix(weight, cin, cout, a, b);
            dm.fill(F::ZERO);
            for s in 0..x.n {
                let ds = dy.sample(s);
                for co in 0..cout {
                    for i in 0..x.h {
                        for j in 0..x.w {
                            g[co * hw + i * x.w + j] = ds[(co * h2 + 2 * i + a) * w2 + 2 * j + b];
                        }
                    }
                    dbias[co] += g[co * hw..(co + 1) * hw].iter().copied().sum::<F>();
                }
                gemm(cout, hw, cin, &g, false, x.sample(s), true, &mut dm, F::ONE);
                gemm(cin, cout, hw, &m, true, &g, false, dx.sample_mut(s), F::ONE);
            }
            for ci in 0..cin {
                for co in 0..cout {
                    dweight[((ci * cout + co) * 2 + a) * 2 + b] += dm[co * cin + ci];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial mismatch");
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (la, lb) = (a.sample_len(), b.sample_len());
    for s in 0..a.n {
        let ys = y.sample_mut(s);
        ys[..la].copy_from_slice(a.sample(s));
        ys[la..la + lb].copy_from_slice(b.sample(s));
    }
    y
}

/// Split a concatenated gradient back into its two channel ranges.
pub fn split<F: Real>(dy: &Tensor<F>, ca: usize) -> (Tensor<F>, Tensor<F>) {
    let cb = dy.c - ca;
    let mut a = Tensor::zeros(dy.n, ca, dy.h, dy.w);
    let mut b = Tensor::zeros(dy.n, cb, dy.h, dy.w);
    let la = a.sample_len();
    for s in 0..dy.n {
        let ds = dy.sample(s);
        a.sample_mut(s).copy_from_slice(&ds[..la]);
        b.sample_mut(s).copy_from_slice(&ds[la..]);
    }
    (a, b)
}
