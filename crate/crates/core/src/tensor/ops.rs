//! Forward and adjoint kernels for the network primitives.
//!
//! These are plain functions over [`Tensor`]s; the [`Tape`](super::Tape) records
//! calls to them and invokes the matching `*_backward` during reverse sweeps.

use super::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

/// Upper bound on the number of `f64`s held by one im2col chunk.
const CHUNK_ELEMS: usize = 1 << 20;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn chunk_rows(&self) -> usize {
        (CHUNK_ELEMS / self.patch_len().max(self.cout)).max(1)
    }
}

fn weight_dims(weights: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *weights.shape() {
        [kh, kw, cin, cout] => Ok((kh, kw, cin, cout)),
        _ => Err(Error::shape(op, format!("weights must be [kh, kw, Cin, Cout], got {:?}", weights.shape()))),
    }
}

fn check_bias(bias: Option<&Tensor>, cout: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(op, format!("bias has {} entries for {cout} output channels", b.len())));
        }
    }
    Ok(())
}

fn conv_geom(input: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (n, h, w, cin) = input.nhwc()?;
    let (kh, kw, wcin, cout) = weight_dims(weights, "conv2d")?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weights expect {wcin} (weights {:?})", weights.shape()),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape("conv2d", format!("filter extents must be odd, got {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be at least 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape("conv2d", format!("{kh}x{kw} filter does not fit a padded {h}x{w} map")));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvGeom {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        stride,
        pad,
        ho,
        wo,
    })
}

fn out_shape(input: &Tensor, n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if input.shape().len() == 3 {
        vec![h, w, c]
    } else {
        vec![n, h, w, c]
    }
}

/// Visits every (patch column offset, input offset) pair of output row `r`.
#[inline]
fn for_each_tap(g: &ConvGeom, r: usize, mut f: impl FnMut(usize, usize)) {
    let ox = r % g.wo;
    let oy = (r / g.wo) % g.ho;
    let nn = r / (g.wo * g.ho);
    for a in 0..g.kh {
        let iy = (oy * g.stride + a) as isize - g.pad as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        for b in 0..g.kw {
            let ix = (ox * g.stride + b) as isize - g.pad as isize;
            if ix < 0 || ix >= g.w as isize {
                continue;
            }
            let src = ((nn * g.h + iy as usize) * g.w + ix as usize) * g.cin;
            f((a * g.kw + b) * g.cin, src);
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom, rows: std::ops::Range<usize>, cols: &mut [f64]) {
    let k = g.patch_len();
    let cols = &mut cols[..rows.len() * k];
    cols.fill(0.0);
    for (local, r) in rows.enumerate() {
        let dst = &mut cols[local * k..(local + 1) * k];
        for_each_tap(g, r, |off, src| {
            dst[off..off + g.cin].copy_from_slice(&x[src..src + g.cin]);
        });
    }
}

fn col2im(dcols: &[f64], g: &ConvGeom, rows: std::ops::Range<usize>, dx: &mut [f64]) {
    let k = g.patch_len();
    for (local, r) in rows.enumerate() {
        let src_row = &dcols[local * k..(local + 1) * k];
        for_each_tap(g, r, |off, dst| {
            for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(&src_row[off..off + g.cin]) {
                *d += s;
            }
        });
    }
}

fn chunks(total: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..total).step_by(size).map(move |s| s..(s + size).min(total))
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>) {
    if let Some(b) = bias {
        let c = b.len();
        for row in out.chunks_exact_mut(c) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
}

fn channel_sums(dout: &[f64], c: usize) -> Vec<f64> {
    let mut s = vec![0.0; c];
    for row in dout.chunks_exact(c) {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += v;
        }
    }
    s
}

/// Zero-padded 2D convolution (cross-correlation) of an `[H, W, Cin]` or `[N, H, W, Cin]` map.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geom(input, weights, stride, pad)?;
    check_bias(bias, g.cout, "conv2d")?;
    let k = g.patch_len();
    let mut out = vec![0.0; g.rows() * g.cout];
    let step = g.chunk_rows();
    let mut cols = vec![0.0; step.min(g.rows()) * k];
    for rows in chunks(g.rows(), step) {
        let m = rows.len();
        im2col(input.data(), &g, rows.clone(), &mut cols);
        gemm(
            m,
            k,
            g.cout,
            1.0,
            MatRef::rows(&cols, k),
            MatRef::rows(weights.data(), g.cout),
            0.0,
            &mut out[rows.start * g.cout..rows.end * g.cout],
        );
    }
    add_bias(&mut out, bias);
    Tensor::new(out_shape(input, g.n, g.ho, g.wo, g.cout), out)
}

/// Adjoint of [`conv2d`]. Only the requested gradients are computed.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_weights: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let g = conv_geom(input, weights, stride, pad)?;
    if dout.len() != g.rows() * g.cout {
        return Err(Error::shape("conv2d_backward", "upstream gradient does not match output"));
    }
    let k = g.patch_len();
    let step = g.chunk_rows();
    let mut cols = vec![0.0; step.min(g.rows()) * k];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut dw = need_weights.then(|| vec![0.0; weights.len()]);
    for rows in chunks(g.rows(), step) {
        let m = rows.len();
        let dchunk = &dout.data()[rows.start * g.cout..rows.end * g.cout];
        if let Some(dw) = dw.as_mut() {
            im2col(input.data(), &g, rows.clone(), &mut cols);
            gemm(k, m, g.cout, 1.0, MatRef::transposed(&cols, k), MatRef::rows(dchunk, g.cout), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                m,
                g.cout,
                k,
                1.0,
                MatRef::rows(dchunk, g.cout),
                MatRef::transposed(weights.data(), g.cout),
                0.0,
                &mut cols[..m * k],
            );
            col2im(&cols, &g, rows, dx);
        }
    }
    let db = Tensor::new(vec![g.cout], channel_sums(dout.data(), g.cout))?;
    let dx = dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?;
    let dw = dw.map(|d| Tensor::new(weights.shape().to_vec(), d)).transpose()?;
    Ok((dx, dw, db))
}

#[derive(Clone, Copy, Debug)]
struct UpGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    pad: usize,
}

const UP_STRIDE: usize = 2;

fn up_geom(input: &Tensor, weights: &Tensor) -> Result<UpGeom> {
    let (n, h, w, cin) = input.nhwc()?;
    let (kh, kw, wcin, cout) = weight_dims(weights, "conv2d_fractional")?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d_fractional",
            format!("input has {cin} channels but weights expect {wcin} (weights {:?})", weights.shape()),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 || kh != kw {
        return Err(Error::shape("conv2d_fractional", format!("filter must be square and odd, got {kh}x{kw}")));
    }
    Ok(UpGeom {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        ho: UP_STRIDE * h,
        wo: UP_STRIDE * w,
        pad: (kh - 1) / 2,
    })
}

impl UpGeom {
    fn taps(&self) -> usize {
        self.kh * self.kw * self.cout
    }

    /// Visits every (tap column offset, output offset) pair fed by input row `r`.
    #[inline]
    fn for_each_target(&self, r: usize, mut f: impl FnMut(usize, usize)) {
        let j = r % self.w;
        let i = (r / self.w) % self.h;
        let nn = r / (self.w * self.h);
        for a in 0..self.kh {
            let oy = (UP_STRIDE * i + a) as isize - self.pad as isize;
            if oy < 0 || oy >= self.ho as isize {
                continue;
            }
            for b in 0..self.kw {
                let ox = (UP_STRIDE * j + b) as isize - self.pad as isize;
                if ox < 0 || ox >= self.wo as isize {
                    continue;
                }
                let dst = ((nn * self.ho + oy as usize) * self.wo + ox as usize) * self.cout;
                f((a * self.kw + b) * self.cout, dst);
            }
        }
    }
}

/// `[kh, kw, Cin, Cout]` → `Cin x (kh·kw·Cout)`.
fn permute_up_weights(weights: &Tensor, g: &UpGeom) -> Vec<f64> {
    let taps = g.kh * g.kw;
    let mut wt = vec![0.0; g.cin * g.taps()];
    for t in 0..taps {
        for ci in 0..g.cin {
            let src = &weights.data()[(t * g.cin + ci) * g.cout..(t * g.cin + ci + 1) * g.cout];
            wt[ci * g.taps() + t * g.cout..ci * g.taps() + (t + 1) * g.cout].copy_from_slice(src);
        }
    }
    wt
}

fn unpermute_up_weights(wt: &[f64], g: &UpGeom) -> Vec<f64> {
    let taps = g.kh * g.kw;
    let mut w = vec![0.0; wt.len()];
    for t in 0..taps {
        for ci in 0..g.cin {
            w[(t * g.cin + ci) * g.cout..(t * g.cin + ci + 1) * g.cout]
                .copy_from_slice(&wt[ci * g.taps() + t * g.cout..ci * g.taps() + (t + 1) * g.cout]);
        }
    }
    w
}

/// Fractionally strided (stride 1/2) convolution: a stride-2 transposed
/// convolution with padding `(k-1)/2` and one row/column of output padding, so
/// the spatial extents are exactly doubled.
pub fn conv2d_fractional(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let g = up_geom(input, weights)?;
    check_bias(bias, g.cout, "conv2d_fractional")?;
    let wt = permute_up_weights(weights, &g);
    let taps = g.taps();
    let rows_total = g.n * g.h * g.w;
    let step = (CHUNK_ELEMS / taps).max(1);
    let mut p = vec![0.0; step.min(rows_total) * taps];
    let mut out = vec![0.0; g.n * g.ho * g.wo * g.cout];
    for rows in chunks(rows_total, step) {
        let m = rows.len();
        let xs = &input.data()[rows.start * g.cin..rows.end * g.cin];
        gemm(m, g.cin, taps, 1.0, MatRef::rows(xs, g.cin), MatRef::rows(&wt, taps), 0.0, &mut p[..m * taps]);
        for (local, r) in rows.enumerate() {
            let prow = &p[local * taps..(local + 1) * taps];
            g.for_each_target(r, |off, dst| {
                for (o, v) in out[dst..dst + g.cout].iter_mut().zip(&prow[off..off + g.cout]) {
                    *o += v;
                }
            });
        }
    }
    add_bias(&mut out, bias);
    Tensor::new(out_shape(input, g.n, g.ho, g.wo, g.cout), out)
}

/// Adjoint of [`conv2d_fractional`].
pub fn conv2d_fractional_backward(
    input: &Tensor,
    weights: &Tensor,
    dout: &Tensor,
    need_input: bool,
    need_weights: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let g = up_geom(input, weights)?;
    if dout.len() != g.n * g.ho * g.wo * g.cout {
        return Err(Error::shape("conv2d_fractional_backward", "upstream gradient does not match output"));
    }
    let wt = permute_up_weights(weights, &g);
    let taps = g.taps();
    let rows_total = g.n * g.h * g.w;
    let step = (CHUNK_ELEMS / taps).max(1);
    let mut dp = vec![0.0; step.min(rows_total) * taps];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut dwt = need_weights.then(|| vec![0.0; wt.len()]);
    for rows in chunks(rows_total, step) {
        let m = rows.len();
        let dpc = &mut dp[..m * taps];
        dpc.fill(0.0);
        for (local, r) in rows.clone().enumerate() {
            let prow = &mut dpc[local * taps..(local + 1) * taps];
            g.for_each_target(r, |off, src| {
                prow[off..off + g.cout].copy_from_slice(&dout.data()[src..src + g.cout]);
            });
        }
        let xs = &input.data()[rows.start * g.cin..rows.end * g.cin];
        if let Some(dx) = dx.as_mut() {
            gemm(
                m,
                taps,
                g.cin,
                1.0,
                MatRef::rows(dpc, taps),
                MatRef::transposed(&wt, taps),
                0.0,
                &mut dx[rows.start * g.cin..rows.end * g.cin],
            );
        }
        if let Some(dwt) = dwt.as_mut() {
            gemm(g.cin, m, taps, 1.0, MatRef::transposed(xs, g.cin), MatRef::rows(dpc, taps), 1.0, dwt);
        }
    }
    let db = Tensor::new(vec![g.cout], channel_sums(dout.data(), g.cout))?;
    let dx = dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?;
    let dw = dwt
        .map(|d| Tensor::new(weights.shape().to_vec(), unpermute_up_weights(&d, &g)))
        .transpose()?;
    Ok((dx, dw, db))
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Inference,
}

/// Saved quantities for the batch-norm adjoint.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mode: BnMode,
}

/// Spatial batch normalization over the batch and spatial axes of a channels-last tensor.
pub fn batch_norm(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    mode: BnMode,
    stats: &mut BnStats,
) -> Result<(Tensor, BnCache)> {
    let c = *input.shape().last().unwrap_or(&0);
    if scale.len() != c || shift.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::shape("batch_norm", format!("{c} channels but parameters/statistics disagree")));
    }
    let m = input.len() / c;
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            if m < 2 {
                return Err(Error::shape("batch_norm", "training mode needs at least two values per channel"));
            }
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - mu;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let unbias = m as f64 / (m as f64 - 1.0);
            for ch in 0..c {
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch] * unbias;
            }
            (mean, var)
        }
        BnMode::Inference => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ((xr, hr), or) in x.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
        for ch in 0..c {
            let h = (xr[ch] - mean[ch]) * inv_std[ch];
            hr[ch] = h;
            or[ch] = scale.data()[ch] * h + shift.data()[ch];
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BnCache { xhat, inv_std, mode },
    ))
}

/// Returns `(d_input, d_scale, d_shift)`.
pub fn batch_norm_backward(scale: &Tensor, cache: &BnCache, dout: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = scale.len();
    let m = dout.len() / c;
    let dy = dout.data();
    let mut dshift = vec![0.0; c];
    let mut dscale = vec![0.0; c];
    for (dr, hr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dshift[ch] += dr[ch];
            dscale[ch] += dr[ch] * hr[ch];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    match cache.mode {
        BnMode::Inference => {
            for (dxr, dr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    dxr[ch] = dr[ch] * scale.data()[ch] * cache.inv_std[ch];
                }
            }
        }
        BnMode::Train => {
            // sums of dxhat and dxhat·xhat follow from dshift/dscale
            let mf = m as f64;
            for ((dxr, dr), hr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)).zip(cache.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let g = scale.data()[ch];
                    dxr[ch] = g * cache.inv_std[ch] / mf * (mf * dr[ch] - dshift[ch] - hr[ch] * dscale[ch]);
                }
            }
        }
    }
    (dx, dscale, dshift)
}

/// 2x2 max pooling with stride 2; odd extents are floored.
pub fn max_pool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, h, w, c) = input.nhwc()?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::shape("max_pool2", format!("{h}x{w} map is too small to pool")));
    }
    let x = input.data();
    let mut out = vec![0.0; n * ho * wo * c];
    let mut arg = vec![0usize; out.len()];
    for nn in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((nn * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut bv = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((nn * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[idx] > bv || best == usize::MAX {
                            bv = x[idx];
                            best = idx;
                        }
                    }
                    out[o + ch] = bv;
                    arg[o + ch] = best;
                }
            }
        }
    }
    Ok((Tensor::new(out_shape(input, n, ho, wo, c), out)?, arg))
}

/// Normalized uncentered channel covariance per batch item: `[N, H, W, C]` → `[N, C, C]`,
/// `G = FᵀF / (H·W·C)` with `F` the `(H·W) x C` feature matrix.
pub fn gram(input: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = input.nhwc()?;
    let hw = h * w;
    let norm = 1.0 / (hw * c) as f64;
    let mut out = vec![0.0; n * c * c];
    for nn in 0..n {
        let f = &input.data()[nn * hw * c..(nn + 1) * hw * c];
        gemm(
            c,
            hw,
            c,
            norm,
            MatRef::transposed(f, c),
            MatRef::rows(f, c),
            0.0,
            &mut out[nn * c * c..(nn + 1) * c * c],
        );
    }
    Tensor::new(vec![n, c, c], out)
}

pub fn gram_backward(input: &Tensor, dout: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = input.nhwc()?;
    let hw = h * w;
    let norm = 1.0 / (hw * c) as f64;
    let mut dx = vec![0.0; input.len()];
    let mut sym = vec![0.0; c * c];
    for nn in 0..n {
        let dg = &dout.data()[nn * c * c..(nn + 1) * c * c];
        for i in 0..c {
            for j in 0..c {
                sym[i * c + j] = dg[i * c + j] + dg[j * c + i];
            }
        }
        let f = &input.data()[nn * hw * c..(nn + 1) * hw * c];
        gemm(
            hw,
            c,
            c,
            norm,
            MatRef::rows(f, c),
            MatRef::rows(&sym, c),
            0.0,
            &mut dx[nn * hw * c..(nn + 1) * hw * c],
        );
    }
    Tensor::new(input.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct quadruple-loop convolution, independent of the im2col path.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let (n, h, wd, cin) = x.nhwc().unwrap();
        let (kh, kw, _, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * ho * wo * cout];
        for nn in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut s = b[co];
                        for a in 0..kh {
                            for bb in 0..kw {
                                let iy = (oy * stride + a) as isize - pad as isize;
                                let ix = (ox * stride + bb) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    s += x.data()[((nn * h + iy as usize) * wd + ix as usize) * cin + ci]
                                        * w.data()[((a * kw + bb) * cin + ci) * cout + co];
                                }
                            }
                        }
                        out[((nn * ho + oy) * wo + ox) * cout + co] = s;
                    }
                }
            }
        }
        out
    }

    /// Direct scatter form of the stride-2 transposed convolution.
    fn naive_up(x: &Tensor, w: &Tensor) -> Vec<f64> {
        let (n, h, wd, cin) = x.nhwc().unwrap();
        let (kh, kw, _, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let pad = (kh - 1) / 2;
        let (ho, wo) = (2 * h, 2 * wd);
        let mut out = vec![0.0; n * ho * wo * cout];
        for nn in 0..n {
            for i in 0..h {
                for j in 0..wd {
                    for a in 0..kh {
                        for bb in 0..kw {
                            let oy = (2 * i + a) as isize - pad as isize;
                            let ox = (2 * j + bb) as isize - pad as isize;
                            if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                for co in 0..cout {
                                    out[((nn * ho + oy as usize) * wo + ox as usize) * cout + co] += x.data()
                                        [((nn * h + i) * wd + j) * cin + ci]
                                        * w.data()[((a * kw + bb) * cin + ci) * cout + co];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_passes_only_bias() {
        let x = Tensor::zeros(&[3, 3, 1]);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| i as f64 - 4.0);
        let b = Tensor::full(&[1], 0.5);
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gradient_filter_marks_edges() {
        let x = Tensor::new(vec![1, 5, 1], vec![0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let w = Tensor::new(vec![1, 3, 1, 1], vec![-1.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        // 1-row filter with pad 1 also pads rows; keep the middle row
        assert_eq!(y.shape(), &[3, 5, 1]);
        assert_eq!(&y.data()[5..10], &[0.0, 1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn strided_conv_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[4, 4, 1], &mut rng);
        let w = random(&[3, 3, 1, 1], &mut rng);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        let want = naive_conv(&x, &w, &[0.0], 2, 1);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn conv_matches_oracle_on_multichannel_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, h, w, cin, k, cout, stride, pad) in &[
            (2, 8, 8, 4, 3, 5, 1, 1),
            (1, 7, 6, 3, 3, 2, 2, 1),
            (3, 8, 8, 4, 5, 3, 1, 2),
            (1, 8, 8, 2, 9, 2, 1, 4),
        ] {
            let x = random(&[n, h, w, cin], &mut rng);
            let wt = random(&[k, k, cin, cout], &mut rng);
            let b: Vec<f64> = (0..cout).map(|i| i as f64 * 0.1).collect();
            let bt = Tensor::new(vec![cout], b.clone()).unwrap();
            let y = conv2d(&x, &wt, Some(&bt), stride, pad).unwrap();
            let want = naive_conv(&x, &wt, &b, stride, pad);
            for (a, bb) in y.data().iter().zip(&want) {
                assert!((a - bb).abs() <= 1e-12 * bb.abs().max(1.0), "{a} vs {bb}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(&[4, 4, 2]);
        let w = Tensor::zeros(&[3, 3, 3, 1]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("2 channels"));
    }

    #[test]
    fn fractional_conv_doubles_extents() {
        let x = Tensor::zeros(&[15, 15, 128]);
        let w = Tensor::zeros(&[3, 3, 128, 64]);
        let b = Tensor::full(&[64], 0.25);
        let y = conv2d_fractional(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[30, 30, 64]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn fractional_conv_single_pixel_adjoint_identity() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d_fractional(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.sum(), 2.5);
        assert_eq!(y.data(), naive_up(&x, &w).as_slice());
    }

    #[test]
    fn fractional_conv_matches_scatter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 3, 4, 3], &mut rng);
        let w = random(&[3, 3, 3, 2], &mut rng);
        let y = conv2d_fractional(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[2, 6, 8, 2]);
        for (a, b) in y.data().iter().zip(naive_up(&x, &w)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_conv_is_adjoint_of_strided_conv() {
        // <up(x), y> == <x, down(y)> with shared weights (transposed channel roles)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[1, 4, 4, 3], &mut rng);
        let y = random(&[1, 8, 8, 2], &mut rng);
        let w = random(&[3, 3, 3, 2], &mut rng);
        let up = conv2d_fractional(&x, &w, None).unwrap();
        // down-conv weights [kh,kw,Cout=2 -> Cin=3]
        let mut wd = vec![0.0; 3 * 3 * 2 * 3];
        for t in 0..9 {
            for ci in 0..3 {
                for co in 0..2 {
                    wd[(t * 2 + co) * 3 + ci] = w.data()[(t * 3 + ci) * 2 + co];
                }
            }
        }
        let wd = Tensor::new(vec![3, 3, 2, 3], wd).unwrap();
        let down = conv2d(&y, &wd, None, 2, 1).unwrap();
        assert_eq!(down.shape(), x.shape());
        let lhs: f64 = up.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn batch_norm_constant_channel_goes_to_zero() {
        let x = Tensor::full(&[2, 3, 3, 1], 4.0);
        let mut stats = BnStats::new(1);
        let (y, _) = batch_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), BnMode::Train, &mut stats).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_two_values_formula() {
        let x = Tensor::new(vec![1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        let mut stats = BnStats::new(1);
        let (y, _) = batch_norm(&x, &Tensor::full(&[1], 2.0), &Tensor::full(&[1], 5.0), BnMode::Train, &mut stats).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] - (5.0 - 2.0 * s)).abs() < 1e-14);
        assert!((y.data()[1] - (5.0 + 2.0 * s)).abs() < 1e-14);
        assert!((y.data()[0] - 3.0).abs() < 1e-4 && (y.data()[1] - 7.0).abs() < 1e-4);
        // running statistics moved by one momentum step toward (2, 2)
        assert!((stats.mean[0] - 0.2).abs() < 1e-14);
        assert!((stats.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn batch_norm_inference_with_unit_stats_is_identity_up_to_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 4, 4, 2], &mut rng);
        let mut stats = BnStats::new(2);
        let (y, _) = batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), BnMode::Inference, &mut stats).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * s).abs() < 1e-15);
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn max_pool_floors_odd_extents() {
        let x = Tensor::from_fn(&[5, 5, 1], |i| i as f64);
        let (y, _) = max_pool2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn gram_of_two_by_two_features() {
        // F (N_z x N_c) = [[1,2],[3,4]] → stored channels-last as 2 positions x 2 channels
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let g = gram(&x).unwrap();
        assert_eq!(g.data(), &[5.0 / 4.0, 11.0 / 4.0, 11.0 / 4.0, 25.0 / 4.0]);
    }
}
