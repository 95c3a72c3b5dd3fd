//! im2col convolution kernels and the small GEMM routines behind them.
//!
//! Determinism contract: every output element is produced by exactly one
//! summation loop with a fixed index order, so results are bit-identical
//! regardless of the rayon thread count.

use super::tensor::Real;
use rayon::prelude::*;

/// Row count below which the parallel split is not worth the overhead.
const PAR_MIN_WORK: usize = 1 << 16;

/// Lane-split pairwise dot product: eight independent accumulators under a
/// halving recursion. Keeps rounding error O(log n) instead of O(n) on long
/// cancellation-heavy reductions, vectorizes, and has a fixed summation tree
/// for bit-determinism.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    if a.len() > 512 {
        let mid = a.len() / 2;
        return dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..]);
    }
    let mut lanes = [T::zero(); 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += *x * *y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

/// Lane-split pairwise sum; same structure as [`dot`].
pub(crate) fn sum_slice<T: Real>(x: &[T]) -> T {
    if x.len() > 512 {
        let mid = x.len() / 2;
        return sum_slice(&x[..mid]) + sum_slice(&x[mid..]);
    }
    let mut lanes = [T::zero(); 8];
    let mut chunks = x.chunks_exact(8);
    for c in &mut chunks {
        for l in 0..8 {
            lanes[l] += c[l];
        }
    }
    let mut tail = T::zero();
    for v in chunks.remainder() {
        tail += *v;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

/// `c = a · b` (or `c += a · b` when `acc`), with `a: [m,k]`, `b: [k,n]`.
pub(crate) fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], i: usize| {
        if !acc {
            ci.fill(T::zero());
        }
        for l in 0..k {
            let av = a[i * k + l];
            if av == T::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cj, bj) in ci.iter_mut().zip(brow) {
                *cj += av * *bj;
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
}

/// `c = a · bᵀ` (or `+=`), with `a: [m,k]`, `b: [n,k]`: rows-by-rows dot products.
pub(crate) fn matmul_bt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], i: usize| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cj) in ci.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let d = dot(arow, brow);
            if acc {
                *cj += d;
            } else {
                *cj = d;
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
}

/// `c = aᵀ · b` (or `+=`), with `a: [k,m]`, `b: [k,n]`.
pub(crate) fn matmul_at<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], i: usize| {
        if !acc {
            ci.fill(T::zero());
        }
        for l in 0..k {
            let av = a[l * m + i];
            if av == T::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cj, bj) in ci.iter_mut().zip(brow) {
                *cj += av * *bj;
            }
        }
    };
    if m * k * n >= PAR_MIN_WORK && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
}

/// Unrolls one sample `[C, spatial..]` into `col: [C·∏kernel, ∏spatial]` for a
/// stride-1 "same" convolution with zero padding. Kernel extents must be odd.
pub(crate) fn im2col<T: Real>(input: &[T], channels: usize, spatial: &[usize], kernel: &[usize], col: &mut [T]) {
    match spatial.len() {
        2 => im2col2(input, channels, spatial[0], spatial[1], kernel[0], kernel[1], col),
        3 => im2col3(
            input, channels, spatial[0], spatial[1], spatial[2], kernel[0], kernel[1], kernel[2], col,
        ),
        r => unreachable!("im2col rank {r}"),
    }
}

/// Scatter-add of `col`-layout gradients back onto the input grid.
pub(crate) fn col2im<T: Real>(col: &[T], channels: usize, spatial: &[usize], kernel: &[usize], input_grad: &mut [T]) {
    match spatial.len() {
        2 => col2im2(col, channels, spatial[0], spatial[1], kernel[0], kernel[1], input_grad),
        3 => col2im3(
            col, channels, spatial[0], spatial[1], spatial[2], kernel[0], kernel[1], kernel[2], input_grad,
        ),
        r => unreachable!("col2im rank {r}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col2<T: Real>(input: &[T], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let s = h * w;
    let mut r = 0;
    for c in 0..c_in {
        let chan = &input[c * s..(c + 1) * s];
        for dy in 0..kh {
            for dx in 0..kw {
                let dst = &mut col[r * s..(r + 1) * s];
                // Valid output-x run for this kernel offset.
                let x0 = pw.saturating_sub(dx);
                let x1 = (w + pw).saturating_sub(dx).min(w);
                for y in 0..h {
                    let sy = y + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < ph || sy >= h + ph || x0 >= x1 {
                        drow.fill(T::zero());
                        continue;
                    }
                    let sy = sy - ph;
                    drow[..x0].fill(T::zero());
                    drow[x1..].fill(T::zero());
                    let src0 = x0 + dx - pw;
                    drow[x0..x1].copy_from_slice(&chan[sy * w + src0..sy * w + src0 + (x1 - x0)]);
                }
                r += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col3<T: Real>(
    input: &[T],
    c_in: usize,
    d: usize,
    h: usize,
    w: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    col: &mut [T],
) {
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let s = d * h * w;
    let mut r = 0;
    for c in 0..c_in {
        let chan = &input[c * s..(c + 1) * s];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let dst = &mut col[r * s..(r + 1) * s];
                    let x0 = pw.saturating_sub(dx);
                    let x1 = (w + pw).saturating_sub(dx).min(w);
                    for z in 0..d {
                        let sz = z + dz;
                        let dplane = &mut dst[z * h * w..(z + 1) * h * w];
                        if sz < pd || sz >= d + pd {
                            dplane.fill(T::zero());
                            continue;
                        }
                        let sz = sz - pd;
                        for y in 0..h {
                            let sy = y + dy;
                            let drow = &mut dplane[y * w..(y + 1) * w];
                            if sy < ph || sy >= h + ph || x0 >= x1 {
                                drow.fill(T::zero());
                                continue;
                            }
                            let sy = sy - ph;
                            drow[..x0].fill(T::zero());
                            drow[x1..].fill(T::zero());
                            let base = sz * h * w + sy * w + x0 + dx - pw;
                            drow[x0..x1].copy_from_slice(&chan[base..base + (x1 - x0)]);
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im2<T: Real>(col: &[T], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, grad: &mut [T]) {
    let (ph, pw) = (kh / 2, kw / 2);
    let s = h * w;
    let mut r = 0;
    for c in 0..c_in {
        let gchan = &mut grad[c * s..(c + 1) * s];
        for dy in 0..kh {
            for dx in 0..kw {
                let src = &col[r * s..(r + 1) * s];
                let x0 = pw.saturating_sub(dx);
                let x1 = (w + pw).saturating_sub(dx).min(w);
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy >= h + ph || x0 >= x1 {
                        continue;
                    }
                    let sy = sy - ph;
                    let srow = &src[y * w + x0..y * w + x1];
                    let g0 = sy * w + x0 + dx - pw;
                    for (g, v) in gchan[g0..g0 + (x1 - x0)].iter_mut().zip(srow) {
                        *g += *v;
                    }
                }
                r += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im3<T: Real>(
    col: &[T],
    c_in: usize,
    d: usize,
    h: usize,
    w: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    grad: &mut [T],
) {
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let s = d * h * w;
    let mut r = 0;
    for c in 0..c_in {
        let gchan = &mut grad[c * s..(c + 1) * s];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let src = &col[r * s..(r + 1) * s];
                    let x0 = pw.saturating_sub(dx);
                    let x1 = (w + pw).saturating_sub(dx).min(w);
                    for z in 0..d {
                        let sz = z + dz;
                        if sz < pd || sz >= d + pd {
                            continue;
                        }
                        let sz = sz - pd;
                        for y in 0..h {
                            let sy = y + dy;
                            if sy < ph || sy >= h + ph || x0 >= x1 {
                                continue;
                            }
                            let sy = sy - ph;
                            let srow = &src[z * h * w + y * w + x0..z * h * w + y * w + x1];
                            let g0 = sz * h * w + sy * w + x0 + dx - pw;
                            for (g, v) in gchan[g0..g0 + (x1 - x0)].iter_mut().zip(srow) {
                                *g += *v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}
