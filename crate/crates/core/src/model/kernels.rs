//! Direct 3×3 convolution kernels.
//!
//! Output channels are processed in blocks of eight so one AVX register per
//! channel accumulates eight neighbouring pixels. Weights are repacked into
//! `[block][in_channel][tap][8]` so the inner loop reads them contiguously.
//! Only used when the CPU supports AVX2 and FMA; callers fall back to the
//! im2col/GEMM path otherwise.

pub(crate) const BLOCK: usize = 8;

pub(crate) fn simd_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Copies a `c×h×w` sample into a zero-bordered `c×(h+2)×(w+2)` buffer.
pub(crate) fn pad1(x: &[f32], c: usize, h: usize, w: usize, out: &mut Vec<f32>) {
    let (hp, wp) = (h + 2, w + 2);
    out.clear();
    out.resize(c * hp * wp, 0.0);
    for ci in 0..c {
        for y in 0..h {
            let src = &x[(ci * h + y) * w..][..w];
            out[(ci * hp + y + 1) * wp + 1..][..w].copy_from_slice(src);
        }
    }
}

/// Packs `[out][in][3][3]` weights for the forward kernel.
pub(crate) fn pack_forward(weight: &[f32], cout: usize, cin: usize) -> Vec<f32> {
    let blocks = cout.div_ceil(BLOCK);
    let mut packed = vec![0.0; blocks * cin * 9 * BLOCK];
    for o in 0..cout {
        let (b, lane) = (o / BLOCK, o % BLOCK);
        for ci in 0..cin {
            for t in 0..9 {
                packed[((b * cin + ci) * 9 + t) * BLOCK + lane] = weight[(o * cin + ci) * 9 + t];
            }
        }
    }
    packed
}

/// Packs the adjoint kernel: input and output channels swapped, taps flipped.
pub(crate) fn pack_adjoint(weight: &[f32], cout: usize, cin: usize) -> Vec<f32> {
    let blocks = cin.div_ceil(BLOCK);
    let mut packed = vec![0.0; blocks * cout * 9 * BLOCK];
    for ci in 0..cin {
        let (b, lane) = (ci / BLOCK, ci % BLOCK);
        for o in 0..cout {
            for t in 0..9 {
                packed[((b * cout + o) * 9 + t) * BLOCK + lane] =
                    weight[(o * cin + ci) * 9 + (8 - t)];
            }
        }
    }
    packed
}

/// `out[o] = Σ_c Σ_tap packed · xpad` for every output channel `o < cout`.
/// `xpad` is a padded `cin×(h+2)×(w+2)` sample, `out` holds `cout` planes.
pub(crate) fn conv3_direct(
    xpad: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    packed: &[f32],
    cout: usize,
    out: &mut [f32],
) {
    debug_assert!(simd_available());
    let hw = h * w;
    for b in 0..cout.div_ceil(BLOCK) {
        let wblock = &packed[b * cin * 9 * BLOCK..(b + 1) * cin * 9 * BLOCK];
        let lanes = (cout - b * BLOCK).min(BLOCK);
        let dst = &mut out[b * BLOCK * hw..(b * BLOCK + lanes) * hw];
        #[cfg(target_arch = "x86_64")]
        // SAFETY: AVX2/FMA support is checked by the caller via `simd_available`.
        unsafe {
            avx::conv3_block(xpad, cin, h, w, wblock, lanes, dst)
        };
        #[cfg(not(target_arch = "x86_64"))]
        unreachable!("direct kernels require x86_64");
    }
}

/// Accumulates `dw[o][c][tap] += Σ_p dout[o][p] · xpad[c][p + tap]`.
///
/// `dout` is transposed to pixel-major blocks of eight output channels so each
/// pixel contributes one vector FMA per tap.
pub(crate) fn conv3_weight_grad(
    xpad: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    dout: &[f32],
    cout: usize,
    dw: &mut [f32],
) {
    debug_assert!(simd_available());
    let hw = h * w;
    let mut dt = vec![0.0f32; hw * BLOCK];
    let mut acc = vec![0.0f32; cin * 9 * BLOCK];
    for b in 0..cout.div_ceil(BLOCK) {
        let lanes = (cout - b * BLOCK).min(BLOCK);
        dt.fill(0.0);
        for lane in 0..lanes {
            let plane = &dout[(b * BLOCK + lane) * hw..][..hw];
            for (p, v) in plane.iter().enumerate() {
                dt[p * BLOCK + lane] = *v;
            }
        }
        acc.fill(0.0);
        #[cfg(target_arch = "x86_64")]
        // SAFETY: AVX2/FMA support is checked by the caller via `simd_available`.
        unsafe {
            avx::weight_grad_block(xpad, cin, h, w, &dt, &mut acc)
        };
        #[cfg(not(target_arch = "x86_64"))]
        unreachable!("direct kernels require x86_64");
        for lane in 0..lanes {
            let o = b * BLOCK + lane;
            for ct in 0..cin * 9 {
                dw[o * cin * 9 + ct] += acc[ct * BLOCK + lane];
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::BLOCK;
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn conv3_block(
        xpad: &[f32],
        cin: usize,
        h: usize,
        w: usize,
        wblock: &[f32],
        lanes: usize,
        dst: &mut [f32],
    ) {
        let (hp, wp) = (h + 2, w + 2);
        let hw = h * w;
        let vec_w = w / 8 * 8;
        let xp = xpad.as_ptr();
        let wb = wblock.as_ptr();
        assert!(xpad.len() >= cin * hp * wp && wblock.len() >= cin * 9 * BLOCK);
        assert!(dst.len() >= lanes * hw);
        let pair_w = w / 16 * 16;
        for y in 0..h {
            let mut x0 = 0;
            while x0 < pair_w {
                // two pixel vectors, output channels in halves of four
                for half in 0..lanes.div_ceil(4) {
                    let mut acc = [[_mm256_setzero_ps(); 2]; 4];
                    for ci in 0..cin {
                        let base = xp.add((ci * hp + y) * wp + x0);
                        let wc = wb.add(ci * 9 * BLOCK + half * 4);
                        for ky in 0..3 {
                            let row = base.add(ky * wp);
                            for kx in 0..3 {
                                let s0 = _mm256_loadu_ps(row.add(kx));
                                let s1 = _mm256_loadu_ps(row.add(kx + 8));
                                let wt = wc.add((ky * 3 + kx) * BLOCK);
                                for (o, a) in acc.iter_mut().enumerate() {
                                    let wv = _mm256_broadcast_ss(&*wt.add(o));
                                    a[0] = _mm256_fmadd_ps(wv, s0, a[0]);
                                    a[1] = _mm256_fmadd_ps(wv, s1, a[1]);
                                }
                            }
                        }
                    }
                    let take = (lanes - half * 4).min(4);
                    for (o, a) in acc.iter().enumerate().take(take) {
                        let d = dst.as_mut_ptr().add((half * 4 + o) * hw + y * w + x0);
                        _mm256_storeu_ps(d, a[0]);
                        _mm256_storeu_ps(d.add(8), a[1]);
                    }
                }
                x0 += 16;
            }
            while x0 < vec_w {
                let mut acc = [_mm256_setzero_ps(); BLOCK];
                for ci in 0..cin {
                    let base = xp.add((ci * hp + y) * wp + x0);
                    let wc = wb.add(ci * 9 * BLOCK);
                    for ky in 0..3 {
                        let row = base.add(ky * wp);
                        for kx in 0..3 {
                            let s = _mm256_loadu_ps(row.add(kx));
                            let wt = wc.add((ky * 3 + kx) * BLOCK);
                            for (o, a) in acc.iter_mut().enumerate() {
                                *a = _mm256_fmadd_ps(_mm256_broadcast_ss(&*wt.add(o)), s, *a);
                            }
                        }
                    }
                }
                for (o, a) in acc.iter().enumerate().take(lanes) {
                    _mm256_storeu_ps(dst.as_mut_ptr().add(o * hw + y * w + x0), *a);
                }
                x0 += 8;
            }
            for x in vec_w..w {
                let mut acc = [0.0f32; BLOCK];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let s = xpad[(ci * hp + y + ky) * wp + x + kx];
                            let wt = &wblock[(ci * 9 + ky * 3 + kx) * BLOCK..][..BLOCK];
                            for (a, wv) in acc.iter_mut().zip(wt) {
                                *a = wv.mul_add(s, *a);
                            }
                        }
                    }
                }
                for (o, a) in acc.iter().enumerate().take(lanes) {
                    dst[o * hw + y * w + x] = *a;
                }
            }
        }
    }

    /// `acc[c][tap][lane] += Σ_p dt[p][lane] · xpad[c][p + tap]`
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn weight_grad_block(
        xpad: &[f32],
        cin: usize,
        h: usize,
        w: usize,
        dt: &[f32],
        acc: &mut [f32],
    ) {
        let (hp, wp) = (h + 2, w + 2);
        assert!(xpad.len() >= cin * hp * wp && dt.len() >= h * w * BLOCK);
        assert!(acc.len() >= cin * 9 * BLOCK);
        let xp = xpad.as_ptr();
        let dp = dt.as_ptr();
        for y in 0..h {
            let drow = dp.add(y * w * BLOCK);
            for c in 0..cin {
                for ky in 0..3 {
                    // even and odd pixels accumulate separately to keep six
                    // independent FMA chains in flight
                    let g = acc.as_mut_ptr().add((c * 9 + ky * 3) * BLOCK);
                    let r = xp.add((c * hp + y + ky) * wp);
                    let mut e = [_mm256_setzero_ps(); 3];
                    let mut o = [_mm256_setzero_ps(); 3];
                    let mut x = 0;
                    while x + 1 < w {
                        let d0 = _mm256_loadu_ps(drow.add(x * BLOCK));
                        let d1 = _mm256_loadu_ps(drow.add((x + 1) * BLOCK));
                        for kx in 0..3 {
                            e[kx] = _mm256_fmadd_ps(_mm256_broadcast_ss(&*r.add(x + kx)), d0, e[kx]);
                            o[kx] = _mm256_fmadd_ps(_mm256_broadcast_ss(&*r.add(x + 1 + kx)), d1, o[kx]);
                        }
                        x += 2;
                    }
                    if x < w {
                        let d0 = _mm256_loadu_ps(drow.add(x * BLOCK));
                        for kx in 0..3 {
                            e[kx] = _mm256_fmadd_ps(_mm256_broadcast_ss(&*r.add(x + kx)), d0, e[kx]);
                        }
                    }
                    for kx in 0..3 {
                        let t = _mm256_add_ps(_mm256_loadu_ps(g.add(kx * BLOCK)), _mm256_add_ps(e[kx], o[kx]));
                        _mm256_storeu_ps(g.add(kx * BLOCK), t);
                    }
                }
            }
        }
    }
}
