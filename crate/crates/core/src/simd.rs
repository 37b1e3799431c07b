//! Dense matmul kernels for the batched network passes.
//!
//! Shape profile: a tall streamed operand (up to the full normalizer point
//! set) against a small one (a weight matrix), or the transposed deep-`k`
//! product that accumulates weight gradients. The streamed operand `b` is
//! required to have lane-padded rows so the kernels can issue full vector
//! loads; `a` is read with scalar broadcasts, so any strides work there.
//!
//! `gemm_bstream` computes `c = [c +] a(m×k) · b(k×n)` with an optional fused
//! elementwise epilogue, where `b` rows live at stride `b_rs >= padded(n)`
//! and `c` rows at stride `c_rs >= n`. On x86-64 with AVX-512 a
//! register-blocked microkernel runs; elsewhere a portable loop nest produces
//! identical results (same summation order).

use crate::scalar::Scalar;

/// Round `n` up to a multiple of the SIMD lane count for `T`.
pub fn padded<T: Scalar>(n: usize) -> usize {
    n.div_ceil(T::LANES) * T::LANES
}

/// Elementwise epilogue fused into the product writeback.
#[derive(Clone, Copy)]
pub enum PostOp<'a, T> {
    None,
    /// `c[i][j] = max(acc[i][j] + bias[j], 0)`; implies no accumulation.
    BiasRelu(&'a [T]),
    /// `c[i][j] = acts[i][j] > 0 ? acc[i][j] : 0`; `acts` rows at `stride`.
    ReluMask { acts: &'a [T], stride: usize },
}

#[allow(clippy::too_many_arguments)]
pub fn gemm_bstream<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_rs: usize,
    accumulate: bool,
    c: &mut [T],
    c_rs: usize,
    post: PostOp<'_, T>,
) {
    if m == 0 || n == 0 {
        return;
    }
    let np = padded::<T>(n);
    assert!(b_rs >= np, "b rows must be lane-padded");
    assert!(c_rs >= n, "c row stride too small");
    assert!((m - 1) * c_rs + n <= c.len(), "c out of bounds");
    if k > 0 {
        assert!((m - 1) * a_rs + (k - 1) * a_cs < a.len(), "a out of bounds");
        assert!((k - 1) * b_rs + np <= b.len(), "b out of bounds (padded)");
    }
    match post {
        PostOp::None => {}
        PostOp::BiasRelu(bias) => {
            assert!(!accumulate, "BiasRelu implies a fresh writeback");
            assert!(bias.len() >= n, "bias too short");
        }
        PostOp::ReluMask { acts, stride } => {
            assert!(!accumulate, "ReluMask implies a fresh writeback");
            assert!(stride >= np, "mask rows must be lane-padded");
            assert!((m - 1) * stride + n <= acts.len(), "mask out of bounds");
        }
    }
    if k == 0 && matches!(post, PostOp::None) && accumulate {
        return;
    }
    T::gemm_bstream_dispatch(m, k, n, a, a_rs, a_cs, b, b_rs, accumulate, c, c_rs, post);
}

/// Reference implementation; also the non-x86 path.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_portable<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_rs: usize,
    a_cs: usize,
    b: &[T],
    b_rs: usize,
    accumulate: bool,
    c: &mut [T],
    c_rs: usize,
    post: PostOp<'_, T>,
) {
    let mut row_acc = vec![T::zero(); n];
    for i in 0..m {
        row_acc.iter_mut().for_each(|v| *v = T::zero());
        for kk in 0..k {
            let av = a[i * a_rs + kk * a_cs];
            let brow = &b[kk * b_rs..kk * b_rs + n];
            for (j, acc) in row_acc.iter_mut().enumerate() {
                *acc = *acc + av * brow[j];
            }
        }
        let crow = &mut c[i * c_rs..i * c_rs + n];
        match post {
            PostOp::None => {
                if accumulate {
                    for (dst, &v) in crow.iter_mut().zip(&row_acc) {
                        *dst = *dst + v;
                    }
                } else {
                    crow.copy_from_slice(&row_acc);
                }
            }
            PostOp::BiasRelu(bias) => {
                for (j, dst) in crow.iter_mut().enumerate() {
                    *dst = (row_acc[j] + bias[j]).max(T::zero());
                }
            }
            PostOp::ReluMask { acts, stride } => {
                let arow = &acts[i * stride..i * stride + n];
                for (j, dst) in crow.iter_mut().enumerate() {
                    *dst = if arow[j] > T::zero() {
                        row_acc[j]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
pub(crate) mod avx512 {
    use super::PostOp;
    use std::arch::x86_64::*;
    use std::sync::OnceLock;

    pub fn available() -> bool {
        static AVAILABLE: OnceLock<bool> = OnceLock::new();
        *AVAILABLE.get_or_init(|| is_x86_feature_detected!("avx512f"))
    }

    /// Chunk of `k` processed per sweep when `c` is small enough to keep
    /// resident; keeps both streamed operands in L2.
    const K_CHUNK: usize = 2048;
    /// `m` below which the deep-`k` chunked schedule is used.
    const SMALL_M: usize = 128;

    macro_rules! kernels {
        ($ty:ty, $lanes:expr, $mask:ty, $setzero:ident, $set1:ident,
         $loadu:ident, $maskz_loadu:ident, $fmadd:ident, $addv:ident, $maxv:ident,
         $cmplt:ident, $maskz_mov:ident, $storeu:ident, $mask_storeu:ident,
         $mod_name:ident, $max_tiles:expr, $rb_main:expr) => {
            pub(crate) mod $mod_name {
                use super::*;

                /// One `RB x (TILES*LANES)` register tile over `k0..k1`,
                /// writing `cols` columns at `c`.
                #[target_feature(enable = "avx512f")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn block<const RB: usize, const TILES: usize>(
                    k0: usize,
                    k1: usize,
                    a: *const $ty,
                    a_rs: usize,
                    a_cs: usize,
                    b: *const $ty,
                    b_rs: usize,
                    accumulate: bool,
                    c: *mut $ty,
                    c_rs: usize,
                    cols: usize,
                    post: PostOp<'_, $ty>,
                    post_j0: usize,
                ) {
                    let mut acc = [[$setzero(); TILES]; RB];
                    let mut bp = b.add(k0 * b_rs);
                    let mut ap = [std::ptr::null::<$ty>(); RB];
                    for (r, slot) in ap.iter_mut().enumerate() {
                        *slot = a.add(r * a_rs + k0 * a_cs);
                    }
                    for _ in k0..k1 {
                        let mut bv = [$setzero(); TILES];
                        for (t, v) in bv.iter_mut().enumerate() {
                            *v = $loadu(bp.add(t * $lanes));
                        }
                        for r in 0..RB {
                            let av = $set1(*ap[r]);
                            for t in 0..TILES {
                                acc[r][t] = $fmadd(av, bv[t], acc[r][t]);
                            }
                        }
                        bp = bp.add(b_rs);
                        for slot in ap.iter_mut() {
                            *slot = slot.add(a_cs);
                        }
                    }

                    let full = cols / $lanes;
                    let rem = cols % $lanes;
                    let tail: $mask = ((1 as $mask) << rem).wrapping_sub(1);
                    let zero = $setzero();
                    match post {
                        PostOp::None => {
                            for r in 0..RB {
                                let crow = c.add(r * c_rs);
                                if accumulate {
                                    for t in 0..full {
                                        let cur = $loadu(crow.add(t * $lanes));
                                        $storeu(crow.add(t * $lanes), $addv(cur, acc[r][t]));
                                    }
                                    if rem > 0 {
                                        let cur = $maskz_loadu(tail, crow.add(full * $lanes));
                                        $mask_storeu(
                                            crow.add(full * $lanes),
                                            tail,
                                            $addv(cur, acc[r][full]),
                                        );
                                    }
                                } else {
                                    for t in 0..full {
                                        $storeu(crow.add(t * $lanes), acc[r][t]);
                                    }
                                    if rem > 0 {
                                        $mask_storeu(crow.add(full * $lanes), tail, acc[r][full]);
                                    }
                                }
                            }
                        }
                        PostOp::BiasRelu(bias) => {
                            let bj = bias.as_ptr().add(post_j0);
                            let mut bvs = [$setzero(); TILES];
                            for t in 0..full {
                                bvs[t] = $loadu(bj.add(t * $lanes));
                            }
                            if rem > 0 {
                                bvs[full] = $maskz_loadu(tail, bj.add(full * $lanes));
                            }
                            for r in 0..RB {
                                let crow = c.add(r * c_rs);
                                for t in 0..full {
                                    let v = $maxv($addv(acc[r][t], bvs[t]), zero);
                                    $storeu(crow.add(t * $lanes), v);
                                }
                                if rem > 0 {
                                    let v = $maxv($addv(acc[r][full], bvs[full]), zero);
                                    $mask_storeu(crow.add(full * $lanes), tail, v);
                                }
                            }
                        }
                        PostOp::ReluMask { acts, stride } => {
                            for r in 0..RB {
                                let crow = c.add(r * c_rs);
                                let arow = acts.as_ptr().add(r * stride + post_j0);
                                for t in 0..full {
                                    let av = $loadu(arow.add(t * $lanes));
                                    let keep = $cmplt(zero, av);
                                    $storeu(crow.add(t * $lanes), $maskz_mov(keep, acc[r][t]));
                                }
                                if rem > 0 {
                                    let av = $maskz_loadu(tail, arow.add(full * $lanes));
                                    let keep = $cmplt(zero, av);
                                    $mask_storeu(
                                        crow.add(full * $lanes),
                                        tail & keep,
                                        acc[r][full],
                                    );
                                    // lanes excluded by `keep` must still be zeroed
                                    let drop = tail & !keep;
                                    $mask_storeu(crow.add(full * $lanes), drop, zero);
                                }
                            }
                        }
                    }
                }

                #[target_feature(enable = "avx512f")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn sweep(
                    m: usize,
                    k0: usize,
                    k1: usize,
                    n: usize,
                    a: *const $ty,
                    a_rs: usize,
                    a_cs: usize,
                    b: *const $ty,
                    b_rs: usize,
                    accumulate: bool,
                    c: *mut $ty,
                    c_rs: usize,
                    post: PostOp<'_, $ty>,
                ) {
                    let mut j0 = 0;
                    while j0 < n {
                        let cols = (n - j0).min($max_tiles * $lanes);
                        let tiles = cols.div_ceil($lanes);
                        let bg = b.add(j0);
                        let cg = c.add(j0);
                        fn shift<'a>(p: PostOp<'a, $ty>, r: usize) -> PostOp<'a, $ty> {
                            match p {
                                PostOp::ReluMask { acts, stride } => PostOp::ReluMask {
                                    acts: &acts[r * stride..],
                                    stride,
                                },
                                other => other,
                            }
                        }
                        let mut row = 0;
                        macro_rules! run {
                            ($rb:expr, $r:expr) => {
                                match tiles {
                                    1 => block::<$rb, 1>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                    2 => block::<$rb, 2>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                    3 => block::<$rb, 3>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                    4 => block::<$rb, 4>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                    5 => block::<$rb, 5>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                    _ => block::<$rb, 6>(k0, k1, a.add($r * a_rs), a_rs, a_cs, bg, b_rs, accumulate, cg.add($r * c_rs), c_rs, cols, shift(post, $r), j0),
                                }
                            };
                        }
                        while row + $rb_main <= m {
                            run!($rb_main, row);
                            row += $rb_main;
                        }
                        while row < m {
                            run!(1, row);
                            row += 1;
                        }
                        j0 += cols;
                    }
                }

                #[allow(clippy::too_many_arguments)]
                pub(crate) fn gemm(
                    m: usize,
                    k: usize,
                    n: usize,
                    a: &[$ty],
                    a_rs: usize,
                    a_cs: usize,
                    b: &[$ty],
                    b_rs: usize,
                    accumulate: bool,
                    c: &mut [$ty],
                    c_rs: usize,
                    post: PostOp<'_, $ty>,
                ) {
                    unsafe {
                        if m <= SMALL_M && k > 2 * K_CHUNK && matches!(post, PostOp::None) {
                            // Deep-k: chunk so c stays resident and both
                            // streamed operands sit in L2 per sweep.
                            let mut k0 = 0;
                            let mut acc = accumulate;
                            while k0 < k {
                                let k1 = (k0 + K_CHUNK).min(k);
                                sweep(m, k0, k1, n, a.as_ptr(), a_rs, a_cs, b.as_ptr(), b_rs, acc, c.as_mut_ptr(), c_rs, PostOp::None);
                                acc = true;
                                k0 = k1;
                            }
                        } else {
                            sweep(m, 0, k, n, a.as_ptr(), a_rs, a_cs, b.as_ptr(), b_rs, accumulate, c.as_mut_ptr(), c_rs, post);
                        }
                    }
                }
            }
        };
    }

    kernels!(f32, 16, __mmask16, _mm512_setzero_ps, _mm512_set1_ps,
             _mm512_loadu_ps, _mm512_maskz_loadu_ps, _mm512_fmadd_ps, _mm512_add_ps,
             _mm512_max_ps, _mm512_cmplt_ps_mask, _mm512_maskz_mov_ps, _mm512_storeu_ps,
             _mm512_mask_storeu_ps, k32, 3, 6);
    kernels!(f64, 8, __mmask8, _mm512_setzero_pd, _mm512_set1_pd,
             _mm512_loadu_pd, _mm512_maskz_loadu_pd, _mm512_fmadd_pd, _mm512_add_pd,
             _mm512_max_pd, _mm512_cmplt_pd_mask, _mm512_maskz_mov_pd, _mm512_storeu_pd,
             _mm512_mask_storeu_pd, k64, 6, 4);
}
