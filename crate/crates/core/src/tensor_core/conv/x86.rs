//! SIMD kernels for `f32`. A block of `CB` output channels is accumulated in
//! `CB` registers, each covering adjacent output columns; every input load is
//! shared by the whole block.
//!
//! Two instantiations exist: AVX-512 (16 columns per register) and AVX2 with
//! FMA (8 columns). `Isa::detect` picks the widest one the CPU supports.

use std::arch::x86_64::*;

/// Output-channel block size; weights are packed as `[block][ci][tap][CB]`.
pub(super) const CB: usize = 8;

/// Widest register width in use, in `f32` lanes.
pub(super) const MAX_LANES: usize = 16;

#[derive(Clone, Copy)]
pub(super) enum Isa {
    Avx512,
    Avx2,
}

impl Isa {
    pub(super) fn detect() -> Option<Isa> {
        if is_x86_feature_detected!("avx512f") {
            Some(Isa::Avx512)
        } else if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            Some(Isa::Avx2)
        } else {
            None
        }
    }

    /// See [`avx512::correlate`].
    #[allow(clippy::too_many_arguments)]
    pub(super) fn correlate(self, x: &[f32], cin: usize, hp: usize, stride: usize, packed: &[f32], cout: usize, k: usize, wo: usize, out: &mut [f32]) {
        // SAFETY: `self` was produced by `detect`, which checked the features.
        unsafe {
            match self {
                Isa::Avx512 => avx512::correlate(x, cin, hp, stride, packed, cout, k, wo, out),
                Isa::Avx2 => avx2::correlate(x, cin, hp, stride, packed, cout, k, wo, out),
            }
        }
    }

    /// See [`avx512::weight_grad`].
    #[allow(clippy::too_many_arguments)]
    pub(super) fn weight_grad(self, x: &[f32], cin: usize, hp: usize, stride: usize, gpad: &[f32], cout: usize, k: usize, gstride: usize, gw: &mut [f32]) {
        // SAFETY: as above.
        unsafe {
            match self {
                Isa::Avx512 => avx512::weight_grad(x, cin, hp, stride, gpad, cout, k, gstride, gw),
                Isa::Avx2 => avx2::weight_grad(x, cin, hp, stride, gpad, cout, k, gstride, gw),
            }
        }
    }
}

macro_rules! kernels {
    ($name:ident, $feat:literal, $lanes:literal, $vec:ty, $zero:ident, $load:ident, $set1:ident, $fma:ident, $store:ident) => {
        pub(super) mod $name {
            use super::*;

            const L: usize = $lanes;

            #[target_feature(enable = $feat)]
            fn spill(v: $vec) -> [f32; L] {
                let mut t = [0f32; L];
                // SAFETY: `t` holds exactly one register.
                unsafe { $store(t.as_mut_ptr(), v) };
                t
            }

            /// Valid correlation of `cin` padded planes (`hp` rows of `stride`
            /// floats) with packed weights. Writes `cout x ho x wo` into `out`.
            /// Rows must carry at least `L` readable floats past the padded width.
            ///
            /// # Safety
            /// The CPU must support the features this module is compiled for.
            #[allow(clippy::too_many_arguments)]
            #[target_feature(enable = $feat)]
            pub(crate) unsafe fn correlate(
                x: &[f32],
                cin: usize,
                hp: usize,
                stride: usize,
                packed: &[f32],
                cout: usize,
                k: usize,
                wo: usize,
                out: &mut [f32],
            ) {
                let taps = k * k;
                let ho = hp + 1 - k;
                let blocks = cout.div_ceil(CB);
                assert!(wo + k - 1 + L <= stride);
                assert!(x.len() >= cin * hp * stride);
                assert!(packed.len() >= blocks * cin * taps * CB);
                assert!(out.len() >= cout * ho * wo);
                let xp = x.as_ptr();
                for cob in 0..blocks {
                    let nb = CB.min(cout - cob * CB);
                    let wb = &packed[cob * cin * taps * CB..(cob + 1) * cin * taps * CB];
                    for y in 0..ho {
                        let mut x0 = 0;
                        while x0 < wo {
                            let mut acc = [$zero(); CB];
                            for ci in 0..cin {
                                for ky in 0..k {
                                    // SAFETY: y + ky < hp, and x0 + kx + L <= wo + k - 2 + L < stride,
                                    // so every load stays inside this padded row.
                                    let row = unsafe { xp.add((ci * hp + y + ky) * stride + x0) };
                                    for kx in 0..k {
                                        let s = unsafe { $load(row.add(kx)) };
                                        let w = &wb[(ci * taps + ky * k + kx) * CB..][..CB];
                                        for (a, wv) in acc.iter_mut().zip(w) {
                                            *a = $fma($set1(*wv), s, *a);
                                        }
                                    }
                                }
                            }
                            let width = L.min(wo - x0);
                            for (b, a) in acc.iter().enumerate().take(nb) {
                                let dst = ((cob * CB + b) * ho + y) * wo + x0;
                                out[dst..dst + width].copy_from_slice(&spill(*a)[..width]);
                            }
                            x0 += L;
                        }
                    }
                }
            }

            /// `gw[co][ci][ky][kx] += sum gy[co][y][x] * x[ci][y + ky][x + kx]`.
            /// `gpad` holds the output gradient in rows of `gstride` floats (a
            /// multiple of `L`, zero past `wo`), with zero planes up to a whole
            /// channel block.
            ///
            /// # Safety
            /// The CPU must support the features this module is compiled for.
            #[allow(clippy::too_many_arguments)]
            #[target_feature(enable = $feat)]
            pub(crate) unsafe fn weight_grad(
                x: &[f32],
                cin: usize,
                hp: usize,
                stride: usize,
                gpad: &[f32],
                cout: usize,
                k: usize,
                gstride: usize,
                gw: &mut [f32],
            ) {
                let ho = hp + 1 - k;
                let blocks = cout.div_ceil(CB);
                let chunks = gstride / L;
                assert!(gstride % L == 0 && gstride + k - 1 <= stride);
                assert!(x.len() >= cin * hp * stride);
                assert!(gpad.len() >= blocks * CB * ho * gstride);
                assert!(gw.len() >= cout * cin * k * k);
                let xp = x.as_ptr();
                let gp = gpad.as_ptr();
                for cob in 0..blocks {
                    let nb = CB.min(cout - cob * CB);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let mut acc = [$zero(); CB];
                                for y in 0..ho {
                                    // SAFETY: input reads end at kx + gstride <= stride within
                                    // the row; gradient reads stay inside the asserted extent.
                                    let xr = unsafe { xp.add((ci * hp + y + ky) * stride + kx) };
                                    for c in 0..chunks {
                                        let s = unsafe { $load(xr.add(c * L)) };
                                        for (b, a) in acc.iter_mut().enumerate() {
                                            let g = unsafe { $load(gp.add(((cob * CB + b) * ho + y) * gstride + c * L)) };
                                            *a = $fma(g, s, *a);
                                        }
                                    }
                                }
                                for (b, a) in acc.iter().enumerate().take(nb) {
                                    let idx = (((cob * CB + b) * cin + ci) * k + ky) * k + kx;
                                    gw[idx] += spill(*a).iter().sum::<f32>();
                                }
                            }
                        }
                    }
                }
            }
        }
    };
}

kernels!(avx512, "avx512f", 16, __m512, _mm512_setzero_ps, _mm512_loadu_ps, _mm512_set1_ps, _mm512_fmadd_ps, _mm512_storeu_ps);
kernels!(avx2, "avx2,fma", 8, __m256, _mm256_setzero_ps, _mm256_loadu_ps, _mm256_set1_ps, _mm256_fmadd_ps, _mm256_storeu_ps);
