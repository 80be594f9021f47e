//! Direct convolution kernels.
//!
//! Inputs are copied into a zero-padded plane whose rows carry `LANES` extra
//! zeros, so every inner loop reads full fixed-width chunks without bounds
//! branches. Output channels are processed in blocks of `CO_BLOCK` to reuse
//! each input load. `f32` on x86-64 dispatches to SIMD kernels; everything
//! else runs the portable loops below.

#[cfg(target_arch = "x86_64")]
use std::any::TypeId;

use super::Scalar;

#[cfg(target_arch = "x86_64")]
mod x86;

const LANES: usize = 16;
const CO_BLOCK: usize = 8;

#[cfg(target_arch = "x86_64")]
const _: () = assert!(CO_BLOCK == x86::CB && LANES >= x86::MAX_LANES);

#[cfg(target_arch = "x86_64")]
fn as_f32<T: Scalar>(s: &[T]) -> Option<&[f32]> {
    // SAFETY: T is f32 by the TypeId check, so the layouts are identical.
    (TypeId::of::<T>() == TypeId::of::<f32>()).then(|| unsafe { &*(s as *const [T] as *const [f32]) })
}

#[cfg(target_arch = "x86_64")]
fn as_f32_mut<T: Scalar>(s: &mut [T]) -> Option<&mut [f32]> {
    // SAFETY: as in `as_f32`.
    (TypeId::of::<T>() == TypeId::of::<f32>()).then(|| unsafe { &mut *(s as *mut [T] as *mut [f32]) })
}


/// Zero-padded copy of `C` planes of `h x w`.
struct Padded<T> {
    data: Vec<T>,
    channels: usize,
    /// Padded plane height.
    hp: usize,
    /// Padded plane width (without the lane tail).
    wp: usize,
    /// Row stride, `wp + LANES`.
    stride: usize,
}

impl<T: Scalar> Padded<T> {
    fn new(x: &[T], channels: usize, h: usize, w: usize, pad: usize) -> Self {
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let stride = wp + LANES;
        let mut data = vec![T::zero(); channels * hp * stride];
        for c in 0..channels {
            for y in 0..h {
                let dst = (c * hp + y + pad) * stride + pad;
                data[dst..dst + w].copy_from_slice(&x[(c * h + y) * w..(c * h + y + 1) * w]);
            }
        }
        Self {
            data,
            channels,
            hp,
            wp,
            stride,
        }
    }

    #[inline]
    fn row(&self, c: usize, y: usize) -> &[T] {
        let start = (c * self.hp + y) * self.stride;
        &self.data[start..start + self.stride]
    }
}

/// Weights rearranged as `[co_block][ci][tap][CO_BLOCK]`, zero-filled past `cout`.
fn pack_weights<T: Scalar>(w: &[T], cout: usize, cin: usize, k: usize, flip_transpose: bool) -> Vec<T> {
    let taps = k * k;
    let blocks = cout.div_ceil(CO_BLOCK);
    let mut out = vec![T::zero(); blocks * cin * taps * CO_BLOCK];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..taps {
                let v = if flip_transpose {
                    // `w` is stored as [ci][co][tap] of the forward kernel
                    // (forward cout = cin here); flip the tap index.
                    w[(ci * cout + co) * taps + (taps - 1 - t)]
                } else {
                    w[(co * cin + ci) * taps + t]
                };
                out[(((co / CO_BLOCK) * cin + ci) * taps + t) * CO_BLOCK + co % CO_BLOCK] = v;
            }
        }
    }
    out
}

/// Valid cross-correlation of a padded input with `cout` kernels of size
/// `k x k`. Writes `cout x ho x wo` into `out`.
fn correlate<T: Scalar>(x: &Padded<T>, packed: &[T], cout: usize, k: usize, out: &mut [T]) {
    let cin = x.channels;
    let ho = x.hp + 1 - k;
    let wo = x.wp + 1 - k;
    let taps = k * k;
    #[cfg(target_arch = "x86_64")]
    if let Some(isa) = x86::Isa::detect() {
        if let (Some(xd), Some(pk), Some(o)) = (as_f32(&x.data), as_f32(packed), as_f32_mut(&mut *out)) {
            isa.correlate(xd, cin, x.hp, x.stride, pk, cout, k, wo, o);
            return;
        }
    }
    for cob in 0..cout.div_ceil(CO_BLOCK) {
        let nb = CO_BLOCK.min(cout - cob * CO_BLOCK);
        let wblock = &packed[cob * cin * taps * CO_BLOCK..(cob + 1) * cin * taps * CO_BLOCK];
        for y in 0..ho {
            let mut x0 = 0;
            while x0 < wo {
                let width = LANES.min(wo - x0);
                // acc[lane][channel]: the channel axis is contiguous so each
                // update is one vector FMA with a broadcast input value.
                let mut acc = [[T::zero(); CO_BLOCK]; LANES];
                for ci in 0..cin {
                    let wci = &wblock[ci * taps * CO_BLOCK..(ci + 1) * taps * CO_BLOCK];
                    for ky in 0..k {
                        let row = x.row(ci, y + ky);
                        for kx in 0..k {
                            let src: &[T; LANES] = row[x0 + kx..x0 + kx + LANES].try_into().unwrap();
                            let wt: &[T; CO_BLOCK] = wci[(ky * k + kx) * CO_BLOCK..(ky * k + kx + 1) * CO_BLOCK]
                                .try_into()
                                .unwrap();
                            for (a, &sv) in acc.iter_mut().zip(src) {
                                for (ab, &wv) in a.iter_mut().zip(wt) {
                                    *ab = sv.mul_add(wv, *ab);
                                }
                            }
                        }
                    }
                }
                for b in 0..nb {
                    let co = cob * CO_BLOCK + b;
                    let dst = (co * ho + y) * wo + x0;
                    for (l, o) in out[dst..dst + width].iter_mut().enumerate() {
                        *o = acc[l][b];
                    }
                }
                x0 += LANES;
            }
        }
    }
}

/// Forward pass for one item: `x` is `cin x h x w`, `out` is `cout x ho x wo`
/// and must already hold the bias (it is accumulated onto).
pub(crate) fn forward<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, weight: &[T], cout: usize, k: usize, pad: usize, out: &mut [T]) {
    let padded = Padded::new(x, cin, h, w, pad);
    let packed = pack_weights(weight, cout, cin, k, false);
    let mut tmp = vec![T::zero(); out.len()];
    correlate(&padded, &packed, cout, k, &mut tmp);
    for (o, t) in out.iter_mut().zip(tmp) {
        *o = *o + t;
    }
}

/// Gradient with respect to the input for one item, given the output
/// gradient `gy` (`cout x ho x wo`). Accumulates into `gx` (`cin x h x w`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_input<T: Scalar>(gy: &[T], cout: usize, ho: usize, wo: usize, weight: &[T], cin: usize, k: usize, pad: usize, gx: &mut [T]) {
    let back_pad = k - 1 - pad;
    let padded = Padded::new(gy, cout, ho, wo, back_pad);
    let packed = pack_weights(weight, cin, cout, k, true);
    let mut tmp = vec![T::zero(); gx.len()];
    correlate(&padded, &packed, cin, k, &mut tmp);
    for (o, t) in gx.iter_mut().zip(tmp) {
        *o = *o + t;
    }
}

/// Weight gradient for one item, accumulated into `gw` (`cout x cin x k x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_weight<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, gy: &[T], cout: usize, k: usize, pad: usize, gw: &mut [T]) {
    let padded = Padded::new(x, cin, h, w, pad);
    let ho = padded.hp + 1 - k;
    let wo = padded.wp + 1 - k;
    let chunks = wo.div_ceil(LANES);
    let gstride = chunks * LANES;
    // Output gradient rows padded to whole chunks with zeros.
    let mut gpad = vec![T::zero(); cout.div_ceil(CO_BLOCK) * CO_BLOCK * ho * gstride];
    for co in 0..cout {
        for y in 0..ho {
            let dst = (co * ho + y) * gstride;
            gpad[dst..dst + wo].copy_from_slice(&gy[(co * ho + y) * wo..(co * ho + y + 1) * wo]);
        }
    }
    #[cfg(target_arch = "x86_64")]
    if let Some(isa) = x86::Isa::detect() {
        if let (Some(xd), Some(gd), Some(o)) = (as_f32(&padded.data), as_f32(&gpad), as_f32_mut(&mut *gw)) {
            isa.weight_grad(xd, cin, padded.hp, padded.stride, gd, cout, k, gstride, o);
            return;
        }
    }
    for cob in 0..cout.div_ceil(CO_BLOCK) {
        let nb = CO_BLOCK.min(cout - cob * CO_BLOCK);
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = [[T::zero(); LANES]; CO_BLOCK];
                    for y in 0..ho {
                        let row = padded.row(ci, y + ky);
                        for c in 0..chunks {
                            let x0 = c * LANES;
                            let src: &[T; LANES] = row[x0 + kx..x0 + kx + LANES].try_into().unwrap();
                            for (b, a) in acc.iter_mut().enumerate() {
                                let g0 = ((cob * CO_BLOCK + b) * ho + y) * gstride + x0;
                                let g: &[T; LANES] = gpad[g0..g0 + LANES].try_into().unwrap();
                                for l in 0..LANES {
                                    a[l] = g[l].mul_add(src[l], a[l]);
                                }
                            }
                        }
                    }
                    for (b, a) in acc.iter().enumerate().take(nb) {
                        let co = cob * CO_BLOCK + b;
                        let idx = ((co * cin + ci) * k + ky) * k + kx;
                        let mut s = T::zero();
                        for &v in a {
                            s = s + v;
                        }
                        gw[idx] = gw[idx] + s;
                    }
                }
            }
        }
    }
}
