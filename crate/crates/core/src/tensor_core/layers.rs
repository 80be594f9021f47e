//! Network layer primitives with exact reverse-mode gradients.
//!
//! All spatial operations take `N x C x H x W` inputs.

use super::{conv, Rng, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Lower probability bound applied by [`sigmoid`]; the upper bound is `1 - PROB_EPS`.
pub const PROB_EPS: f64 = 1e-7;

/// 2D cross-correlation with zero padding and unit stride.
///
/// `kernel` is `Cout x Cin x k x k` with odd `k`, `bias` has `Cout` entries.
/// With `padding = (k - 1) / 2` the spatial extent is preserved.
pub fn conv2d<T: Scalar>(input: &Var<T>, kernel: &Var<T>, bias: &Var<T>, padding: usize) -> Result<Var<T>> {
    let (n, cin, h, w) = input.value().dims4("conv2d")?;
    let (cout, kcin, k, k2) = kernel.value().dims4("conv2d kernel")?;
    if kcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: format!("kernel must be square with odd extent, got {k}x{k2}"),
        });
    }
    if bias.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: vec![cout],
            right: bias.shape().to_vec(),
        });
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: format!("{h}x{w} input too small for kernel {k} with padding {padding}"),
        });
    }
    let (ho, wo) = (h + 2 * padding + 1 - k, w + 2 * padding + 1 - k);
    let (isz, osz) = (cin * h * w, cout * ho * wo);
    let x = input.value().data();
    let wt = kernel.value().data();
    let b = bias.value().data();
    let mut out = vec![T::zero(); n * osz];
    for i in 0..n {
        let y = &mut out[i * osz..(i + 1) * osz];
        for (co, plane) in y.chunks_mut(ho * wo).enumerate() {
            plane.fill(b[co]);
        }
        conv::forward(&x[i * isz..(i + 1) * isz], cin, h, w, wt, cout, k, padding, y);
    }

    Ok(Var::from_op(
        Tensor::from_vec(&[n, cout, ho, wo], out)?,
        &[input, kernel, bias],
        Box::new(move |g, parents, _| {
            let gy = g.data();
            let x = parents[0].value().data();
            let wt = parents[1].value().data();
            let need_input = parents[0].requires_grad();
            let mut gw = vec![T::zero(); cout * cin * k * k];
            let mut gb = vec![T::zero(); cout];
            let mut gx = if need_input { vec![T::zero(); n * isz] } else { Vec::new() };
            for i in 0..n {
                let gyi = &gy[i * osz..(i + 1) * osz];
                for (co, plane) in gyi.chunks(ho * wo).enumerate() {
                    gb[co] = gb[co] + plane.iter().copied().sum::<T>();
                }
                if parents[1].requires_grad() {
                    conv::backward_weight(&x[i * isz..(i + 1) * isz], cin, h, w, gyi, cout, k, padding, &mut gw);
                }
                if need_input {
                    conv::backward_input(gyi, cout, ho, wo, wt, cin, k, padding, &mut gx[i * isz..(i + 1) * isz]);
                }
            }
            let gx = if need_input {
                Some(Tensor::from_vec(&[n, cin, h, w], gx)?)
            } else {
                None
            };
            Ok(vec![
                gx,
                Some(Tensor::from_vec(&[cout, cin, k, k], gw)?),
                Some(Tensor::from_vec(&[cout], gb)?),
            ])
        }),
    ))
}

/// 2x2 max pooling with stride 2. Gradient goes to the first maximum in
/// row-major window order. NaN wins, so it is never silently dropped.
pub fn maxpool2<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = input.value().dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "maxpool2",
            detail: format!("spatial extents must be even, got {h}x{w}"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.value().data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] || x[idx].is_nan() {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok(Var::from_op(
        Tensor::from_vec(&[n, c, ho, wo], out)?,
        &[input],
        Box::new(move |g, parents, _| {
            let mut gx = Tensor::zeros(parents[0].shape());
            let d = gx.data_mut();
            for (&idx, &gv) in arg.iter().zip(g.data()) {
                d[idx] = d[idx] + gv;
            }
            Ok(vec![Some(gx)])
        }),
    ))
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_nearest<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = input.value().dims4("upsample2_nearest")?;
    let (ho, wo) = (2 * h, 2 * w);
    let x = input.value().data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for (srow, pair) in src.chunks_exact(w).zip(dst.chunks_exact_mut(2 * wo)) {
            let (top, bottom) = pair.split_at_mut(wo);
            for (d, &v) in top.chunks_exact_mut(2).zip(srow) {
                d.fill(v);
            }
            bottom.copy_from_slice(top);
        }
    }
    Ok(Var::from_op(
        Tensor::from_vec(&[n, c, ho, wo], out)?,
        &[input],
        Box::new(move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); n * c * h * w];
            for plane in 0..n * c {
                let src = &gd[plane * ho * wo..(plane + 1) * ho * wo];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for (drow, pair) in dst.chunks_exact_mut(w).zip(src.chunks_exact(2 * wo)) {
                    let (top, bottom) = pair.split_at(wo);
                    for ((d, t), b) in drow.iter_mut().zip(top.chunks_exact(2)).zip(bottom.chunks_exact(2)) {
                        *d = (t[0] + t[1]) + (b[0] + b[1]);
                    }
                }
            }
            Ok(vec![Some(Tensor::from_vec(&[n, c, h, w], gx)?)])
        }),
    ))
}

/// Concatenate two `N x C x H x W` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (n, ca, h, w) = a.value().dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.value().dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (sa + sb));
    for i in 0..n {
        out.extend_from_slice(&a.value().data()[i * sa..(i + 1) * sa]);
        out.extend_from_slice(&b.value().data()[i * sb..(i + 1) * sb]);
    }
    Ok(Var::from_op(
        Tensor::from_vec(&[n, ca + cb, h, w], out)?,
        &[a, b],
        Box::new(move |g, _, _| {
            let gd = g.data();
            let mut ga = Vec::with_capacity(n * sa);
            let mut gb = Vec::with_capacity(n * sb);
            for i in 0..n {
                let item = &gd[i * (sa + sb)..(i + 1) * (sa + sb)];
                ga.extend_from_slice(&item[..sa]);
                gb.extend_from_slice(&item[sa..]);
            }
            Ok(vec![
                Some(Tensor::from_vec(&[n, ca, h, w], ga)?),
                Some(Tensor::from_vec(&[n, cb, h, w], gb)?),
            ])
        }),
    ))
}

pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let value = x.value().map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
    Var::from_op(
        value,
        &[x],
        Box::new(|g, parents, _| {
            Ok(vec![Some(g.zip_map(parents[0].value(), "relu_backward", |g, x| {
                if x > T::zero() {
                    g
                } else {
                    T::zero()
                }
            })?)])
        }),
    )
}

/// Logistic sigmoid, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    let (lo, hi) = (T::of(PROB_EPS), T::of(1.0 - PROB_EPS));
    let raw = x.value().map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    });
    let clamped = raw.map(|s| if s.is_nan() { s } else { s.max(lo).min(hi) });
    Var::from_op(
        clamped,
        &[x],
        Box::new(move |g, _, _| {
            let mut gx = g.clone();
            for (o, &s) in gx.data_mut().iter_mut().zip(raw.data()) {
                *o = if s < lo || s > hi { T::zero() } else { *o * s * (T::one() - s) };
            }
            Ok(vec![Some(gx)])
        }),
    )
}

/// Inverted dropout: zero each element with probability `rate` and scale the
/// survivors by `1 / (1 - rate)`. Identity when disabled.
pub fn dropout<T: Scalar>(x: &Var<T>, rate: f64, rng: &mut Rng, enabled: bool) -> Result<Var<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !enabled || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = T::of(1.0 / (1.0 - rate));
    // P(u64 draw < threshold) = rate, up to 2^-64.
    let threshold = (rate * 2f64.powi(64)) as u64;
    let mask: Vec<T> = (0..x.value().len())
        .map(|_| if rng.next_u64() < threshold { T::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask)?;
    let value = x.value().zip_map(&mask, "dropout", |v, m| v * m)?;
    Ok(Var::from_op(
        value,
        &[x],
        Box::new(move |g, _, _| Ok(vec![Some(g.zip_map(&mask, "dropout_backward", |g, m| g * m)?)])),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::param(Tensor::from_f64(shape, data).unwrap())
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (n, cin, h, w) = x.dims4("").unwrap();
        let (cout, _, ks, _) = k.dims4("").unwrap();
        let (ho, wo) = (h + 2 * pad + 1 - ks, w + 2 * pad + 1 - ks);
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for i in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..ks {
                                for kx in 0..ks {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    let ix = ox as isize + kx as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()[((i * cin + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((co * cin + ci) * ks + ky) * ks + kx];
                                }
                            }
                        }
                        out.data_mut()[((i * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(1, 0);
        let x = Var::constant(random(&[2, 1, 5, 6], &mut rng));
        let k = Var::constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = Var::constant(Tensor::zeros(&[1]));
        let y = conv2d(&x, &k, &b, 0).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = Rng::new(2, 0);
        let x = Var::constant(random(&[1, 2, 4, 4], &mut rng));
        let k = Var::constant(Tensor::zeros(&[3, 2, 3, 3]));
        let b = Var::constant(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
        let y = conv2d(&x, &k, &b, 1).unwrap();
        for (co, plane) in y.value().data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == b.value().data()[co]));
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Rng::new(3, 0);
        let x = random(&[1, 1, 4, 4], &mut rng);
        let k = random(&[1, 1, 3, 3], &mut rng);
        let b = random(&[1], &mut rng);
        let got = conv2d(&Var::constant(x.clone()), &Var::constant(k.clone()), &Var::constant(b.clone()), 1).unwrap();
        assert!(got.value().max_abs_diff(&naive_conv(&x, &k, &b, 1)).unwrap() < 1e-6);

        for (shape, ks, pad) in [([2, 3, 6, 5], 3, 1), ([1, 2, 7, 7], 5, 2), ([2, 2, 6, 6], 3, 0)] {
            let x = random(&shape, &mut rng);
            let k = random(&[4, shape[1], ks, ks], &mut rng);
            let b = random(&[4], &mut rng);
            let got = conv2d(&Var::constant(x.clone()), &Var::constant(k.clone()), &Var::constant(b.clone()), pad).unwrap();
            assert!(got.value().max_abs_diff(&naive_conv(&x, &k, &b, pad)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn f32_conv_matches_f64_reference() {
        // Exercises the vectorised f32 kernels, including partial channel
        // blocks and rows that are not a multiple of the register width.
        let mut rng = Rng::new(8, 0);
        for (shape, cout, ks, pad) in [([2, 3, 9, 20], 10, 3, 1), ([1, 8, 16, 16], 8, 1, 0), ([2, 5, 11, 13], 3, 5, 2)] {
            let x = random(&shape, &mut rng);
            let k = random(&[cout, shape[1], ks, ks], &mut rng);
            let b = random(&[cout], &mut rng);
            let run64 = || {
                let vars = [Var::param(x.clone()), Var::param(k.clone()), Var::param(b.clone())];
                let y = conv2d(&vars[0], &vars[1], &vars[2], pad).unwrap();
                y.mul(&y).unwrap().sum().backward().unwrap();
                (y.value().clone(), vars.map(|v| v.grad().unwrap()))
            };
            let vars = [Var::param(x.cast::<f32>()), Var::param(k.cast::<f32>()), Var::param(b.cast::<f32>())];
            let y = conv2d(&vars[0], &vars[1], &vars[2], pad).unwrap();
            y.mul(&y).unwrap().sum().backward().unwrap();
            let (y64, g64) = run64();
            let close = |a: &Tensor<f32>, b: &Tensor<f64>| {
                let scale = b.max_abs().max(1.0);
                a.cast::<f64>().max_abs_diff(b).unwrap() / scale
            };
            assert!(close(y.value(), &y64) < 1e-5);
            for (v, g) in vars.iter().zip(&g64) {
                assert!(close(&v.grad().unwrap(), g) < 1e-5);
            }
        }
    }

    #[test]
    fn conv_errors() {
        let x = Var::constant(Tensor::<f64>::zeros(&[1, 2, 4, 4]));
        let k = Var::constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = Var::constant(Tensor::zeros(&[1]));
        assert!(matches!(conv2d(&x, &k, &b, 1), Err(Error::ShapeMismatch { .. })));
        let k = Var::constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(conv2d(&x, &k, &b, 1).is_err());
    }

    #[test]
    fn pool_and_upsample() {
        let x = var(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2(&x).unwrap().value().data(), &[4.0]);
        let u = upsample2_nearest(&var(&[1, 1, 1, 1], &[5.0])).unwrap();
        assert_eq!(u.value().data(), &[5.0; 4]);
        assert_eq!(u.shape(), &[1, 1, 2, 2]);

        let mut rng = Rng::new(4, 0);
        let x = Var::constant(random(&[2, 3, 4, 6], &mut rng));
        let back = maxpool2(&upsample2_nearest(&x).unwrap()).unwrap();
        assert_eq!(back.value(), x.value());

        assert!(maxpool2(&var(&[1, 1, 3, 2], &[0.0; 6])).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = var(&[1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]);
        maxpool2(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn activations() {
        let x = var(&[2], &[0.0, -3.0]);
        assert_eq!(sigmoid(&x).value().data()[0], 0.5);
        assert_eq!(relu(&x).value().data(), &[0.0, 0.0]);

        let z = var(&[1], &[0.0]);
        sigmoid(&z).sum().backward().unwrap();
        let h: f64 = 1e-4;
        let fd = (1.0 / (1.0 + (-h).exp()) - 1.0 / (1.0 + h.exp())) / (2.0 * h);
        let g = z.grad().unwrap().data()[0];
        assert_eq!(g, 0.25);
        assert!((g - fd).abs() < 1e-4);

        let big = var(&[2], &[40.0, -40.0]);
        let s = sigmoid(&big);
        assert_eq!(s.value().data(), &[1.0 - PROB_EPS, PROB_EPS]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = Rng::new(5, 0);
        let x = Var::constant(random(&[1, 1, 4, 4], &mut rng));
        assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap().value(), x.value());
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap().value(), x.value());
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = Rng::new(6, 0);
        let x = Var::<f32>::constant(Tensor::ones(&[100_000]));
        let y = dropout(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.value().mean();
        assert!((0.98..=1.02).contains(&mean), "{mean}");
    }

    #[test]
    fn concat_roundtrip_gradients() {
        let a = var(&[1, 1, 1, 2], &[1.0, 2.0]);
        let b = var(&[1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Var::constant(Tensor::from_f64(&[1, 3, 1, 2], &[1., 2., 3., 4., 5., 6.]).unwrap());
        c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap().data(), &[1.0, 2.0]);
        assert_eq!(b.grad().unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
