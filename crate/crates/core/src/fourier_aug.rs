//! Fourier style augmentation: amplitude spectra of two images are mixed
//! inside a centred low-frequency window while the phase of the first image
//! is kept, so low-level appearance changes and structure does not.
//!
//! Images are `H x W` or `C x H x W` tensors with power-of-two extents.
//! Transforms run in `f64` regardless of the input precision.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor_core::{Rng, Scalar, Tensor};

/// Shared Beta parameter and mask extent.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// Largest imaginary part tolerated when reconstructing a real image.
const RESIDUE_LIMIT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// DC at index `(0, 0)`, as produced by the FFT.
    DcCorner,
    /// DC at `(H/2, W/2)`.
    DcCentered,
}

/// Per-channel 2D spectrum, stored as `C x H x W` real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    re: Tensor<f64>,
    im: Tensor<f64>,
    layout: Layout,
}

/// Amplitude and phase planes of a spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Polar {
    pub amplitude: Tensor<f64>,
    pub phase: Tensor<f64>,
    pub layout: Layout,
}

/// Binary `H x W` window in DC-centred layout, shared by all channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

fn image_dims<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op,
                detail: format!("expected H x W or C x H x W, got {:?}", x.shape()),
            })
        }
    };
    if !h.is_power_of_two() || !w.is_power_of_two() || c == 0 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("extents must be powers of two, got {h}x{w}"),
        });
    }
    Ok((c, h, w))
}

/// In-place 2D transform of every `h x w` plane of `buf`.
fn transform(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut column = vec![Complex64::default(); h];
    for plane in buf.chunks_exact_mut(h * w) {
        row.process(plane);
        for x in 0..w {
            for (y, c) in column.iter_mut().enumerate() {
                *c = plane[y * w + x];
            }
            col.process(&mut column);
            for (y, c) in column.iter().enumerate() {
                plane[y * w + x] = *c;
            }
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Cyclic shift of every plane by half its extents. For even extents this is
/// its own inverse, which covers every power of two above one.
fn half_shift(t: &Tensor<f64>) -> Tensor<f64> {
    let [c, h, w] = *t.shape() else { unreachable!("spectra are rank 3") };
    let (dy, dx) = (h / 2, w / 2);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for p in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(p * h + (y + dy) % h) * w + (x + dx) % w] = src[(p * h + y) * w + x];
            }
        }
    }
    Tensor::from_vec(t.shape(), out).expect("shape preserved")
}

/// Per-channel 2D DFT, `F(u, v) = sum x(h, w) exp(-2 pi i (hu/H + wv/W))`.
/// The result is in DC-corner layout.
pub fn fft2d<T: Scalar>(x: &Tensor<T>) -> Result<ComplexSpectrum> {
    let (c, h, w) = image_dims(x, "fft2d")?;
    let mut buf: Vec<Complex64> = x.data().iter().map(|v| Complex64::new(v.as_f64(), 0.0)).collect();
    transform(&mut buf, h, w, false);
    ComplexSpectrum::from_complex(&[c, h, w], &buf, Layout::DcCorner)
}

/// Inverse transform; returns the real and imaginary spatial planes.
pub fn ifft2d(s: &ComplexSpectrum) -> (Tensor<f64>, Tensor<f64>) {
    let corner = s.to_layout(Layout::DcCorner);
    let [_, h, w] = *corner.re.shape() else { unreachable!("spectra are rank 3") };
    let mut buf = corner.to_complex();
    transform(&mut buf, h, w, true);
    let shape = corner.re.shape();
    let re = Tensor::from_vec(shape, buf.iter().map(|v| v.re).collect()).expect("shape preserved");
    let im = Tensor::from_vec(shape, buf.iter().map(|v| v.im).collect()).expect("shape preserved");
    (re, im)
}

impl ComplexSpectrum {
    pub fn new(re: Tensor<f64>, im: Tensor<f64>, layout: Layout) -> Result<Self> {
        re.ensure_same_shape(&im, "ComplexSpectrum::new")?;
        image_dims(&re, "ComplexSpectrum::new")?;
        let (re, im) = if re.rank() == 2 {
            let shape = [1, re.shape()[0], re.shape()[1]];
            (re.reshape(&shape)?, im.reshape(&shape)?)
        } else {
            (re, im)
        };
        Ok(Self { re, im, layout })
    }

    fn from_complex(shape: &[usize], buf: &[Complex64], layout: Layout) -> Result<Self> {
        Ok(Self {
            re: Tensor::from_vec(shape, buf.iter().map(|v| v.re).collect())?,
            im: Tensor::from_vec(shape, buf.iter().map(|v| v.im).collect())?,
            layout,
        })
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect()
    }

    /// `C x H x W`.
    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn re(&self) -> &Tensor<f64> {
        &self.re
    }

    pub fn im(&self) -> &Tensor<f64> {
        &self.im
    }

    pub fn to_layout(&self, layout: Layout) -> Self {
        if layout == self.layout {
            return self.clone();
        }
        Self {
            re: half_shift(&self.re),
            im: half_shift(&self.im),
            layout,
        }
    }

    pub fn amplitude(&self) -> Tensor<f64> {
        self.re.zip_map(&self.im, "amplitude", f64::hypot).expect("planes share a shape")
    }
}

/// Phase in `(-pi, pi]`; zero modulus maps to 0.
fn phase_of(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn decompose(s: &ComplexSpectrum) -> Polar {
    Polar {
        amplitude: s.amplitude(),
        phase: s.re.zip_map(&s.im, "phase", phase_of).expect("planes share a shape"),
        layout: s.layout,
    }
}

impl Polar {
    pub fn to_spectrum(&self) -> Result<ComplexSpectrum> {
        self.amplitude.ensure_same_shape(&self.phase, "recompose")?;
        let re = self.amplitude.zip_map(&self.phase, "recompose", |a, p| a * p.cos())?;
        let im = self.amplitude.zip_map(&self.phase, "recompose", |a, p| a * p.sin())?;
        ComplexSpectrum::new(re, im, self.layout)
    }
}

impl MixMask {
    /// Window of offsets `-b..=b` around DC with `b = floor(alpha * extent)`,
    /// clipped to the plane.
    pub fn centered(height: usize, width: usize, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let (by, bx) = ((alpha * height as f64).floor() as usize, (alpha * width as f64).floor() as usize);
        let (cy, cx) = (height / 2, width / 2);
        let rows = cy.saturating_sub(by)..(cy + by + 1).min(height);
        let cols = cx.saturating_sub(bx)..(cx + bx + 1).min(width);
        let values = (0..height * width)
            .map(|i| rows.contains(&(i / width)) && cols.contains(&(i % width)))
            .collect();
        Ok(Self { height, width, values })
    }

    /// Arbitrary mask from a row-major plane.
    pub fn from_plane(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidShape {
                op: "MixMask::from_plane",
                detail: format!("{height}x{width} mask needs {} values, got {}", height * width, values.len()),
            });
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 0.5], got {alpha}")));
    }
    Ok(())
}

/// `(lambda * a_other + (1 - lambda) * a_self)` inside the mask, `a_self`
/// outside. Both amplitudes must be `C x H x W` in DC-centred layout.
pub fn mix_amplitudes(a_self: &Tensor<f64>, a_other: &Tensor<f64>, lambda: f64, mask: &MixMask) -> Result<Tensor<f64>> {
    a_self.ensure_same_shape(a_other, "mix_amplitudes")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let [_, h, w] = *a_self.shape() else {
        return Err(Error::InvalidShape {
            op: "mix_amplitudes",
            detail: format!("expected C x H x W, got {:?}", a_self.shape()),
        });
    };
    if (h, w) != (mask.height, mask.width) {
        return Err(Error::ShapeMismatch {
            op: "mix_amplitudes",
            left: a_self.shape().to_vec(),
            right: vec![mask.height, mask.width],
        });
    }
    let mut out = a_self.clone();
    for (i, (o, &other)) in out.data_mut().iter_mut().zip(a_other.data()).enumerate() {
        if mask.values[i % (h * w)] {
            *o = lambda * other + (1.0 - lambda) * *o;
        }
    }
    Ok(out)
}

/// Inverse transform of `amplitude * exp(i * phase)`, clamped to `[-1, 1]`.
///
/// Fails if the reconstruction is not real up to round-off, which happens
/// when the amplitude lost its conjugate symmetry.
pub fn recompose_to_image(amplitude: &Tensor<f64>, phase: &Tensor<f64>, layout: Layout) -> Result<Tensor<f64>> {
    let spectrum = Polar {
        amplitude: amplitude.clone(),
        phase: phase.clone(),
        layout,
    }
    .to_spectrum()?;
    let (re, im) = ifft2d(&spectrum);
    let residue = im.max_abs();
    if residue > RESIDUE_LIMIT {
        return Err(Error::Consistency(format!(
            "inverse transform left an imaginary residue of {residue:.3e}"
        )));
    }
    Ok(re.map(|v| v.clamp(-1.0, 1.0)))
}

/// Replaces the low-frequency amplitude of `x` with a `lambda`-mix of the
/// amplitudes of `x` and `x_other`, keeping the phase of `x`.
pub fn augment_with_lambda<T: Scalar>(x: &Tensor<T>, x_other: &Tensor<T>, lambda: f64, alpha: f64) -> Result<Tensor<T>> {
    x.ensure_same_shape(x_other, "augment")?;
    let (_, h, w) = image_dims(x, "augment")?;
    let mask = MixMask::centered(h, w, alpha)?;
    let own = decompose(&fft2d(x)?.to_layout(Layout::DcCentered));
    let other = fft2d(x_other)?.to_layout(Layout::DcCentered).amplitude();
    let mixed = mix_amplitudes(&own.amplitude, &other, lambda, &mask)?;
    let image = recompose_to_image(&mixed, &own.phase, Layout::DcCentered)?;
    Ok(image.reshape(x.shape())?.cast())
}

/// [`augment_with_lambda`] with `lambda ~ Beta(alpha, alpha)`.
pub fn augment<T: Scalar>(x: &Tensor<T>, x_other: &Tensor<T>, rng: &mut Rng, alpha: f64) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    let lambda = rng.beta(alpha, alpha)?;
    augment_with_lambda(x, x_other, lambda, alpha)
}

/// `ln(1 + amplitude)` rescaled to `[0, 1]` per channel, in DC-centred
/// layout, for viewing spectra as images.
pub fn log_amplitude_view(s: &ComplexSpectrum) -> Tensor<f64> {
    let centered = s.to_layout(Layout::DcCentered);
    let logs = centered.amplitude().map(f64::ln_1p);
    let [_, h, w] = *logs.shape() else { unreachable!("spectra are rank 3") };
    let mut out = logs.clone();
    for plane in out.data_mut().chunks_exact_mut(h * w) {
        let hi = plane.iter().copied().fold(0.0, f64::max);
        if hi > 0.0 {
            plane.iter_mut().for_each(|v| *v /= hi);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::Rng;
    use proptest::prelude::*;

    fn random_image(shape: &[usize], rng: &mut Rng, amp: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(-amp, amp)).collect()).unwrap()
    }

    /// Direct O(N^2) DFT of one plane.
    fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(h * w);
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * PI * ((y * u) as f64 / h as f64 + (xx * v) as f64 / w as f64);
                        re += x[y * w + xx] * ang.cos();
                        im += x[y * w + xx] * ang.sin();
                    }
                }
                out.push((re, im));
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = Rng::new(1, 0);
        let x = random_image(&[2, 8, 4], &mut rng, 1.0);
        let s = fft2d(&x).unwrap();
        for c in 0..2 {
            let want = naive_dft(&x.data()[c * 32..(c + 1) * 32], 8, 4);
            for (i, (re, im)) in want.into_iter().enumerate() {
                assert!((s.re().data()[c * 32 + i] - re).abs() < 1e-9);
                assert!((s.im().data()[c * 32 + i] - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_image_has_only_dc() {
        let x = Tensor::<f32>::full(&[16, 8], 0.25);
        let a = fft2d(&x).unwrap().amplitude();
        assert!((a.data()[0] - 0.25 * 128.0).abs() < 1e-5);
        assert!(a.data()[1..].iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft2d(&Tensor::<f32>::zeros(&[6, 8])).is_err());
        assert!(fft2d(&Tensor::<f32>::zeros(&[1, 2, 8, 8])).is_err());
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = Rng::new(2, 0);
        let x = random_image(&[64, 64], &mut rng, 1.0).cast::<f32>();
        let s = fft2d(&x).unwrap();
        let (re, im) = ifft2d(&s);
        assert!(re.cast::<f32>().reshape(&[64, 64]).unwrap().max_abs_diff(&x).unwrap() < 1e-5);
        assert!(im.max_abs() < 1e-5);

        let energy: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let spectral: f64 = s.amplitude().data().iter().map(|a| a * a).sum::<f64>() / 4096.0;
        assert!((energy - spectral).abs() / energy < 1e-5);
    }

    #[test]
    fn shift_moves_dc_to_centre() {
        let x = Tensor::<f64>::full(&[8, 4], 1.0);
        let c = fft2d(&x).unwrap().to_layout(Layout::DcCentered);
        assert_eq!(c.layout(), Layout::DcCentered);
        assert!((c.re().data()[4 * 4 + 2] - 32.0).abs() < 1e-12);
        let back = c.to_layout(Layout::DcCorner);
        assert_eq!(back, fft2d(&x).unwrap());
    }

    #[test]
    fn polar_cases() {
        assert_eq!(phase_of(0.0, 1.0), PI / 2.0);
        assert_eq!(phase_of(-1.0, 0.0), PI);
        assert_eq!(phase_of(-1.0, -0.0), PI);
        assert_eq!(phase_of(0.0, 0.0), 0.0);
        assert_eq!(phase_of(-0.0, -0.0), 0.0);
        let s = ComplexSpectrum::new(
            Tensor::from_vec(&[1, 2], vec![0.0, -1.0]).unwrap(),
            Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap(),
            Layout::DcCorner,
        )
        .unwrap();
        let p = decompose(&s);
        assert_eq!(p.amplitude.data(), &[1.0, 1.0]);
        assert_eq!(p.phase.data(), &[PI / 2.0, PI]);
    }

    #[test]
    fn mask_window() {
        let m = MixMask::centered(64, 32, 0.1).unwrap();
        // b = 6 rows and 3 columns either side of DC.
        assert_eq!(m.count(), 13 * 7);
        assert!(m.get(32, 16) && m.get(26, 13) && m.get(38, 19));
        assert!(!m.get(25, 16) && !m.get(39, 16) && !m.get(32, 12) && !m.get(32, 20));
        assert_eq!(MixMask::centered(8, 8, 0.5).unwrap().count(), 64);
        assert_eq!(MixMask::centered(8, 8, 0.01).unwrap().count(), 1);
        for bad in [0.0, -0.1, 0.51, f64::NAN] {
            assert!(MixMask::centered(8, 8, bad).is_err());
        }
    }

    #[test]
    fn mix_identities() {
        let mut rng = Rng::new(3, 0);
        let a = random_image(&[2, 8, 8], &mut rng, 1.0).map(f64::abs);
        let b = random_image(&[2, 8, 8], &mut rng, 1.0).map(f64::abs);
        let mask = MixMask::centered(8, 8, 0.25).unwrap();
        assert_eq!(mix_amplitudes(&a, &b, 0.0, &mask).unwrap(), a);
        let none = MixMask::from_plane(8, 8, vec![false; 64]).unwrap();
        assert_eq!(mix_amplitudes(&a, &b, 0.7, &none).unwrap(), a);
        let all = MixMask::from_plane(8, 8, vec![true; 64]).unwrap();
        assert_eq!(mix_amplitudes(&a, &b, 1.0, &all).unwrap(), b);
        assert!(mix_amplitudes(&a, &b, 1.5, &mask).is_err());
        assert!(mix_amplitudes(&a, &Tensor::zeros(&[1, 8, 8]), 0.5, &mask).is_err());
    }

    #[test]
    fn recompose_round_trip_and_double_swap() {
        let mut rng = Rng::new(4, 0);
        let x = random_image(&[16, 16], &mut rng, 0.9);
        let p = decompose(&fft2d(&x).unwrap());
        let back = recompose_to_image(&p.amplitude, &p.phase, p.layout).unwrap();
        assert!(back.reshape(&[16, 16]).unwrap().max_abs_diff(&x).unwrap() < 1e-5);

        let a = random_image(&[8, 8], &mut rng, 0.3);
        let b = random_image(&[8, 8], &mut rng, 0.3);
        let (pa, pb) = (decompose(&fft2d(&a).unwrap()), decompose(&fft2d(&b).unwrap()));
        let a1 = recompose_to_image(&pb.amplitude, &pa.phase, Layout::DcCorner).unwrap();
        let b1 = recompose_to_image(&pa.amplitude, &pb.phase, Layout::DcCorner).unwrap();
        let (qa, qb) = (decompose(&fft2d(&a1).unwrap()), decompose(&fft2d(&b1).unwrap()));
        let a2 = recompose_to_image(&qb.amplitude, &qa.phase, Layout::DcCorner).unwrap();
        let b2 = recompose_to_image(&qa.amplitude, &qb.phase, Layout::DcCorner).unwrap();
        assert!(a1.max_abs() < 1.0 && b1.max_abs() < 1.0, "clamp must not engage");
        assert!(a2.reshape(&[8, 8]).unwrap().max_abs_diff(&a).unwrap() < 1e-4);
        assert!(b2.reshape(&[8, 8]).unwrap().max_abs_diff(&b).unwrap() < 1e-4);
    }

    #[test]
    fn asymmetric_amplitude_is_a_consistency_error() {
        let mut rng = Rng::new(5, 0);
        let x = random_image(&[8, 8], &mut rng, 1.0);
        let mut p = decompose(&fft2d(&x).unwrap());
        p.amplitude.data_mut()[1] += 5.0;
        assert!(matches!(
            recompose_to_image(&p.amplitude, &p.phase, p.layout),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn identity_family() {
        let mut rng = Rng::new(6, 0);
        let x = random_image(&[1, 32, 32], &mut rng, 0.8).cast::<f32>();
        let y = random_image(&[1, 32, 32], &mut rng, 0.8).cast::<f32>();
        assert!(augment_with_lambda(&x, &y, 0.0, 0.1).unwrap().max_abs_diff(&x).unwrap() < 1e-4);
        for _ in 0..5 {
            assert!(augment(&x, &x, &mut rng, 0.1).unwrap().max_abs_diff(&x).unwrap() < 1e-4);
        }
        assert!(augment(&x, &y, &mut rng, 0.7).is_err());
    }

    #[test]
    fn augment_is_seeded() {
        let mut rng = Rng::new(7, 0);
        let x = random_image(&[32, 32], &mut rng, 0.5);
        let y = random_image(&[32, 32], &mut rng, 0.5);
        let a = augment(&x, &y, &mut Rng::new(9, 1), DEFAULT_ALPHA).unwrap();
        let b = augment(&x, &y, &mut Rng::new(9, 1), DEFAULT_ALPHA).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[32, 32]);
    }

    #[test]
    fn log_view_is_normalised() {
        let mut rng = Rng::new(8, 0);
        let v = log_amplitude_view(&fft2d(&random_image(&[2, 16, 16], &mut rng, 1.0)).unwrap());
        for plane in v.data().chunks(256) {
            assert_eq!(plane.iter().copied().fold(0.0, f64::max), 1.0);
            assert!(plane.iter().all(|&p| p >= 0.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn polar_round_trip(seed in any::<u64>()) {
            let mut rng = Rng::new(seed, 0);
            let re = random_image(&[1, 8, 8], &mut rng, 10.0);
            let im = random_image(&[1, 8, 8], &mut rng, 10.0);
            let s = ComplexSpectrum::new(re, im, Layout::DcCorner).unwrap();
            let back = decompose(&s).to_spectrum().unwrap();
            prop_assert!(back.re().max_abs_diff(s.re()).unwrap() < 1e-6);
            prop_assert!(back.im().max_abs_diff(s.im()).unwrap() < 1e-6);
        }

        #[test]
        fn phase_is_preserved(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
            let mut rng = Rng::new(seed, 0);
            // Half-range inputs keep the output clear of the clamp, which
            // would otherwise alter the spectrum.
            let x = random_image(&[32, 32], &mut rng, 0.5);
            let y = random_image(&[32, 32], &mut rng, 0.5);
            let out = augment_with_lambda(&x, &y, lambda, 0.1).unwrap();
            prop_assert!(out.max_abs() < 1.0);
            let (px, po) = (decompose(&fft2d(&x).unwrap()), decompose(&fft2d(&out).unwrap()));
            let floor = 1e-6 * px.amplitude.max_value();
            for ((&a, &p0), &p1) in px.amplitude.data().iter().zip(px.phase.data()).zip(po.phase.data()) {
                if a > floor {
                    let d = (p0 - p1).abs();
                    prop_assert!(d.min(2.0 * PI - d) < 1e-3);
                }
            }
        }

        #[test]
        fn mixing_is_local_and_convex(seed in any::<u64>(), lambda in 0.0f64..=1.0, alpha in 0.01f64..=0.5) {
            let mut rng = Rng::new(seed, 0);
            let a = fft2d(&random_image(&[2, 16, 16], &mut rng, 1.0)).unwrap().to_layout(Layout::DcCentered).amplitude();
            let b = fft2d(&random_image(&[2, 16, 16], &mut rng, 1.0)).unwrap().to_layout(Layout::DcCentered).amplitude();
            let mask = MixMask::centered(16, 16, alpha).unwrap();
            let m = mix_amplitudes(&a, &b, lambda, &mask).unwrap();
            for i in 0..m.len() {
                let (y, x) = ((i / 16) % 16, i % 16);
                let (lo, hi) = (a.data()[i].min(b.data()[i]), a.data()[i].max(b.data()[i]));
                if mask.get(y, x) {
                    prop_assert!(m.data()[i] >= lo - 1e-12 && m.data()[i] <= hi + 1e-12);
                } else {
                    prop_assert_eq!(m.data()[i].to_bits(), a.data()[i].to_bits());
                }
            }
        }
    }
}
