//! Dice similarity and average surface distance on binary masks.

use crate::error::{Error, Result};
use crate::tensor_core::{Scalar, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidShape {
                op: "BinaryMask::new",
                detail: format!("{height}x{width} mask needs {} values, got {}", height * width, bits.len()),
            });
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Mask from `(row, col)` coordinates.
    pub fn from_pixels(height: usize, width: usize, pixels: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(height, width);
        for &(r, c) in pixels {
            if r >= height || c >= width {
                return Err(Error::InvalidArgument(format!("pixel ({r}, {c}) outside {height}x{width}")));
            }
            m.bits[r * width + c] = true;
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    /// Foreground pixels with at least one background 4-neighbour; pixels
    /// off the grid count as background. Row-major order.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.height, self.width);
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if !self.get(r, c) {
                    continue;
                }
                let edge = r == 0
                    || c == 0
                    || r + 1 == h
                    || c + 1 == w
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1);
                if edge {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// `1 x H x W` tensor of zeros and ones.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("length matches by construction")
    }

    fn ensure_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if (self.height, self.width) == (other.height, other.width) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: vec![self.height, self.width],
                right: vec![other.height, other.width],
            })
        }
    }
}

fn plane_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] | [1, h, w] => Ok((1, h, w)),
        [n, 1, h, w] => Ok((n, h, w)),
        _ => Err(Error::InvalidShape {
            op,
            detail: format!("expected H x W, 1 x H x W or N x 1 x H x W, got {shape:?}"),
        }),
    }
}

/// `p >= threshold` is foreground. Accepts a single plane.
pub fn binarize<T: Scalar>(p: &Tensor<T>, threshold: f64) -> Result<BinaryMask> {
    let mut masks = binarize_batch(p, threshold)?;
    if masks.len() != 1 {
        return Err(Error::InvalidShape {
            op: "binarize",
            detail: format!("expected a single plane, got {:?}", p.shape()),
        });
    }
    Ok(masks.remove(0))
}

/// One mask per item of an `N x 1 x H x W` batch (or a single plane).
pub fn binarize_batch<T: Scalar>(p: &Tensor<T>, threshold: f64) -> Result<Vec<BinaryMask>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let (n, h, w) = plane_dims(p.shape(), "binarize")?;
    let t = T::of(threshold);
    if h * w == 0 {
        return Ok(vec![BinaryMask::empty(h, w); n]);
    }
    Ok(p.data()
        .chunks(h * w)
        .map(|plane| BinaryMask {
            height: h,
            width: w,
            bits: plane.iter().map(|&v| v >= t).collect(),
        })
        .collect())
}

/// `2 |P & G| / (|P| + |G|)`, and 1 when both are empty.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.ensure_same_shape(gt, "dsc")?;
    let both = pred.bits.iter().zip(&gt.bits).filter(|(&a, &b)| a && b).count();
    let total = pred.count() + gt.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

fn nearest(from: (usize, usize), to: &[(usize, usize)]) -> f64 {
    to.iter()
        .map(|&(r, c)| {
            let dr = r as f64 - from.0 as f64;
            let dc = c as f64 - from.1 as f64;
            dr * dr + dc * dc
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Symmetric mean distance between the two boundaries, in pixels.
pub fn asd(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.ensure_same_shape(gt, "asd")?;
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::UndefinedMetric("average surface distance of an empty mask"));
    }
    let (bp, bg) = (pred.boundary(), gt.boundary());
    let sum: f64 = bp.iter().map(|&a| nearest(a, &bg)).sum::<f64>() + bg.iter().map(|&b| nearest(b, &bp)).sum::<f64>();
    Ok(sum / (bp.len() + bg.len()) as f64)
}
