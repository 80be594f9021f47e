//! Segmentation and consistency objectives on `N x 1 x H x W` probability
//! maps. Every per-sample loss is averaged over the batch.

use crate::error::{Error, Result};
use crate::tensor_core::{Scalar, Tensor, Var, PROB_EPS};
use crate::uncertainty::UncertaintyMap;

/// Guard added to the Dice denominator.
pub const DICE_EPS: f64 = 1e-7;
pub const DEFAULT_BETA: f64 = 200.0;

/// One named term of a loss and the weight it enters the total with.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: &'static str,
    pub value: f64,
    pub weight: f64,
}

/// Differentiable scalar loss plus the terms it was assembled from.
#[derive(Clone, Debug)]
pub struct LossValue<T: Scalar = f32> {
    pub value: Var<T>,
    pub breakdown: Vec<Component>,
}

impl<T: Scalar> LossValue<T> {
    fn single(name: &'static str, value: Var<T>) -> Self {
        let v = value.value().item().as_f64();
        Self {
            value,
            breakdown: vec![Component {
                name,
                value: v,
                weight: 1.0,
            }],
        }
    }

    pub fn total(&self) -> f64 {
        self.value.value().item().as_f64()
    }

    /// Sum of every component named `name`, unweighted.
    pub fn component(&self, name: &str) -> Option<f64> {
        let mut hits = self.breakdown.iter().filter(|c| c.name == name).peekable();
        hits.peek()?;
        Some(hits.map(|c| c.value).sum())
    }

    /// `sum weight * value` over the breakdown.
    pub fn weighted_sum(&self) -> f64 {
        self.breakdown.iter().map(|c| c.weight * c.value).sum()
    }

    /// Sum of two losses, keeping both breakdowns.
    pub fn plus(self, other: LossValue<T>) -> Result<Self> {
        let mut breakdown = self.breakdown;
        breakdown.extend(other.breakdown);
        Ok(Self {
            value: self.value.add(&other.value)?,
            breakdown,
        })
    }
}

fn check_pair<T: Scalar>(op: &'static str, p: &Tensor<T>, other: &Tensor<T>) -> Result<()> {
    let (_, c, _, _) = p.dims4(op)?;
    if c != 1 {
        return Err(Error::InvalidShape {
            op,
            detail: format!("expected one channel, got {:?}", p.shape()),
        });
    }
    p.ensure_same_shape(other, op)
}

fn check_binary<T: Scalar>(op: &'static str, y: &Tensor<T>) -> Result<()> {
    if y.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::Domain {
            op,
            detail: "target must be binary".into(),
        })
    }
}

/// `1 - 2 sum(p y) / (sum p^2 + sum y^2 + 1e-7)` per sample.
pub fn dice_loss<T: Scalar>(p: &Var<T>, y: &Tensor<T>) -> Result<LossValue<T>> {
    check_pair("dice_loss", p.value(), y)?;
    check_binary("dice_loss", y)?;
    let yv = Var::constant(y.clone());
    let inter = p.mul(&yv)?.sum_per_sample()?;
    let denom = p
        .square()
        .sum_per_sample()?
        .add(&yv.square().sum_per_sample()?)?
        .add_scalar(DICE_EPS);
    let per_sample = inter.div(&denom)?.mul_scalar(-2.0).add_scalar(1.0);
    Ok(LossValue::single("dice", per_sample.mean()))
}

/// `y ln p + (1 - y) ln(1 - p)` with `p` clamped to `[1e-7, 1 - 1e-7]`.
fn log_likelihood<T: Scalar>(p: &Var<T>, y: &Tensor<T>) -> Result<Var<T>> {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let yv = Var::constant(y.clone());
    let pos = yv.mul(&pc.log()?)?;
    let neg = yv.one_minus().mul(&pc.one_minus().log()?)?;
    pos.add(&neg)
}

pub fn bce_loss<T: Scalar>(p: &Var<T>, y: &Tensor<T>) -> Result<LossValue<T>> {
    check_pair("bce_loss", p.value(), y)?;
    Ok(LossValue::single("ce", log_likelihood(p, y)?.mean().mul_scalar(-1.0)))
}

/// Cross-entropy with every pixel weighted by `u`. No gradient reaches `u`.
pub fn uw_bce_loss<T: Scalar>(p: &Var<T>, y: &Tensor<T>, u: &UncertaintyMap<T>) -> Result<LossValue<T>> {
    check_pair("uw_bce_loss", p.value(), y)?;
    p.value().ensure_same_shape(u.values(), "uw_bce_loss")?;
    let weighted = Var::constant(u.values().clone()).mul(&log_likelihood(p, y)?)?;
    Ok(LossValue::single("uce", weighted.mean().mul_scalar(-1.0)))
}

pub fn hybrid_seg_loss<T: Scalar>(p: &Var<T>, y: &Tensor<T>) -> Result<LossValue<T>> {
    dice_loss(p, y)?.plus(bce_loss(p, y)?)
}

/// Dice plus uncertainty-weighted cross-entropy; Dice stays unweighted.
pub fn uw_hybrid_loss<T: Scalar>(p: &Var<T>, y: &Tensor<T>, u: &UncertaintyMap<T>) -> Result<LossValue<T>> {
    dice_loss(p, y)?.plus(uw_bce_loss(p, y, u)?)
}

/// Pixel-averaged `KL(student || teacher)` between Bernoulli distributions.
/// The teacher side is a plain tensor, so it never receives gradient.
pub fn kl_consistency<T: Scalar>(p_student: &Var<T>, p_teacher: &Tensor<T>) -> Result<LossValue<T>> {
    check_pair("kl_consistency", p_student.value(), p_teacher)?;
    let ps = p_student.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let pt = p_teacher.map(|v| v.clamp(T::of(PROB_EPS), T::of(1.0 - PROB_EPS)));
    let log_pt = Var::constant(pt.map(|v| v.ln()));
    let log_qt = Var::constant(pt.map(|v| (T::one() - v).ln()));
    let qs = ps.one_minus();
    let pos = ps.mul(&ps.log()?.sub(&log_pt)?)?;
    let neg = qs.mul(&qs.log()?.sub(&log_qt)?)?;
    Ok(LossValue::single("con", pos.add(&neg)?.mean()))
}

/// `uw_hybrid(f_x) + uw_hybrid(f_xhat) + beta_eff * KL(f_x || g_xhat)`.
pub fn overall_loss<T: Scalar>(
    f_x: &Var<T>,
    f_xhat: &Var<T>,
    g_xhat: &Tensor<T>,
    y: &Tensor<T>,
    u: &UncertaintyMap<T>,
    beta_eff: f64,
) -> Result<LossValue<T>> {
    if !(beta_eff >= 0.0 && beta_eff.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {beta_eff}")));
    }
    f_x.value().ensure_same_shape(f_xhat.value(), "overall_loss")?;
    let seg = uw_hybrid_loss(f_x, y, u)?.plus(uw_hybrid_loss(f_xhat, y, u)?)?;
    let con = kl_consistency(f_x, g_xhat)?;
    let mut breakdown = seg.breakdown;
    breakdown.extend(con.breakdown.into_iter().map(|c| Component { weight: beta_eff, ..c }));
    // Skipping the zero-weighted term keeps the beta = 0 total bit-identical.
    let value = if beta_eff == 0.0 {
        seg.value
    } else {
        seg.value.add(&con.value.mul_scalar(beta_eff))?
    };
    Ok(LossValue { value, breakdown })
}

/// Consistency weight at `epoch`: `beta_max * exp(-5 (1 - t)^2)` with
/// `t = min(epoch / ceil(total_epochs / 10), 1)`.
pub fn beta_rampup(epoch: usize, total_epochs: usize, beta_max: f64) -> f64 {
    let ramp = total_epochs.div_ceil(10).max(1);
    let t = (epoch as f64 / ramp as f64).min(1.0);
    beta_max * (-5.0 * (1.0 - t).powi(2)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn var(shape: &[usize], v: &[f64]) -> Var<f64> {
        Var::param(t(shape, v))
    }

    fn half_ones(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i % 2) as f64).collect()
    }

    fn ones_u(shape: &[usize]) -> UncertaintyMap<f64> {
        UncertaintyMap::constant(shape, 1.0)
    }

    #[test]
    fn dice_cases() {
        let s = [1, 1, 2, 4];
        let y = half_ones(8);
        assert!(dice_loss(&var(&s, &y), &t(&s, &y)).unwrap().total().abs() < 1e-7);
        assert!((dice_loss(&var(&s, &[1.0; 8]), &t(&s, &[0.0; 8])).unwrap().total() - 1.0).abs() < 1e-7);
        let third = dice_loss(&var(&s, &[0.5; 8]), &t(&s, &y)).unwrap().total();
        assert!((third - 1.0 / 3.0).abs() < 1e-7, "{third}");
        // Empty target: the numerator vanishes, so the loss is 1 whatever p is.
        assert_eq!(dice_loss(&var(&s, &[0.0; 8]), &t(&s, &[0.0; 8])).unwrap().total(), 1.0);
    }

    #[test]
    fn dice_is_per_sample() {
        // Sample 0 perfect, sample 1 disjoint: mean is 0.5, pooled Dice would differ.
        let s = [2, 1, 1, 4];
        let p = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((dice_loss(&var(&s, &p), &t(&s, &y)).unwrap().total() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn bce_cases() {
        let s = [1, 1, 1, 2];
        assert!((bce_loss(&var(&s, &[0.5, 0.5]), &t(&s, &[1.0, 0.0])).unwrap().total() - LN_2).abs() < 1e-12);
        let v = bce_loss(&var(&s, &[0.9, 0.2]), &t(&s, &[1.0, 0.0])).unwrap().total();
        assert!((v - 0.164252).abs() < 1e-6);
        assert!((v + 0.5 * (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-15);
        let near = bce_loss(&var(&s, &[1.0, 0.0]), &t(&s, &[1.0, 0.0])).unwrap().total();
        assert!((near - 1e-7).abs() < 1e-12, "{near}");
    }

    #[test]
    fn hybrid_cases() {
        let s = [1, 1, 2, 4];
        let y = half_ones(8);
        let h = hybrid_seg_loss(&var(&s, &[0.5; 8]), &t(&s, &y)).unwrap();
        assert!((h.total() - 1.026480).abs() < 1e-6);
        assert!((h.component("dice").unwrap() - 1.0 / 3.0).abs() < 1e-7);
        assert!((h.component("ce").unwrap() - LN_2).abs() < 1e-12);
        assert!(h.component("con").is_none());
        assert!(hybrid_seg_loss(&var(&s, &y), &t(&s, &y)).unwrap().total() <= 1e-6);
    }

    #[test]
    fn uncertainty_weighted_cases() {
        let s = [1, 1, 2, 4];
        let y = t(&s, &half_ones(8));
        let p = var(&s, &[0.5; 8]);
        let zero = UncertaintyMap::constant(&s, 0.0);
        assert_eq!(uw_bce_loss(&p, &y, &zero).unwrap().total(), 0.0);
        let ln2 = UncertaintyMap::constant(&s, LN_2);
        assert!((uw_bce_loss(&p, &y, &ln2).unwrap().total() - 0.480453).abs() < 1e-6);
        assert_eq!(
            uw_hybrid_loss(&p, &y, &zero).unwrap().total(),
            dice_loss(&p, &y).unwrap().total()
        );
    }

    #[test]
    fn kl_cases() {
        let s = [1, 1, 1, 3];
        let ps = var(&s, &[0.5; 3]);
        let v = kl_consistency(&ps, &t(&s, &[0.25; 3])).unwrap().total();
        assert!((v - 0.143841).abs() < 1e-6);
        assert!((v - (0.5 * LN_2 + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-12);
        assert!(kl_consistency(&ps, &t(&s, &[0.5; 3])).unwrap().total().abs() < 1e-15);
        let ba = kl_consistency(&var(&s, &[0.25; 3]), &t(&s, &[0.5; 3])).unwrap().total();
        assert!((ba - v).abs() > 1e-3);
    }

    #[test]
    fn overall_composition() {
        let s = [1, 1, 2, 2];
        let y = t(&s, &[1.0, 0.0, 1.0, 0.0]);
        let fx = var(&s, &[0.7, 0.2, 0.6, 0.4]);
        let fxh = var(&s, &[0.8, 0.3, 0.5, 0.1]);
        let g = t(&s, &[0.6, 0.3, 0.5, 0.2]);
        let u = UncertaintyMap::constant(&s, 0.4);
        let total = overall_loss(&fx, &fxh, &g, &y, &u, 7.5).unwrap();
        assert!((total.weighted_sum() - total.total()).abs() < 1e-12);
        let parts = uw_hybrid_loss(&fx, &y, &u).unwrap().total()
            + uw_hybrid_loss(&fxh, &y, &u).unwrap().total()
            + 7.5 * kl_consistency(&fx, &g).unwrap().total();
        assert!((parts - total.total()).abs() < 1e-12);

        let b0 = overall_loss(&fx, &fxh, &g, &y, &ones_u(&s), 0.0).unwrap();
        let seg = hybrid_seg_loss(&fx, &y).unwrap().value.add(&hybrid_seg_loss(&fxh, &y).unwrap().value).unwrap();
        assert_eq!(b0.total(), seg.value().item());

        let same = overall_loss(&fx, &fxh, fx.value(), &y, &u, 200.0).unwrap();
        assert!(same.component("con").unwrap().abs() < 1e-15);
        assert!(overall_loss(&fx, &fxh, &g, &y, &u, -1.0).is_err());
    }

    #[test]
    fn reduction_identities_are_exact() {
        let s = [2, 1, 4, 4];
        let mut rng = crate::tensor_core::Rng::new(3, 0);
        let p: Vec<f64> = (0..32).map(|_| rng.uniform_range(0.01, 0.99)).collect();
        let y: Vec<f64> = (0..32).map(|_| rng.below(2) as f64).collect();
        let (p, y) = (var(&s, &p), t(&s, &y));
        let u = ones_u(&s);
        assert_eq!(uw_bce_loss(&p, &y, &u).unwrap().total(), bce_loss(&p, &y).unwrap().total());
        assert_eq!(uw_hybrid_loss(&p, &y, &u).unwrap().total(), hybrid_seg_loss(&p, &y).unwrap().total());

        uw_hybrid_loss(&p, &y, &u).unwrap().value.backward().unwrap();
        let g1 = p.take_grad().unwrap();
        hybrid_seg_loss(&p, &y).unwrap().value.backward().unwrap();
        assert_eq!(g1, p.take_grad().unwrap());
    }

    #[test]
    fn gradients_do_not_reach_teacher_or_weights() {
        let s = [1, 1, 2, 2];
        let fx = var(&s, &[0.7, 0.2, 0.6, 0.4]);
        let g = t(&s, &[0.6, 0.3, 0.5, 0.2]);
        let y = t(&s, &[1.0, 0.0, 1.0, 0.0]);
        let loss = overall_loss(&fx, &fx, &g, &y, &UncertaintyMap::constant(&s, 0.3), 10.0).unwrap();
        loss.value.backward().unwrap();
        assert!(fx.grad().is_some());
    }

    #[test]
    fn shape_and_domain_errors() {
        let a = var(&[1, 1, 2, 2], &[0.5; 4]);
        let b = t(&[1, 1, 4, 1], &[0.0; 4]);
        assert!(matches!(dice_loss(&a, &b), Err(Error::ShapeMismatch { .. })));
        assert!(bce_loss(&a, &b).is_err());
        assert!(kl_consistency(&a, &b).is_err());
        assert!(matches!(
            dice_loss(&a, &t(&[1, 1, 2, 2], &[0.5; 4])),
            Err(Error::Domain { .. })
        ));
        let two = var(&[1, 2, 1, 2], &[0.5; 4]);
        assert!(bce_loss(&two, &t(&[1, 2, 1, 2], &[0.0; 4])).is_err());
        let u = UncertaintyMap::constant(&[1, 1, 1, 4], 1.0);
        assert!(uw_bce_loss(&a, &t(&[1, 1, 2, 2], &[0.0; 4]), &u).is_err());
    }

    #[test]
    fn rampup_schedule() {
        assert_eq!(beta_rampup(3, 30, 200.0), 200.0);
        assert_eq!(beta_rampup(30, 30, 200.0), 200.0);
        assert!((beta_rampup(0, 30, 1.0) - 0.006738).abs() < 1e-6);
        assert!((beta_rampup(0, 30, 200.0) - 200.0 * (-5.0f64).exp()).abs() < 1e-12);
        // 25 epochs ramp over ceil(2.5) = 3 of them.
        assert!(beta_rampup(2, 25, 1.0) < 1.0);
        assert_eq!(beta_rampup(3, 25, 1.0), 1.0);
        assert_eq!(DEFAULT_BETA, 200.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn losses_are_nonnegative(seed in any::<u64>(), n in 1usize..3) {
            let mut rng = crate::tensor_core::Rng::new(seed, 0);
            let s = [n, 1, 3, 3];
            let len = n * 9;
            let p: Vec<f64> = (0..len).map(|_| rng.uniform()).collect();
            let q: Vec<f64> = (0..len).map(|_| rng.uniform()).collect();
            let y: Vec<f64> = (0..len).map(|_| rng.below(2) as f64).collect();
            let u: Vec<f64> = (0..len).map(|_| rng.uniform_range(0.0, LN_2)).collect();
            let (pv, qt, yt) = (var(&s, &p), t(&s, &q), t(&s, &y));
            let u = UncertaintyMap::from_mean(&t(&s, &u), 1, 0.0);
            prop_assert!(dice_loss(&pv, &yt).unwrap().total() >= -1e-9);
            prop_assert!(bce_loss(&pv, &yt).unwrap().total() >= -1e-9);
            prop_assert!(uw_hybrid_loss(&pv, &yt, &u).unwrap().total() >= -1e-9);
            prop_assert!(kl_consistency(&pv, &qt).unwrap().total() >= -1e-9);
            let all = overall_loss(&pv, &pv, &qt, &yt, &u, 3.0).unwrap();
            prop_assert!(all.total() >= -1e-9);
            prop_assert!((all.weighted_sum() - all.total()).abs() < 1e-6);
        }

        #[test]
        fn rampup_is_monotone(total in 10usize..200, beta in 0.0f64..500.0) {
            let mut prev = 0.0;
            for e in 0..=total {
                let b = beta_rampup(e, total, beta);
                prop_assert!(b >= prev && b <= beta);
                prev = b;
            }
            prop_assert_eq!(prev, beta);
        }
    }
}
