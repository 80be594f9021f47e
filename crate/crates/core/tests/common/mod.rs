//! Central finite-difference gradient checks shared by the gradient tests
//! and the acceptance suite. Everything runs in f64.

#![allow(dead_code)]

use ugtn::losses::{self, LossValue};
use ugtn::segnet::{Pass, SegNetwork};
use ugtn::tensor_core::{concat_channels, conv2d, dropout, maxpool2, relu, sigmoid, upsample2_nearest};
use ugtn::uncertainty::UncertaintyMap;
use ugtn::{Result, Rng, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

/// Relative error `|a - n| / max(|a|, |n|)` over the whole gradient vector.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error over the inputs of a scalar-valued `f`.
pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Result<Var<f64>>) -> f64 {
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&vars).expect("forward");
    assert_eq!(out.value().len(), 1, "objective must be scalar");
    out.backward().expect("backward");

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let vs: Vec<Var<f64>> = xs.iter().cloned().map(Var::constant).collect();
        f(&vs).expect("forward").value().item()
    };
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = var.grad().map_or_else(|| vec![0.0; inputs[i].len()], |g| g.data().to_vec());
        let mut xs = inputs.to_vec();
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// Values in `[-1, 1]` kept at least `gap` away from zero, so kinks at the
/// origin stay out of the difference stencil.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

fn binary(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    uniform(shape, 0.0, 1.0, rng).map(|v| if v < 0.4 { 1.0 } else { 0.0 })
}

/// Reduces a tensor-valued output to a scalar with fixed random weights.
fn project(out: Var<f64>, seed: u64) -> Result<Var<f64>> {
    let w = uniform(out.shape(), -1.0, 1.0, &mut Rng::new(seed, 7));
    Ok(out.mul(&Var::constant(w))?.sum())
}

fn loss(l: Result<LossValue<f64>>) -> Result<Var<f64>> {
    l.map(|l| l.value)
}

/// Every loss and layer primitive, with its worst relative error.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(20, 0);
    let mut out = Vec::new();
    let shape = [2, 1, 4, 4];

    // Elementwise and reduction ops.
    let a = uniform(&[3, 4], 0.5, 2.0, &mut rng);
    let b = uniform(&[3, 4], 0.5, 2.0, &mut rng);
    out.push(("add", check(&[a.clone(), b.clone()], |v| project(v[0].add(&v[1])?, 1))));
    out.push(("sub", check(&[a.clone(), b.clone()], |v| project(v[0].sub(&v[1])?, 2))));
    out.push(("mul", check(&[a.clone(), b.clone()], |v| project(v[0].mul(&v[1])?, 3))));
    out.push(("div", check(&[a.clone(), b.clone()], |v| project(v[0].div(&v[1])?, 4))));
    out.push(("log", check(&[a.clone()], |v| project(v[0].log()?, 5))));
    out.push(("exp", check(&[a.clone()], |v| project(v[0].exp()?, 6))));
    out.push(("square", check(&[a.clone()], |v| project(v[0].square(), 7))));
    out.push(("one_minus", check(&[a.clone()], |v| project(v[0].one_minus(), 8))));
    out.push(("scalar ops", check(&[a.clone()], |v| project(v[0].mul_scalar(-1.5).add_scalar(0.25), 9))));
    out.push(("clamp", check(&[uniform(&[3, 4], 0.0, 3.0, &mut rng).map(|v| if (v - 1.0).abs() < 0.05 { v + 0.1 } else { v })], |v| {
        project(v[0].clamp(-1.0, 1.0)?, 10)
    })));
    out.push(("mean", check(&[a.clone()], |v| Ok(v[0].square().mean()))));
    out.push(("sum_per_sample", check(&[a.clone()], |v| project(v[0].sum_per_sample()?, 11))));

    // Layer primitives.
    let x = away_from_zero(&[2, 3, 6, 6], 0.01, &mut rng);
    let k = uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let bias = uniform(&[4], -0.5, 0.5, &mut rng);
    out.push(("conv2d 3x3", check(&[x.clone(), k, bias.clone()], |v| project(conv2d(&v[0], &v[1], &v[2], 1)?, 12))));
    let k1 = uniform(&[4, 3, 1, 1], -0.5, 0.5, &mut rng);
    out.push(("conv2d 1x1", check(&[x.clone(), k1, bias], |v| project(conv2d(&v[0], &v[1], &v[2], 0)?, 13))));
    out.push(("relu", check(&[x.clone()], |v| project(relu(&v[0]), 14))));
    out.push(("sigmoid", check(&[x.clone()], |v| project(sigmoid(&v[0]), 15))));
    // Distinct values keep the pooling argmax stable under the stencil.
    let distinct = Tensor::from_vec(&[2, 3, 6, 6], {
        let mut d: Vec<f64> = (0..216).map(|i| i as f64 * 0.01).collect();
        Rng::new(3, 3).shuffle(&mut d);
        d
    })
    .unwrap();
    out.push(("maxpool2", check(&[distinct], |v| project(maxpool2(&v[0])?, 16))));
    out.push(("upsample2", check(&[x.clone()], |v| project(upsample2_nearest(&v[0])?, 17))));
    let y = uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng);
    out.push(("concat_channels", check(&[x.clone(), y], |v| project(concat_channels(&v[0], &v[1])?, 18))));
    out.push(("dropout", check(&[x.clone()], |v| project(dropout(&v[0], 0.3, &mut Rng::new(9, 9), true)?, 19))));

    // Network as a whole, through every parameter.
    out.push(("segnet", network_check(&mut rng)));

    // Losses.
    let p = uniform(&shape, 0.05, 0.95, &mut rng);
    let q = uniform(&shape, 0.05, 0.95, &mut rng);
    let t = binary(&shape, &mut rng);
    let u = UncertaintyMap::from_mean(&uniform(&shape, 0.05, 0.95, &mut rng), 8, 0.1);
    out.push(("dice", check(&[p.clone()], |v| loss(losses::dice_loss(&v[0], &t)))));
    out.push(("bce", check(&[p.clone()], |v| loss(losses::bce_loss(&v[0], &t)))));
    out.push(("hybrid", check(&[p.clone()], |v| loss(losses::hybrid_seg_loss(&v[0], &t)))));
    out.push(("kl consistency", check(&[p.clone()], |v| loss(losses::kl_consistency(&v[0], &q)))));
    out.push(("uw bce", check(&[p.clone()], |v| loss(losses::uw_bce_loss(&v[0], &t, &u)))));
    out.push(("uw hybrid", check(&[p.clone()], |v| loss(losses::uw_hybrid_loss(&v[0], &t, &u)))));
    let p2 = uniform(&shape, 0.05, 0.95, &mut rng);
    out.push(("overall", check(&[p, p2], |v| loss(losses::overall_loss(&v[0], &v[1], &q, &t, &u, 7.5)))));
    out
}

/// Gradient of a hybrid loss on the network output with respect to every
/// parameter tensor (a fixed random subset of entries per tensor).
fn network_check(rng: &mut Rng) -> f64 {
    let mut net = SegNetwork::<f64>::init(1, 0.1, &mut Rng::new(4, 0)).unwrap();
    // Zero biases would park ReLU inputs exactly on the kink.
    for p in net.params_mut() {
        if p.value.shape().len() == 1 {
            p.value = uniform(p.value.shape(), -0.2, 0.2, rng);
        }
    }
    let x = uniform(&[2, 1, 8, 8], -1.0, 1.0, rng);
    let y = binary(&[2, 1, 8, 8], rng);
    let objective = |net: &SegNetwork<f64>| -> Result<(Var<f64>, _)> {
        let binding = net.bind();
        let p = net.forward_var(&binding, &Var::constant(x.clone()), Pass::Deterministic, &mut Rng::new(0, 0))?;
        Ok((losses::hybrid_seg_loss(&p, &y)?.value, binding))
    };
    let (value, binding) = objective(&net).unwrap();
    value.backward().unwrap();
    net.absorb_grads(&binding).unwrap();
    let analytic: Vec<Tensor<f64>> = net.params().iter().map(|p| p.grad.clone().expect("gradient")).collect();

    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= 12 { (0..n).collect() } else { (0..12).map(|_| rng.below(n)).collect() };
        let mut a = Vec::new();
        let mut num = Vec::new();
        for j in picks {
            let orig = net.params()[i].value.data()[j];
            net.params_mut()[i].value.data_mut()[j] = orig + STEP;
            let up = objective(&net).unwrap().0.value().item();
            net.params_mut()[i].value.data_mut()[j] = orig - STEP;
            let down = objective(&net).unwrap().0.value().item();
            net.params_mut()[i].value.data_mut()[j] = orig;
            a.push(grad.data()[j]);
            num.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(&a, &num));
    }
    worst
}
