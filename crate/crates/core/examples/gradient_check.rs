//! Compares reverse-mode gradients of the full training objective with
//! central differences, in f64.
//!
//! cargo run --release --example gradient_check

use ugtn::losses::overall_loss;
use ugtn::uncertainty::UncertaintyMap;
use ugtn::{Rng, Tensor, Var};

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

fn main() -> ugtn::Result<()> {
    let mut rng = Rng::new(1, 0);
    let shape = [2, 1, 6, 6];
    let f_x = uniform(&shape, 0.05, 0.95, &mut rng);
    let f_xhat = uniform(&shape, 0.05, 0.95, &mut rng);
    let g_xhat = uniform(&shape, 0.05, 0.95, &mut rng);
    let y = uniform(&shape, 0.0, 1.0, &mut rng).map(|v| if v < 0.4 { 1.0 } else { 0.0 });
    let u = UncertaintyMap::from_mean(&uniform(&shape, 0.05, 0.95, &mut rng), 8, 0.1);
    let beta = 10.0;

    let objective = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        overall_loss(&Var::constant(a.clone()), &Var::constant(b.clone()), &g_xhat, &y, &u, beta)
            .unwrap()
            .total()
    };
    let (va, vb) = (Var::param(f_x.clone()), Var::param(f_xhat.clone()));
    let loss = overall_loss(&va, &vb, &g_xhat, &y, &u, beta)?;
    loss.value.backward()?;
    println!("loss {:.6}", loss.total());
    for c in &loss.breakdown {
        println!("  {:<5} {:.6} x {}", c.name, c.value, c.weight);
    }

    let h = 1e-5;
    for (name, var, which) in [("f(x)", &va, 0), ("f(x_hat)", &vb, 1)] {
        let grad = var.grad().expect("gradient");
        let mut worst = 0.0f64;
        for j in 0..f_x.len() {
            let (mut a, mut b) = (f_x.clone(), f_xhat.clone());
            let t = if which == 0 { &mut a } else { &mut b };
            t.data_mut()[j] += h;
            let up = objective(&a, &b);
            let t = if which == 0 { &mut a } else { &mut b };
            t.data_mut()[j] -= 2.0 * h;
            let down = objective(&a, &b);
            let numeric = (up - down) / (2.0 * h);
            let g = grad.data()[j];
            worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-12));
        }
        println!("d loss / d {name}: worst relative error {worst:.2e} over {} entries", f_x.len());
    }
    Ok(())
}
