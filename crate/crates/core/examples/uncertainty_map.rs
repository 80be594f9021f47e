//! Monte Carlo entropy map of a briefly trained teacher on an unseen domain.
//! Uncertainty concentrates on the object boundaries.
//!
//! cargo run --release --example uncertainty_map [out_dir]

use std::env;
use std::path::PathBuf;

use ugtn::harness::{train, TrainConfig, Variant};
use ugtn::metrics::binarize;
use ugtn::synthdata::{default_specs, generate_corpus, save_pgm, split_leave_one_out, Range};
use ugtn::uncertainty::Estimator;
use ugtn::Rng;

fn main() -> ugtn::Result<()> {
    let out = env::args().nth(1).map_or_else(|| env::temp_dir().join("ugtn-uncertainty"), PathBuf::from);
    let corpus = generate_corpus(&default_specs(), 48, 32, 3)?;
    let (pool, test) = split_leave_one_out(&corpus, 3)?;
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e-3,
        variant: Variant::FdaCon,
        beta_max: 10.0,
        held_out: 3,
        ..TrainConfig::default()
    };
    let teacher = train::<f32>(&cfg, &pool)?.teacher;

    let sample = &test[0];
    let x = sample.image.clone().reshape(&[1, 1, 32, 32])?;
    let (mean, umap) = Estimator::default().estimate(&teacher, &x, &mut Rng::new(0, 0))?;

    // Mean entropy on boundary pixels of the true mask versus everywhere else.
    let gt = binarize(&sample.mask, 0.5)?;
    let boundary: Vec<usize> = gt.boundary().into_iter().map(|(r, c)| r * 32 + c).collect();
    let u = umap.values().data();
    let on: f64 = boundary.iter().map(|&i| u[i] as f64).sum::<f64>() / boundary.len() as f64;
    let off: f64 = (u.iter().map(|&v| v as f64).sum::<f64>() - on * boundary.len() as f64) / (u.len() - boundary.len()) as f64;
    println!("{} passes, sigma {}", umap.passes(), umap.sigma());
    println!("mean entropy: boundary {on:.4}, elsewhere {off:.4} (max {:.4})", std::f64::consts::LN_2);

    umap.emit_visualization(0, &out.join("entropy.pgm"))?;
    save_pgm(&mean, Range::Unit, &out.join("mean.pgm"))?;
    save_pgm(&sample.image, Range::Signed, &out.join("input.pgm"))?;
    println!("maps in {}", out.display());
    Ok(())
}
