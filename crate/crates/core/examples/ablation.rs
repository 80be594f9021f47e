//! Reduced-scale ablation: every variant on every held-out domain, one seed.
//! The same driver at full scale backs `ugtn ablation`.
//!
//! cargo run --release --example ablation [epochs]

use std::env;

use ugtn::harness::{run_ablation, TrainConfig};
use ugtn::synthdata::{default_specs, generate_corpus, DEFAULT_CORPUS_SEED};

fn main() -> ugtn::Result<()> {
    let epochs = env::args().nth(1).map_or(12, |s| s.parse().expect("epoch count"));
    let base = TrainConfig {
        epochs,
        beta_max: 10.0,
        learning_rate: 1e-3,
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        ..TrainConfig::default()
    };
    let corpus = generate_corpus(&default_specs(), 24, 32, DEFAULT_CORPUS_SEED)?;
    let report = run_ablation(&base, &corpus, &[0], &|r| {
        eprintln!("{} held out {}: DSC {:.2}", r.variant, r.held_out, 100.0 * r.dsc)
    })?;
    print!("{}", report.to_csv());
    Ok(())
}
