//! Trains the full method with one domain held out, then scores the student
//! on it. A reduced corpus keeps this to about a minute.
//!
//! cargo run --release --example train_loo [held_out] [epochs]

use std::env;

use ugtn::harness::{evaluate, train, TrainConfig, Variant};
use ugtn::synthdata::{default_specs, generate_corpus, split_leave_one_out, DEFAULT_CORPUS_SEED};

fn main() -> ugtn::Result<()> {
    let mut args = env::args().skip(1);
    let held_out = args.next().map_or(2, |s| s.parse().expect("held-out domain"));
    let epochs = args.next().map_or(20, |s| s.parse().expect("epoch count"));
    let cfg = TrainConfig {
        epochs,
        held_out,
        variant: Variant::Full,
        beta_max: 10.0,
        // Higher than the default to make up for the small corpus.
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    cfg.validate()?;

    let corpus = generate_corpus(&default_specs(), 48, 32, DEFAULT_CORPUS_SEED)?;
    let (pool, test) = split_leave_one_out(&corpus, held_out)?;
    println!("training on {} samples, holding out domain {held_out} ({} samples)", pool.len(), test.len());

    let out = train::<f32>(&cfg, &pool)?;
    let steps = out.log.len() / epochs;
    for row in out.log.iter().skip(steps - 1).step_by(steps) {
        println!(
            "epoch {:>2}: dice {:.4} uce {:.4} con {:.5} beta {:.2} total {:.4}",
            row.epoch, row.dice, row.uce, row.con, row.beta_eff, row.total
        );
    }
    println!("{:?}", out.counters);

    let report = evaluate(&out.student, &test)?;
    println!(
        "held-out DSC {:.2}, ASD {}",
        100.0 * report.mean_dsc(),
        report.mean_asd().map_or("NA".into(), |v| format!("{v:.3}"))
    );
    Ok(())
}
