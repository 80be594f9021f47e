//! Generates the four-domain corpus, prints per-domain statistics and writes
//! it to disk in the layout `ugtn gen-data` uses.
//!
//! cargo run --release --example synthetic_domains [out_dir]

use std::env;
use std::path::PathBuf;

use ugtn::fourier_aug::fft2d;
use ugtn::synthdata::{default_specs, generate_corpus, write_corpus, DEFAULT_CORPUS_SEED, DEFAULT_PER_DOMAIN, DEFAULT_SIZE};

fn main() -> ugtn::Result<()> {
    let out = env::args().nth(1).map_or_else(|| env::temp_dir().join("ugtn-corpus"), PathBuf::from);
    let corpus = generate_corpus(&default_specs(), DEFAULT_PER_DOMAIN, DEFAULT_SIZE, DEFAULT_CORPUS_SEED)?;

    println!("domain  mean   std    foreground  low-freq amplitude");
    for d in &corpus {
        let n = d.samples.len() as f64;
        let (mut mean, mut sq, mut fg, mut amp) = (0.0, 0.0, 0.0, 0.0);
        for s in &d.samples {
            let px = s.image.data();
            let m = px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
            mean += m;
            sq += px.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / px.len() as f64;
            fg += s.mask.data().iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
            // Amplitude of the first non-DC bins, which carry most of the style.
            let a = fft2d(&s.image)?.amplitude();
            amp += (a.data()[1] + a.data()[DEFAULT_SIZE]) / 2.0;
        }
        println!(
            "{:>6}  {:+.3}  {:.3}  {:>10.3}  {:>18.1}",
            d.domain,
            mean / n,
            (sq / n).sqrt(),
            fg / n,
            amp / n
        );
    }

    write_corpus(&out, &corpus)?;
    println!("wrote {} samples to {}", corpus.len() * DEFAULT_PER_DOMAIN, out.display());
    Ok(())
}
