//! Mixes the low-frequency amplitude of one domain into an image of another
//! at several weights. The phase, and with it the shape, is kept.
//!
//! cargo run --release --example fourier_augment [out_dir]

use std::env;
use std::path::PathBuf;

use ugtn::fourier_aug::{augment_with_lambda, decompose, fft2d, MixMask, DEFAULT_ALPHA};
use ugtn::synthdata::{default_specs, generate_corpus, save_pgm, Range};

fn main() -> ugtn::Result<()> {
    let out = env::args().nth(1).map_or_else(|| env::temp_dir().join("ugtn-augment"), PathBuf::from);
    let corpus = generate_corpus(&default_specs(), 1, 64, 7)?;
    let x = &corpus[0].samples[0].image;
    let style = &corpus[3].samples[0].image;
    let mask = MixMask::centered(64, 64, DEFAULT_ALPHA)?;

    let window_amp = |t: &ugtn::Tensor<f32>| -> ugtn::Result<f64> {
        let p = decompose(&fft2d(t)?.to_layout(ugtn::fourier_aug::Layout::DcCentered));
        let a = p.amplitude.data();
        Ok((0..64 * 64).filter(|&i| mask.get(i / 64, i % 64)).map(|i| a[i]).sum())
    };
    println!("window amplitude: input {:.1}, style {:.1}", window_amp(x)?, window_amp(style)?);

    save_pgm(x, Range::Signed, &out.join("input.pgm"))?;
    save_pgm(style, Range::Signed, &out.join("style.pgm"))?;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = augment_with_lambda(x, style, lambda, DEFAULT_ALPHA)?;
        let diff = y.max_abs_diff(x)?;
        println!("lambda {lambda:.2}: window amplitude {:.1}, max pixel change {diff:.3}", window_amp(&y)?);
        save_pgm(&y, Range::Signed, &out.join(format!("mixed_{lambda:.2}.pgm")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
