//! Dice and average surface distance on a few hand-drawn masks.
//!
//! cargo run --example metrics

use ugtn::metrics::{asd, dsc, BinaryMask};

fn square(size: usize, top: usize, left: usize, side: usize) -> BinaryMask {
    let px: Vec<(usize, usize)> = (top..top + side).flat_map(|r| (left..left + side).map(move |c| (r, c))).collect();
    BinaryMask::from_pixels(size, size, &px).unwrap()
}

fn main() -> ugtn::Result<()> {
    let gt = square(32, 8, 8, 12);
    let cases = [
        ("identical", square(32, 8, 8, 12)),
        ("shifted by 2", square(32, 8, 10, 12)),
        ("shrunk by 2", square(32, 10, 10, 8)),
        ("disjoint", square(32, 22, 22, 6)),
        ("empty", BinaryMask::empty(32, 32)),
    ];
    println!("{:<14} {:>7} {:>7}", "prediction", "DSC", "ASD");
    for (name, pred) in &cases {
        let a = if pred.is_empty() { "NA".to_string() } else { format!("{:.3}", asd(pred, &gt)?) };
        println!("{name:<14} {:>7.3} {a:>7}", dsc(pred, &gt)?);
    }
    Ok(())
}
