//! Seeded synthetic multi-domain segmentation benchmark.
//!
//! Every domain draws its masks from the same geometry distribution (one to
//! three soft-edged ellipses) and differs only in appearance: intensity
//! offset, contrast, coloured-noise texture and a smooth multiplicative bias
//! field. Images are squashed into `[-1, 1]` with `tanh`; masks are `{0, 1}`.

pub mod pgm;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fourier_aug::{fft2d, ifft2d, ComplexSpectrum, Layout};
use crate::tensor_core::{Rng, Tensor};

pub use pgm::{load_pgm, save_pgm, Range};

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_PER_DOMAIN: usize = 60;
pub const MANIFEST: &str = "manifest.tsv";
/// Corpus seed used when no data directory is given.
pub const DEFAULT_CORPUS_SEED: u64 = 2024;

/// Foreground fraction bounds enforced by rejection sampling.
pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.6;
const MAX_ATTEMPTS: u64 = 100;

const GEOMETRY: u64 = 1;
const APPEARANCE: u64 = 2;
const DOMAIN: u64 = 3;

/// Appearance parameters; the only thing that differs between domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Style {
    /// Added to every pixel before the bias field.
    pub offset: f64,
    /// Foreground minus background intensity.
    pub gain: f64,
    /// Noise power spectrum falls as `1 / f^texture_exponent`.
    pub texture_exponent: f64,
    /// Standard deviation of the noise.
    pub texture_amplitude: f64,
    /// Peak deviation of the multiplicative bias field from 1.
    pub bias_amplitude: f64,
}

/// Shape distribution shared by all domains.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    /// Inclusive range of the ellipse count.
    pub ellipses: (usize, usize),
    /// Semi-axis range as a fraction of the image side.
    pub radius: (f64, f64),
    /// Width of the soft edge in pixels.
    pub edge_softness: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            ellipses: (1, 3),
            radius: (0.08, 0.25),
            edge_softness: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    /// Domain id, starting at 1.
    pub id: usize,
    pub style: Style,
    pub geometry: Geometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1 x H x W` in `[-1, 1]`.
    pub image: Tensor<f32>,
    /// `1 x H x W` in `{0, 1}`.
    pub mask: Tensor<f32>,
    pub domain: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain: usize,
    pub samples: Vec<Sample>,
}

/// The four built-in domains.
pub fn default_specs() -> Vec<DomainSpec> {
    let styles = [
        (-0.8, 1.2, 0.0, 0.08, 0.2),
        (0.0, 0.8, 1.0, 0.10, 0.3),
        (0.6, 1.0, 0.0, 0.30, 0.1),
        (-0.4, 0.5, 2.0, 0.45, 0.4),
    ];
    styles
        .iter()
        .enumerate()
        .map(|(i, &(offset, gain, texture_exponent, texture_amplitude, bias_amplitude))| DomainSpec {
            id: i + 1,
            style: Style {
                offset,
                gain,
                texture_exponent,
                texture_amplitude,
                bias_amplitude,
            },
            geometry: Geometry::default(),
        })
        .collect()
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let s = &self.style;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("domain {}: {what}", self.id)));
        if self.id == 0 {
            return bad("ids start at 1");
        }
        if g.ellipses.0 == 0 || g.ellipses.0 > g.ellipses.1 {
            return bad("ellipse count range must be nonempty and start at 1 or more");
        }
        if !(g.radius.0 > 0.0 && g.radius.0 <= g.radius.1 && g.radius.1 <= 0.5) {
            return bad("radius range must satisfy 0 < min <= max <= 0.5");
        }
        if !(g.edge_softness > 0.0) {
            return bad("edge softness must be positive");
        }
        let finite = [s.offset, s.gain, s.texture_exponent, s.texture_amplitude, s.bias_amplitude];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("style parameters must be finite");
        }
        if s.gain <= 0.0 || s.texture_amplitude < 0.0 || s.texture_exponent < 0.0 {
            return bad("gain must be positive, texture parameters nonnegative");
        }
        if !(0.0..1.0).contains(&s.bias_amplitude) {
            return bad("bias amplitude must be in [0, 1)");
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Approximate signed distance to the boundary in pixels, positive inside.
    fn inside_distance(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let rho = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        (1.0 - rho) * self.a.min(self.b)
    }
}

/// Soft foreground map in `[0, 1]` and its binary mask, or `None` when the
/// foreground fraction falls outside the bounds.
fn draw_shapes(g: &Geometry, size: usize, rng: &mut Rng) -> Option<(Vec<f64>, Vec<f32>)> {
    let side = size as f64;
    let count = g.ellipses.0 + rng.below(g.ellipses.1 - g.ellipses.0 + 1);
    let shapes: Vec<Ellipse> = (0..count)
        .map(|_| {
            let theta = rng.uniform_range(0.0, std::f64::consts::PI);
            Ellipse {
                cy: rng.uniform_range(0.25, 0.75) * side,
                cx: rng.uniform_range(0.25, 0.75) * side,
                a: rng.uniform_range(g.radius.0, g.radius.1) * side,
                b: rng.uniform_range(g.radius.0, g.radius.1) * side,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();
    let mut soft = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d = shapes
                .iter()
                .map(|e| e.inside_distance(y as f64 + 0.5, x as f64 + 0.5))
                .fold(f64::NEG_INFINITY, f64::max);
            soft.push(1.0 / (1.0 + (-d / g.edge_softness).exp()));
            mask.push(if d >= 0.0 { 1.0 } else { 0.0 });
        }
    }
    let fraction = mask.iter().map(|&m| m as f64).sum::<f64>() / (size * size) as f64;
    (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fraction).then_some((soft, mask))
}

/// Zero-mean, unit-variance noise with power spectrum `1 / f^exponent`.
fn coloured_noise(size: usize, exponent: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let white: Vec<f64> = (0..size * size).map(|_| rng.gaussian(0.0, 1.0)).collect::<Result<_>>()?;
    let spectrum = fft2d(&Tensor::from_vec(&[size, size], white)?)?;
    let mut re = spectrum.re().clone();
    let mut im = spectrum.im().clone();
    let freq = |i: usize| {
        let f = if i <= size / 2 { i as f64 } else { i as f64 - size as f64 };
        f * f
    };
    for (i, (r, m)) in re.data_mut().iter_mut().zip(im.data_mut()).enumerate() {
        let f2 = freq(i / size) + freq(i % size);
        let gain = if f2 == 0.0 { 0.0 } else { f2.powf(-exponent / 4.0) };
        *r *= gain;
        *m *= gain;
    }
    let (noise, _) = ifft2d(&ComplexSpectrum::new(re, im, Layout::DcCorner)?);
    let data = noise.into_data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(data.into_iter().map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 }).collect())
}

/// Smooth field `1 + amplitude * q(x, y)` with `q` a random quadratic
/// scaled to peak magnitude 1 over the image.
fn bias_field(size: usize, amplitude: f64, rng: &mut Rng) -> Vec<f64> {
    let c: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let coord = |i: usize| 2.0 * (i as f64 + 0.5) / size as f64 - 1.0;
    let q: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = (coord(i / size), coord(i % size));
            c[0] * x + c[1] * y + c[2] * x * y + c[3] * (x * x - 0.5) + c[4] * (y * y - 0.5)
        })
        .collect();
    let peak = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    q.into_iter()
        .map(|v| 1.0 + if peak > 0.0 { amplitude * v / peak } else { 0.0 })
        .collect()
}

fn render(spec: &DomainSpec, size: usize, seed: u64, index: usize) -> Result<Sample> {
    let root = Rng::new(seed, 0);
    let (soft, mask) = (0..MAX_ATTEMPTS)
        .find_map(|attempt| draw_shapes(&spec.geometry, size, &mut root.fork(&[GEOMETRY, index as u64, attempt])))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "domain {}: no mask with foreground fraction in [{MIN_FOREGROUND}, {MAX_FOREGROUND}] after {MAX_ATTEMPTS} attempts",
                spec.id
            ))
        })?;

    let style = &spec.style;
    let mut rng = root.fork(&[APPEARANCE, index as u64]);
    let noise = coloured_noise(size, style.texture_exponent, &mut rng)?;
    let bias = bias_field(size, style.bias_amplitude, &mut rng);
    let raw: Vec<f64> = soft
        .iter()
        .zip(&noise)
        .zip(&bias)
        .map(|((&s, &n), &b)| (style.offset + style.gain * s + style.texture_amplitude * n) * b)
        .collect();
    // A fixed squashing rather than per-image rescaling, so offset and gain
    // stay visible as domain style.
    let image: Vec<f32> = raw.iter().map(|&v| v.tanh() as f32).collect();
    Ok(Sample {
        image: Tensor::from_vec(&[1, size, size], image)?,
        mask: Tensor::from_vec(&[1, size, size], mask)?,
        domain: spec.id,
        index,
    })
}

/// `n` samples of one domain. Sample `i` depends only on `(spec, seed, i)`,
/// and its mask only on `(spec.geometry, seed, i)`.
pub fn generate_domain(spec: &DomainSpec, n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample per domain".into()));
    }
    if size < 4 || !size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("image size must be a power of two >= 4, got {size}")));
    }
    (0..n).map(|i| render(spec, size, seed, i)).collect()
}

/// Seed of one domain within a corpus, so domains never share geometry.
pub fn domain_seed(corpus_seed: u64, domain: usize) -> u64 {
    Rng::new(corpus_seed, 0).fork(&[DOMAIN, domain as u64]).next_u64()
}

/// All domains of a corpus, each generated from its own derived seed.
pub fn generate_corpus(specs: &[DomainSpec], per_domain: usize, size: usize, seed: u64) -> Result<Vec<DomainDataset>> {
    let mut ids: Vec<usize> = specs.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != specs.len() {
        return Err(Error::InvalidArgument("domain ids must be unique".into()));
    }
    specs
        .iter()
        .map(|spec| {
            Ok(DomainDataset {
                domain: spec.id,
                samples: generate_domain(spec, per_domain, size, domain_seed(seed, spec.id))?,
            })
        })
        .collect()
}

/// Training pool of every domain except `held_out`, and the held-out test set.
pub fn split_leave_one_out(domains: &[DomainDataset], held_out: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if domains.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least two domains, got {}",
            domains.len()
        )));
    }
    let test = domains
        .iter()
        .find(|d| d.domain == held_out)
        .ok_or(Error::UnknownDomain(held_out))?;
    let train = domains
        .iter()
        .filter(|d| d.domain != held_out)
        .flat_map(|d| d.samples.iter().cloned())
        .collect();
    Ok((train, test.samples.clone()))
}

/// Relative image and mask paths of a sample inside a corpus directory.
pub fn sample_paths(domain: usize, index: usize) -> (String, String) {
    (
        format!("domain{domain}/img{index}.pgm"),
        format!("domain{domain}/msk{index}.pgm"),
    )
}

/// One manifest line. Paths are relative to the corpus directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub domain: usize,
    pub index: usize,
    pub image: PathBuf,
    pub mask: PathBuf,
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        writeln!(text, "{}\t{}\t{}\t{}", e.domain, e.index, e.image.display(), e.mask.display()).expect("writing to a String");
    }
    let path = dir.join(MANIFEST);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Format {
            path: path.clone(),
            detail: format!("line {}: expected `domain<TAB>index<TAB>image<TAB>mask`", lineno + 1),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [domain, index, img, msk] = fields[..] else { return Err(bad()) };
        entries.push(ManifestEntry {
            domain: domain.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
            image: PathBuf::from(img),
            mask: PathBuf::from(msk),
        });
    }
    Ok(entries)
}

/// Loads a mask file as a binary `1 x H x W` tensor (byte >= 128 is foreground).
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    Ok(pgm::load_pgm_as::<f32>(path, Range::Unit)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

/// Writes `domain{k}/img{i}.pgm`, `domain{k}/msk{i}.pgm` and a manifest with
/// one tab-separated line per sample: domain, index, image path, mask path.
pub fn write_corpus(dir: &Path, corpus: &[DomainDataset]) -> Result<()> {
    let mut entries = Vec::new();
    for d in corpus {
        for s in &d.samples {
            let (img, msk) = sample_paths(s.domain, s.index);
            save_pgm(&s.image, Range::Signed, &dir.join(&img))?;
            save_pgm(&s.mask, Range::Unit, &dir.join(&msk))?;
            entries.push(ManifestEntry {
                domain: s.domain,
                index: s.index,
                image: img.into(),
                mask: msk.into(),
            });
        }
    }
    write_manifest(dir, &entries)
}

/// Reads a corpus written by [`write_corpus`]; domains come back in id order.
pub fn read_corpus(dir: &Path) -> Result<Vec<DomainDataset>> {
    let mut domains: Vec<DomainDataset> = Vec::new();
    for e in read_manifest(dir)? {
        let image = load_pgm::<f32>(&dir.join(&e.image))?;
        let mask = load_mask(&dir.join(&e.mask))?;
        if image.shape() != mask.shape() {
            return Err(Error::Format {
                path: dir.join(&e.mask),
                detail: format!("mask shape {:?} differs from image {:?}", mask.shape(), image.shape()),
            });
        }
        let sample = Sample {
            image,
            mask,
            domain: e.domain,
            index: e.index,
        };
        match domains.iter_mut().find(|d| d.domain == e.domain) {
            Some(d) => d.samples.push(sample),
            None => domains.push(DomainDataset {
                domain: e.domain,
                samples: vec![sample],
            }),
        }
    }
    domains.sort_by_key(|d| d.domain);
    Ok(domains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn foreground(s: &Sample) -> f64 {
        s.mask.mean() as f64
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = &default_specs()[1];
        let a = generate_domain(spec, 3, 32, 7).unwrap();
        let b = generate_domain(spec, 3, 32, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_domain(spec, 3, 32, 8).unwrap());
    }

    #[test]
    fn masks_ignore_style() {
        let specs = default_specs();
        let a = generate_domain(&specs[0], 5, 32, 11).unwrap();
        let b = generate_domain(&specs[3], 5, 32, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mask, y.mask);
            assert_ne!(x.image, y.image);
        }
    }

    #[test]
    fn sample_invariants() {
        for spec in default_specs() {
            for s in generate_domain(&spec, 10, 64, 3).unwrap() {
                assert_eq!(s.image.shape(), &[1, 64, 64]);
                assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
                assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
                let f = foreground(&s);
                assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f), "{f}");
                assert_eq!(s.domain, spec.id);
            }
        }
    }

    #[test]
    fn foreground_bound_over_many_samples() {
        let spec = &default_specs()[0];
        let samples = generate_domain(spec, 1000, 32, 5).unwrap();
        assert!(samples.iter().all(|s| (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&foreground(s))));
    }

    #[test]
    fn impossible_geometry_fails() {
        let mut spec = default_specs()[0].clone();
        spec.geometry.radius = (0.5, 0.5);
        spec.geometry.ellipses = (3, 3);
        assert!(matches!(generate_domain(&spec, 1, 32, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_specs() {
        let base = default_specs()[0].clone();
        let mut s = base.clone();
        s.style.gain = 0.0;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.geometry.ellipses = (0, 2);
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.style.bias_amplitude = 1.0;
        assert!(s.validate().is_err());
        assert!(generate_domain(&base, 0, 32, 0).is_err());
        assert!(generate_domain(&base, 1, 48, 0).is_err());
    }

    #[test]
    fn coloured_noise_statistics() {
        let mut rng = Rng::new(1, 0);
        let n = coloured_noise(64, 2.0, &mut rng).unwrap();
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn domains_differ_in_mid_frequency_amplitude() {
        // Mean log-amplitude over the radial band 8..16 cycles per image.
        let band = |s: &Sample| {
            let a = fft2d(&s.image).unwrap().amplitude();
            let f = |i: usize| if i <= 32 { i as f64 } else { 64.0 - i as f64 };
            let (mut sum, mut count) = (0.0, 0);
            for (i, &v) in a.data().iter().enumerate() {
                let r = (f(i / 64).powi(2) + f(i % 64).powi(2)).sqrt();
                if (8.0..16.0).contains(&r) {
                    sum += v.ln();
                    count += 1;
                }
            }
            sum / count as f64
        };
        let corpus = generate_corpus(&default_specs(), 30, 64, 21).unwrap();
        let stats: Vec<(f64, f64)> = corpus
            .iter()
            .map(|d| {
                let v: Vec<f64> = d.samples.iter().map(band).collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
                (m, sd)
            })
            .collect();
        for i in 0..stats.len() {
            for j in i + 1..stats.len() {
                let sd = stats[i].1.max(stats[j].1);
                assert!((stats[i].0 - stats[j].0).abs() > 3.0 * sd, "domains {} and {}: {stats:?}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn leave_one_out_partition() {
        let corpus = generate_corpus(&default_specs(), 4, 16, 1).unwrap();
        let (train, test) = split_leave_one_out(&corpus, 2).unwrap();
        let mut train_domains: Vec<usize> = train.iter().map(|s| s.domain).collect();
        train_domains.dedup();
        assert_eq!(train_domains, vec![1, 3, 4]);
        assert!(test.iter().all(|s| s.domain == 2));
        assert_eq!(train.len() + test.len(), 16);
        assert!(matches!(split_leave_one_out(&corpus, 9), Err(Error::UnknownDomain(9))));
        assert!(split_leave_one_out(&corpus[..1], 1).is_err());

        let mut keys: Vec<(usize, usize)> = corpus.iter().flat_map(|d| d.samples.iter().map(|s| (s.domain, s.index))).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 16);
    }

    #[test]
    fn domains_do_not_share_masks() {
        let corpus = generate_corpus(&default_specs(), 3, 32, 4).unwrap();
        assert_ne!(corpus[0].samples[0].mask, corpus[1].samples[0].mask);
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&default_specs()[..2], 3, 16, 9).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest.lines().next().unwrap(), "1\t0\tdomain1/img0.pgm\tdomain1/msk0.pgm");
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in corpus.iter().zip(&back) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(x.mask, y.mask);
                assert!(x.image.max_abs_diff(&y.image).unwrap() <= 1.0 / 127.5);
            }
        }
    }
}
