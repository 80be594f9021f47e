//! Held-out evaluation of a student network.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{self, BinaryMask, DEFAULT_THRESHOLD};
use crate::segnet::{Pass, SegNetwork};
use crate::synthdata::{load_mask, read_manifest, sample_paths, save_pgm, write_manifest, ManifestEntry, Range, Sample};
use crate::tensor_core::{Rng, Scalar, Tensor};

use super::train::stack;

const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub domain: usize,
    pub index: usize,
    /// Dice in `[0, 1]`.
    pub dsc: f64,
    /// `None` when either mask is empty.
    pub asd: Option<f64>,
}

/// Per-domain means, with ASD averaged over the samples where it is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSummary {
    pub domain: usize,
    pub samples: usize,
    pub dsc: f64,
    pub asd: Option<f64>,
    pub asd_missing: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<SampleScore>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn score(domain: usize, index: usize, pred: &BinaryMask, gt: &BinaryMask) -> Result<SampleScore> {
    let dsc = metrics::dsc(pred, gt)?;
    let asd = match metrics::asd(pred, gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SampleScore { domain, index, dsc, asd })
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<DomainSummary> {
        let mut by_domain: BTreeMap<usize, Vec<&SampleScore>> = BTreeMap::new();
        for s in &self.scores {
            by_domain.entry(s.domain).or_default().push(s);
        }
        by_domain
            .into_iter()
            .map(|(domain, items)| DomainSummary {
                domain,
                samples: items.len(),
                dsc: mean(items.iter().map(|s| s.dsc)).unwrap_or(0.0),
                asd: mean(items.iter().filter_map(|s| s.asd)),
                asd_missing: items.iter().filter(|s| s.asd.is_none()).count(),
            })
            .collect()
    }

    /// Mean over domains of the per-domain mean Dice, in `[0, 1]`.
    pub fn mean_dsc(&self) -> f64 {
        mean(self.summaries().iter().map(|d| d.dsc)).unwrap_or(0.0)
    }

    pub fn mean_asd(&self) -> Option<f64> {
        mean(self.summaries().iter().filter_map(|d| d.asd))
    }

    pub fn asd_missing(&self) -> usize {
        self.scores.iter().filter(|s| s.asd.is_none()).count()
    }

    /// Per-sample rows, a blank line, then a summary table with one column
    /// per domain and an `Avg` column. Dice is reported in percent, ASD in
    /// pixels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,sample,dsc,asd\n");
        for s in &self.scores {
            writeln!(out, "{},{},{:.6},{}", s.domain, s.index, 100.0 * s.dsc, fmt_opt(s.asd)).unwrap();
        }
        let sums = self.summaries();
        out.push_str("\nmetric");
        for d in &sums {
            write!(out, ",domain{}", d.domain).unwrap();
        }
        out.push_str(",Avg\nDSC");
        for d in &sums {
            write!(out, ",{:.6}", 100.0 * d.dsc).unwrap();
        }
        writeln!(out, ",{:.6}", 100.0 * self.mean_dsc()).unwrap();
        out.push_str("ASD");
        for d in &sums {
            write!(out, ",{}", fmt_opt(d.asd)).unwrap();
        }
        writeln!(out, ",{}", fmt_opt(self.mean_asd())).unwrap();
        out.push_str("ASD_missing");
        for d in &sums {
            write!(out, ",{}", d.asd_missing).unwrap();
        }
        writeln!(out, ",{}", self.asd_missing()).unwrap();
        out
    }
}

/// Deterministic student predictions for `samples`, `1 x H x W` each.
pub fn predict<T: Scalar>(student: &SegNetwork<T>, samples: &[Sample]) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(samples.len());
    // Deterministic passes draw nothing; the generator is only a formality.
    let mut rng = Rng::new(0, 0);
    for chunk in samples.chunks(EVAL_BATCH) {
        let x: Tensor<T> = stack(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let p = student.forward(&x, Pass::Deterministic, &mut rng)?;
        let item = p.shape()[1..].to_vec();
        for i in 0..chunk.len() {
            out.push(p.narrow_batch(i, 1)?.reshape(&item)?);
        }
    }
    Ok(out)
}

/// Scores the student on `samples` after binarizing at 0.5.
pub fn evaluate<T: Scalar>(student: &SegNetwork<T>, samples: &[Sample]) -> Result<EvalReport> {
    let preds = predict(student, samples)?;
    let scores = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| {
            let pred = metrics::binarize(p, DEFAULT_THRESHOLD)?;
            let gt = metrics::binarize(&s.mask, DEFAULT_THRESHOLD)?;
            score(s.domain, s.index, &pred, &gt)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport { scores })
}

/// Writes binarized predictions as `domain{k}/msk{i}.pgm` under `dir`, with
/// a manifest in the corpus format so the directory can be scored by
/// [`evaluate_dirs`].
pub fn write_predictions<T: Scalar>(dir: &Path, samples: &[Sample], preds: &[Tensor<T>]) -> Result<()> {
    if samples.len() != preds.len() {
        return Err(Error::InvalidArgument(format!("{} samples but {} predictions", samples.len(), preds.len())));
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let mask = metrics::binarize(p, DEFAULT_THRESHOLD)?.to_tensor::<f64>();
        let (img, msk) = sample_paths(s.domain, s.index);
        save_pgm(&mask, Range::Unit, &dir.join(&msk))?;
        entries.push(ManifestEntry {
            domain: s.domain,
            index: s.index,
            image: img.into(),
            mask: msk.into(),
        });
    }
    write_manifest(dir, &entries)
}

/// Scores every mask listed in `gt_dir`'s manifest against the file at the
/// same relative path under `pred_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalReport> {
    let mut scores = Vec::new();
    for e in read_manifest(gt_dir)? {
        let gt = load_mask(&gt_dir.join(&e.mask))?;
        let pred = load_mask(&pred_dir.join(&e.mask))?;
        if pred.shape() != gt.shape() {
            return Err(Error::ShapeMismatch {
                op: "evaluate_dirs",
                left: pred.shape().to_vec(),
                right: gt.shape().to_vec(),
            });
        }
        let pred = metrics::binarize(&pred, DEFAULT_THRESHOLD)?;
        let gt = metrics::binarize(&gt, DEFAULT_THRESHOLD)?;
        scores.push(score(e.domain, e.index, &pred, &gt)?);
    }
    Ok(EvalReport { scores })
}
