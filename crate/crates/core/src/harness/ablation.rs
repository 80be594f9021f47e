//! Leave-one-domain-out runs: the variant ablation and the beta / momentum
//! sweeps.

use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::Result;
use crate::synthdata::{split_leave_one_out, DomainDataset};

use super::config::{Precision, TrainConfig, Variant};
use super::evaluate::{evaluate, EvalReport};
use super::train::{train_logged, with_threads, TrainOutcome};

pub const BETA_GRID: [f64; 5] = [1.0, 10.0, 100.0, 200.0, 400.0];
pub const MOMENTUM_GRID: [f64; 4] = [0.9, 0.99, 0.995, 0.999];

/// Held-out score of one (config, fold, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub held_out: usize,
    pub seed: u64,
    pub beta_max: f64,
    pub momentum: f64,
    /// Mean held-out Dice in `[0, 1]`.
    pub dsc: f64,
    pub asd: Option<f64>,
}

/// Trains on every domain but `cfg.held_out` and evaluates the student on it.
/// 64-bit runs are cast back to 32 bits after evaluation.
pub fn run_fold(cfg: &TrainConfig, corpus: &[DomainDataset]) -> Result<(TrainOutcome<f32>, EvalReport)> {
    run_fold_logged(cfg, corpus, &mut io::sink())
}

/// [`run_fold`] streaming the training log CSV into `log`.
pub fn run_fold_logged(cfg: &TrainConfig, corpus: &[DomainDataset], log: &mut dyn Write) -> Result<(TrainOutcome<f32>, EvalReport)> {
    let (pool, test) = split_leave_one_out(corpus, cfg.held_out)?;
    match cfg.precision {
        Precision::F32 => {
            let out = train_logged::<f32>(cfg, &pool, log)?;
            let report = evaluate(&out.student, &test)?;
            Ok((out, report))
        }
        Precision::F64 => {
            let out = train_logged::<f64>(cfg, &pool, log)?;
            let report = evaluate(&out.student, &test)?;
            Ok((
                TrainOutcome {
                    student: out.student.cast(),
                    teacher: out.teacher.cast(),
                    log: out.log,
                    counters: out.counters,
                },
                report,
            ))
        }
    }
}

/// Runs every config, in parallel on `threads` workers when asked. Each run
/// itself is single-threaded, so results do not depend on `threads`.
pub fn run_many(
    configs: &[TrainConfig],
    corpus: &[DomainDataset],
    threads: usize,
    on_done: &(dyn Fn(&RunResult) + Sync),
) -> Result<Vec<RunResult>> {
    let job = |cfg: &TrainConfig| -> Result<RunResult> {
        let cfg = TrainConfig { threads: 1, ..cfg.clone() };
        let (_, report) = run_fold(&cfg, corpus)?;
        let r = RunResult {
            variant: cfg.variant,
            held_out: cfg.held_out,
            seed: cfg.seed,
            beta_max: cfg.beta_max,
            momentum: cfg.momentum,
            dsc: report.mean_dsc(),
            asd: report.mean_asd(),
        };
        on_done(&r);
        Ok(r)
    };
    if threads > 1 {
        with_threads(threads, || configs.par_iter().map(job).collect())?
    } else {
        configs.iter().map(job).collect()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub folds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunResult>,
}

impl AblationReport {
    /// Seed-averaged held-out Dice of `variant` on `fold`, in `[0, 1]`.
    pub fn fold_dsc(&self, variant: Variant, fold: usize) -> f64 {
        mean(self.runs.iter().filter(|r| r.variant == variant && r.held_out == fold).map(|r| r.dsc))
    }

    /// Mean over folds of [`Self::fold_dsc`].
    pub fn mean_dsc(&self, variant: Variant) -> f64 {
        mean(self.folds.iter().map(|&f| self.fold_dsc(variant, f)))
    }

    pub fn variants(&self) -> Vec<Variant> {
        Variant::ALL
            .into_iter()
            .filter(|v| self.runs.iter().any(|r| r.variant == *v))
            .collect()
    }

    /// One row per variant: component flags, per-fold Dice (percent), Avg.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("#,variant,fda,con,ug");
        for f in &self.folds {
            write!(out, ",domain{f}").unwrap();
        }
        out.push_str(",Avg\n");
        for (i, v) in self.variants().into_iter().enumerate() {
            write!(out, "{i},{v}").unwrap();
            for flag in v.component_flags() {
                out.push_str(if flag { ",x" } else { "," });
            }
            for &f in &self.folds {
                write!(out, ",{:.4}", 100.0 * self.fold_dsc(v, f)).unwrap();
            }
            writeln!(out, ",{:.4}", 100.0 * self.mean_dsc(v)).unwrap();
        }
        out
    }
}

fn fold_list(corpus: &[DomainDataset]) -> Vec<usize> {
    corpus.iter().map(|d| d.domain).collect()
}

/// Every variant on every leave-one-out fold for every seed.
pub fn run_ablation(
    base: &TrainConfig,
    corpus: &[DomainDataset],
    seeds: &[u64],
    on_done: &(dyn Fn(&RunResult) + Sync),
) -> Result<AblationReport> {
    let folds = fold_list(corpus);
    let mut configs = Vec::new();
    for variant in Variant::ALL {
        for &held_out in &folds {
            for &seed in seeds {
                configs.push(TrainConfig {
                    variant,
                    held_out,
                    seed,
                    ..base.clone()
                });
            }
        }
    }
    let runs = run_many(&configs, corpus, base.threads, on_done)?;
    Ok(AblationReport {
        folds,
        seeds: seeds.to_vec(),
        runs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Momentum,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Momentum => "m",
        }
    }

    pub fn grid(self) -> &'static [f64] {
        match self {
            SweepParam::Beta => &BETA_GRID,
            SweepParam::Momentum => &MOMENTUM_GRID,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub folds: Vec<usize>,
    pub runs: Vec<(SweepParam, f64, RunResult)>,
}

impl SweepReport {
    pub fn cell(&self, param: SweepParam, value: f64, fold: usize) -> f64 {
        mean(
            self.runs
                .iter()
                .filter(|(p, v, r)| *p == param && *v == value && r.held_out == fold)
                .map(|(_, _, r)| r.dsc),
        )
    }

    /// Rows in grid order; which grids appear depends on the sweep that ran.
    pub fn rows(&self) -> Vec<(SweepParam, f64)> {
        let mut rows = Vec::new();
        for param in [SweepParam::Beta, SweepParam::Momentum] {
            for &value in param.grid() {
                if self.runs.iter().any(|(p, v, _)| *p == param && *v == value) {
                    rows.push((param, value));
                }
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,value");
        for f in &self.folds {
            write!(out, ",domain{f}").unwrap();
        }
        out.push_str(",Avg\n");
        for (param, value) in self.rows() {
            write!(out, "{},{value}", param.name()).unwrap();
            let cells: Vec<f64> = self.folds.iter().map(|&f| self.cell(param, value, f)).collect();
            for c in &cells {
                write!(out, ",{:.4}", 100.0 * c).unwrap();
            }
            writeln!(out, ",{:.4}", 100.0 * mean(cells)).unwrap();
        }
        out
    }
}

/// The full method over each grid value of each requested parameter, the
/// other parameter held at its `base` value.
pub fn run_sweep(
    base: &TrainConfig,
    corpus: &[DomainDataset],
    params: &[SweepParam],
    seeds: &[u64],
    on_done: &(dyn Fn(&RunResult) + Sync),
) -> Result<SweepReport> {
    let folds = fold_list(corpus);
    let mut keys = Vec::new();
    let mut configs = Vec::new();
    for &param in params {
        for &value in param.grid() {
            for &held_out in &folds {
                for &seed in seeds {
                    let mut cfg = TrainConfig {
                        variant: Variant::Full,
                        held_out,
                        seed,
                        ..base.clone()
                    };
                    match param {
                        SweepParam::Beta => cfg.beta_max = value,
                        SweepParam::Momentum => cfg.momentum = value,
                    }
                    keys.push((param, value));
                    configs.push(cfg);
                }
            }
        }
    }
    let results = run_many(&configs, corpus, base.threads, on_done)?;
    Ok(SweepReport {
        folds,
        runs: keys.into_iter().zip(results).map(|((p, v), r)| (p, v, r)).collect(),
    })
}
