//! The training loop.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fourier_aug;
use crate::losses::{self, LossValue};
use crate::segnet::{ema_update, Pass, SegNetwork};
use crate::synthdata::Sample;
use crate::tensor_core::{Rng, Scalar, Tensor, Var};
use crate::uncertainty::{Estimator, UncertaintyMap};

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;

const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const STEP: u64 = 3;

pub const LOG_HEADER: &str = "epoch,step,dice,uce,con,beta_eff,total";

/// One line of the training log. `dice` and `uce` sum over every
/// segmentation term of the step; `con` is the unweighted consistency term.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub dice: f64,
    pub uce: f64,
    pub con: f64,
    pub beta_eff: f64,
    pub total: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.step, self.dice, self.uce, self.con, self.beta_eff, self.total
        )
    }
}

/// How often each optional component ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub augmentations: usize,
    pub teacher_forwards: usize,
    pub uncertainty_estimates: usize,
    pub consistency_terms: usize,
    pub ema_updates: usize,
    pub optimizer_steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar = f32> {
    pub student: SegNetwork<T>,
    /// Left at its initial copy of the student for variants without consistency.
    pub teacher: SegNetwork<T>,
    pub log: Vec<LogRow>,
    pub counters: Counters,
}

/// Runs `f` on a rayon pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn check_pool(cfg: &TrainConfig, pool: &[Sample]) -> Result<Vec<usize>> {
    let first = pool
        .first()
        .ok_or_else(|| Error::InvalidArgument("training pool is empty".into()))?;
    for s in pool {
        if s.domain == cfg.held_out {
            return Err(Error::InvalidArgument(format!(
                "training pool contains the held-out domain {}",
                cfg.held_out
            )));
        }
        if s.image.shape() != first.image.shape() || s.mask.shape() != first.image.shape() {
            return Err(Error::ShapeMismatch {
                op: "train",
                left: first.image.shape().to_vec(),
                right: s.image.shape().to_vec(),
            });
        }
    }
    Ok(first.image.shape().to_vec())
}

/// Stacks `C x H x W` items into an `N x C x H x W` batch.
pub(crate) fn stack<T: Scalar>(items: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items.first().map_or(&[][..], |t| t.shape()));
    Ok(Tensor::concat_batch(items)?.reshape(&shape)?.cast())
}

/// Per-item augmentation against a different item of the same batch.
fn augment_batch<T: Scalar>(x: &Tensor<T>, alpha: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let j = if n > 1 { (i + 1 + rng.below(n - 1)) % n } else { i };
        let xi = x.narrow_batch(i, 1)?;
        let xj = x.narrow_batch(j, 1)?;
        let item_shape = &xi.shape()[1..];
        let aug = fourier_aug::augment(&xi.clone().reshape(item_shape)?, &xj.reshape(item_shape)?, rng, alpha)?;
        parts.push(aug.reshape(xi.shape())?);
    }
    Tensor::concat_batch(&parts.iter().collect::<Vec<_>>())
}

fn row_from(epoch: usize, step: usize, loss: &LossValue<impl Scalar>, beta_eff: f64) -> LogRow {
    let sum = |names: &[&str]| {
        loss.breakdown
            .iter()
            .filter(|c| names.contains(&c.name))
            .map(|c| c.value)
            .sum::<f64>()
    };
    LogRow {
        epoch,
        step,
        dice: sum(&["dice"]),
        uce: sum(&["ce", "uce"]),
        con: sum(&["con"]),
        beta_eff,
        total: loss.total(),
    }
}

/// Trains a student (and, for variants with consistency, an EMA teacher)
/// on `pool`. Every log row is handed to `on_row` as soon as it exists.
pub fn train_with<T: Scalar>(
    cfg: &TrainConfig,
    pool: &[Sample],
    mut on_row: impl FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let shape = check_pool(cfg, pool)?;
    let root = Rng::new(cfg.seed, 0);
    let mut student = SegNetwork::<T>::init(shape[0], cfg.dropout, &mut root.fork(&[INIT]))?;
    let mut teacher = student.clone_as_teacher();
    let mut adam = AdamState::new(student.params());
    let estimator = Estimator {
        passes: cfg.passes,
        sigma: cfg.sigma,
        parallel: cfg.threads > 1,
    };
    let variant = cfg.variant;
    let mut counters = Counters::default();
    let mut log = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..pool.len()).collect();

    for epoch in 0..cfg.epochs {
        root.fork(&[SHUFFLE, epoch as u64]).shuffle(&mut order);
        let beta_eff = if variant.uses_consistency() {
            losses::beta_rampup(epoch, cfg.epochs, cfg.beta_max)
        } else {
            0.0
        };
        for batch in order.chunks(cfg.batch_size) {
            let rng = root.fork(&[STEP, step as u64]);
            let x: Tensor<T> = stack(&batch.iter().map(|&i| &pool[i].image).collect::<Vec<_>>())?;
            let y: Tensor<T> = stack(&batch.iter().map(|&i| &pool[i].mask).collect::<Vec<_>>())?;

            let ids = || {
                let ids: Vec<String> = batch
                    .iter()
                    .map(|&i| format!("domain{}/{}", pool[i].domain, pool[i].index))
                    .collect();
                ids.join(", ")
            };
            let forward = (|| -> Result<_> {
                let x_hat = if variant.uses_augmentation() {
                    counters.augmentations += batch.len();
                    Some(augment_batch(&x, cfg.alpha, &mut rng.fork(&[1]))?)
                } else {
                    None
                };
                let g_xhat = if variant.uses_consistency() {
                    counters.teacher_forwards += 1;
                    let xh = x_hat.as_ref().expect("consistency implies augmentation");
                    Some(teacher.forward(xh, Pass::Deterministic, &mut rng.fork(&[2]))?)
                } else {
                    None
                };
                let u = if variant.uses_uncertainty() {
                    counters.uncertainty_estimates += 1;
                    let xh = x_hat.as_ref().expect("uncertainty implies augmentation");
                    estimator.estimate(&teacher, xh, &mut rng.fork(&[3]))?.1
                } else {
                    UncertaintyMap::constant(y.shape(), T::one())
                };

                let binding = student.bind();
                let mut drop_rng = rng.fork(&[4]);
                let train_pass = Pass::Stochastic { noise_sigma: 0.0 };
                let f_x = student.forward_var(&binding, &Var::constant(x), train_pass, &mut drop_rng)?;
                let loss = match (&x_hat, &g_xhat) {
                    (None, _) => losses::hybrid_seg_loss(&f_x, &y)?,
                    (Some(xh), None) => {
                        let f_xhat = student.forward_var(&binding, &Var::constant(xh.clone()), train_pass, &mut drop_rng)?;
                        losses::hybrid_seg_loss(&f_x, &y)?.plus(losses::hybrid_seg_loss(&f_xhat, &y)?)?
                    }
                    (Some(xh), Some(g)) => {
                        counters.consistency_terms += 1;
                        let f_xhat = student.forward_var(&binding, &Var::constant(xh.clone()), train_pass, &mut drop_rng)?;
                        losses::overall_loss(&f_x, &f_xhat, g, &y, &u, beta_eff)?
                    }
                };
                Ok((binding, loss))
            })();
            let numerical = |e| match e {
                Error::NonFinite { op } => Error::Numerical(format!(
                    "non-finite value from {op} at epoch {epoch}, step {step}; batch samples [{}]",
                    ids()
                )),
                other => other,
            };
            let (binding, loss) = forward.map_err(numerical)?;

            let row = row_from(epoch, step, &loss, beta_eff);
            if !row.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, step {step} (dice {}, uce {}, con {}, beta {}); batch samples [{}]",
                    row.dice,
                    row.uce,
                    row.con,
                    row.beta_eff,
                    ids()
                )));
            }
            on_row(&row)?;
            log.push(row);

            loss.value.backward().map_err(numerical)?;
            student.absorb_grads(&binding)?;
            adam_step(student.params_mut(), &mut adam, cfg.learning_rate)?;
            counters.optimizer_steps += 1;
            if variant.uses_consistency() {
                ema_update(&mut teacher, &student, cfg.momentum)?;
                counters.ema_updates += 1;
            }
            step += 1;
        }
    }
    Ok(TrainOutcome {
        student,
        teacher,
        log,
        counters,
    })
}

pub fn train<T: Scalar>(cfg: &TrainConfig, pool: &[Sample]) -> Result<TrainOutcome<T>> {
    train_with(cfg, pool, |_| Ok(()))
}

/// [`train_with`] streaming the CSV log (header first) into `out`.
pub fn train_logged<T: Scalar>(cfg: &TrainConfig, pool: &[Sample], out: &mut dyn Write) -> Result<TrainOutcome<T>> {
    let io = |e| Error::io("training log", e);
    writeln!(out, "{LOG_HEADER}").map_err(io)?;
    let result = train_with(cfg, pool, |row| writeln!(out, "{}", row.to_csv()).map_err(io));
    out.flush().map_err(io)?;
    result
}
