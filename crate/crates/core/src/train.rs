//! Mini-batch training and evaluation.
//!
//! Each utterance gets its own forward/backward pass over its true
//! (unpadded) length; its loss is scaled by `1/B` and gradients accumulate
//! into the parameter store, so one optimizer step sees the batch mean.
//! Steps run on the calling thread; evaluation fans out over utterances and
//! reduces in input order, so results do not depend on thread count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{AdamConfig, AdamState, Float, Tape};
use crate::data::{make_batches, Utterance};
use crate::error::{Error, Result};
use crate::models::{argmax, unpadded, validate_lambda, SluModel};
use crate::rng::SeededRng;
use crate::transformer::Ctx;

/// Which loss drives the updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Intent cross-entropy only.
    Slu,
    /// Teacher-forced transcript loss only.
    Asr,
    /// `slu + λ·asr`.
    MultiTask { lambda: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::MultiTask { lambda } => validate_lambda(*lambda),
            _ => Ok(()),
        }
    }

    fn uses_asr(&self) -> bool {
        !matches!(self, Self::Slu)
    }

    fn uses_slu(&self) -> bool {
        !matches!(self, Self::Asr)
    }

    fn total(&self, slu: f64, asr: Option<f64>) -> f64 {
        match self {
            Self::Slu => slu,
            Self::Asr => asr.unwrap_or(0.0),
            Self::MultiTask { lambda } => slu + lambda * asr.unwrap_or(0.0),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Slu => f.write_str("slu"),
            Self::Asr => f.write_str("asr"),
            Self::MultiTask { lambda } => write!(f, "mt:{lambda}"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let o = match s {
            "slu" => Self::Slu,
            "asr" => Self::Asr,
            _ => {
                let lambda = s
                    .strip_prefix("mt:")
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))?;
                Self::MultiTask { lambda }
            }
        };
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub objective: Objective,
    /// Stop after this many epochs without a lower validation total loss.
    pub patience: Option<usize>,
    /// Report measured epoch time instead of 0 in `wall_seconds`.
    pub record_time: bool,
    /// Compute train-split metrics with a clean pass after each epoch
    /// instead of running averages collected during the updates.
    pub eval_train: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            objective: Objective::Slu,
            patience: None,
            record_time: false,
            eval_train: true,
        }
    }
}

/// One CSV row of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub intent_accuracy: f64,
    pub slu_loss: f64,
    /// Mean over utterances of the summed per-token loss.
    pub asr_loss: Option<f64>,
    pub asr_loss_per_token: Option<f64>,
    /// Teacher-forced next-token accuracy.
    pub token_accuracy: Option<f64>,
    pub total_loss: f64,
    pub wall_seconds: f64,
}

pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "split",
    "intent_accuracy",
    "slu_loss",
    "asr_loss",
    "asr_loss_per_token",
    "token_accuracy",
    "total_loss",
    "wall_seconds",
];

/// Aggregate quality of a model on a set of utterances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub count: usize,
    pub intent_accuracy: f64,
    pub slu_loss: f64,
    pub asr_loss: Option<f64>,
    pub asr_loss_per_token: Option<f64>,
    pub token_accuracy: Option<f64>,
}

impl EvalStats {
    fn row(&self, epoch: usize, split: &str, objective: &Objective, wall: f64) -> MetricsRow {
        MetricsRow {
            epoch,
            split: split.into(),
            intent_accuracy: self.intent_accuracy,
            slu_loss: self.slu_loss,
            asr_loss: self.asr_loss,
            asr_loss_per_token: self.asr_loss_per_token,
            token_accuracy: self.token_accuracy,
            total_loss: objective.total(self.slu_loss, self.asr_loss),
            wall_seconds: wall,
        }
    }
}

struct UttStats {
    correct: bool,
    slu: f64,
    asr: Option<(f64, usize, usize)>,
}

/// Check that utterances fit the model before any work is done.
pub fn check_utterances<T: Float>(model: &SluModel<T>, utts: &[Utterance]) -> Result<()> {
    let cfg = &model.cfg;
    for u in utts {
        if u.features.dim() != cfg.input_dim {
            return Err(Error::Input(format!(
                "utterance `{}` has feature dimension {}, model expects {}",
                u.id,
                u.features.dim(),
                cfg.input_dim
            )));
        }
        if u.intent >= cfg.intent_count {
            return Err(Error::Input(format!(
                "utterance `{}` intent id {} out of range",
                u.id, u.intent
            )));
        }
        if let Some(&t) = u.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "utterance `{}` token id {t} ≥ vocabulary size",
                u.id
            )));
        }
    }
    Ok(())
}

fn eval_one<T: Float>(model: &SluModel<T>, u: &Utterance, with_asr: bool) -> Result<UttStats> {
    let mut tape = Tape::new();
    let x = model.input(&mut tape, &u.feature_tensor())?;
    let mut ctx = Ctx::new(&mut tape, &model.params);
    let enc = model.encode(&mut ctx, x)?;
    let logits = model.intent_logits(&mut ctx, enc)?;
    let correct = argmax(ctx.tape.value(logits)) == u.intent;
    let slu = ctx.tape.cross_entropy_ids(logits, &[u.intent])?;
    let asr = if with_asr {
        let seq = unpadded(&u.tokens)?;
        let targets = &seq[1..];
        let logits = model.decode_logits(&mut ctx, &seq[..seq.len() - 1], enc)?;
        let loss = ctx.tape.cross_entropy_ids(logits, targets)?;
        let v = model.cfg.vocab_size;
        let values = ctx.tape.value(logits);
        let hits = targets
            .iter()
            .enumerate()
            .filter(|(i, &t)| argmax(&values[i * v..(i + 1) * v]) == t)
            .count();
        Some((ctx.tape.value(loss)[0].as_f64(), targets.len(), hits))
    } else {
        None
    };
    Ok(UttStats {
        correct,
        slu: tape.value(slu)[0].as_f64(),
        asr,
    })
}

fn aggregate(stats: &[UttStats]) -> EvalStats {
    let n = stats.len().max(1) as f64;
    let asr = stats
        .iter()
        .map(|s| s.asr)
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty());
    let (asr_loss, per_token, token_acc) = match asr {
        Some(v) => {
            let loss: f64 = v.iter().map(|a| a.0).sum();
            let tokens: usize = v.iter().map(|a| a.1).sum();
            let hits: usize = v.iter().map(|a| a.2).sum();
            (
                Some(loss / n),
                Some(loss / tokens as f64),
                Some(hits as f64 / tokens as f64),
            )
        }
        None => (None, None, None),
    };
    EvalStats {
        count: stats.len(),
        intent_accuracy: stats.iter().filter(|s| s.correct).count() as f64 / n,
        slu_loss: stats.iter().map(|s| s.slu).sum::<f64>() / n,
        asr_loss,
        asr_loss_per_token: per_token,
        token_accuracy: token_acc,
    }
}

/// Intent accuracy (argmax exact match) and mean losses. With `with_asr`,
/// also teacher-forced transcript loss and token accuracy. Read-only.
pub fn evaluate<T: Float>(model: &SluModel<T>, utts: &[Utterance], with_asr: bool) -> Result<EvalStats> {
    check_utterances(model, utts)?;
    let stats: Vec<UttStats> = utts
        .par_iter()
        .map(|u| eval_one(model, u, with_asr))
        .collect::<Result<_>>()?;
    Ok(aggregate(&stats))
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub epochs_run: usize,
    pub steps: u64,
}

/// Per-epoch batching seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train<T: Float>(
    model: &mut SluModel<T>,
    train: &[Utterance],
    valid: &[Utterance],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    train_with(model, train, valid, opts, |_, _, _| Ok(()))
}

/// [`train`] with a hook called after every epoch with the epoch number,
/// the model and the rows emitted so far.
pub fn train_with<T: Float>(
    model: &mut SluModel<T>,
    train: &[Utterance],
    valid: &[Utterance],
    opts: &TrainOptions,
    mut hook: impl FnMut(usize, &SluModel<T>, &[MetricsRow]) -> Result<()>,
) -> Result<TrainReport> {
    opts.objective.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    check_utterances(model, train)?;
    check_utterances(model, valid)?;
    let objective = opts.objective;
    let dropout = model.cfg.dropout;
    let mut adam = AdamState::new(opts.adam);
    let mut drop_rng = SeededRng::derived(opts.seed, "dropout");
    let mut rows = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let mut running = Vec::with_capacity(train.len());
        for batch in make_batches(train, opts.batch_size, epoch_seed(opts.seed, epoch))? {
            model.params.zero_grad();
            let scale = T::of(1.0 / batch.len() as f64);
            for i in 0..batch.len() {
                let mut tape = Tape::new();
                let x = model.input(&mut tape, &batch.item_features(i))?;
                let tokens = batch.item_tokens(i);
                let intent = batch.intents[i];
                let mut ctx = Ctx::new(&mut tape, &model.params);
                if dropout > 0.0 {
                    ctx = ctx.with_dropout(dropout, &mut drop_rng);
                }
                let (loss, slu, asr) = match objective {
                    Objective::Slu => {
                        let enc = model.encode(&mut ctx, x)?;
                        let l = model.slu_loss(&mut ctx, enc, intent)?;
                        (l, Some(l), None)
                    }
                    Objective::Asr => {
                        let enc = model.encode(&mut ctx, x)?;
                        let l = model.asr_loss(&mut ctx, enc, tokens)?;
                        (l, None, Some(l))
                    }
                    Objective::MultiTask { lambda } => {
                        let m = model.multitask_loss(&mut ctx, x, tokens, intent, lambda)?;
                        (m.total, Some(m.slu), Some(m.asr))
                    }
                };
                if !opts.eval_train {
                    let n_tok = batch.token_lengths[i] - 1;
                    running.push(UttStats {
                        correct: false,
                        slu: slu.map_or(0.0, |v| tape.value(v)[0].as_f64()),
                        asr: asr.map(|v| (tape.value(v)[0].as_f64(), n_tok, 0)),
                    });
                }
                let scaled = tape.scale(loss, scale);
                tape.backward(scaled, &mut model.params)?;
            }
            adam.step(&mut model.params)?;
        }
        let with_asr = objective.uses_asr();
        let mut train_stats = if opts.eval_train {
            evaluate(model, train, with_asr)?
        } else {
            let mut s = aggregate(&running);
            s.intent_accuracy = f64::NAN;
            s.token_accuracy = None;
            s
        };
        if !objective.uses_slu() && !opts.eval_train {
            train_stats.slu_loss = f64::NAN;
        }
        let wall = if opts.record_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        rows.push(train_stats.row(epoch, "train", &objective, wall));
        epochs_run = epoch;
        if !valid.is_empty() {
            let v = evaluate(model, valid, with_asr)?.row(epoch, "valid", &objective, wall);
            let total = v.total_loss;
            rows.push(v);
            if total < best {
                best = total;
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        hook(epoch, model, &rows)?;
        if opts.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    Ok(TrainReport {
        rows,
        epochs_run,
        steps: adam.step_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objectives_parse_and_validate() {
        assert_eq!("slu".parse::<Objective>().unwrap(), Objective::Slu);
        assert_eq!(
            "mt:0.5".parse::<Objective>().unwrap(),
            Objective::MultiTask { lambda: 0.5 }
        );
        assert!(matches!("mt:1.5".parse::<Objective>(), Err(Error::Config(_))));
        assert!("mt".parse::<Objective>().is_err());
        assert_eq!(Objective::MultiTask { lambda: 0.1 }.to_string(), "mt:0.1");
    }

    #[test]
    fn total_follows_the_objective() {
        assert_eq!(Objective::MultiTask { lambda: 0.5 }.total(2.0, Some(1.0)), 2.5);
        assert_eq!(Objective::Asr.total(2.0, Some(1.0)), 1.0);
        assert_eq!(Objective::Slu.total(2.0, None), 2.0);
    }
}
