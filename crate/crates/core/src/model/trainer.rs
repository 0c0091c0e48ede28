use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::params::ParamSet;
use crate::error::{Result, SsrError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro: Option<f64>,
    pub val_top1: Option<f64>,
    /// Share of validation predictions equal to the training majority label;
    /// 1.0 means the model collapsed onto the dominant class.
    pub dominant_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    /// Training sequences skipped because they lacked relations.
    pub skipped_incomplete: usize,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.best_epoch.and_then(|e| self.epochs.get(e - 1))
    }
}

pub(crate) struct EpochEval {
    pub macro_top1: f64,
    pub top1: f64,
    pub dominant_fraction: f64,
}

pub(crate) struct LoopSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub stop_at_val_macro: Option<f64>,
}

/// Mini-batch Adam over `n` examples. Keeps the parameters of the epoch with
/// the best validation macro accuracy, or the last epoch without validation.
pub(crate) fn run<L, E>(
    params: &mut ParamSet,
    n: usize,
    spec: &LoopSpec,
    mut loss_grad: L,
    mut evaluate: E,
) -> Result<TrainLog>
where
    L: FnMut(&ParamSet, &[usize], &mut ParamSet) -> Result<f64>,
    E: FnMut(&ParamSet) -> Result<Option<EpochEval>>,
{
    let mut log = TrainLog::default();
    if spec.epochs == 0 {
        return Ok(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut opt = Adam::new(params, spec.learning_rate, spec.optimizer);
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, ParamSet)> = None;
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grads.fill(0.0);
            let loss = loss_grad(params, batch, &mut grads)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(SsrError::NonFiniteLoss { epoch });
            }
            total += loss * batch.len() as f64;
            opt.step(params, &grads);
        }
        let train_loss = total / n.max(1) as f64;
        let eval = evaluate(params)?;
        let entry = EpochLog {
            epoch,
            train_loss,
            val_macro: eval.as_ref().map(|e| e.macro_top1),
            val_top1: eval.as_ref().map(|e| e.top1),
            dominant_fraction: eval.as_ref().map(|e| e.dominant_fraction),
        };
        match &eval {
            Some(e) => info!(
                "epoch {epoch}: loss {train_loss:.4} val macro {:.4} top1 {:.4} dominant {:.3}",
                e.macro_top1, e.top1, e.dominant_fraction
            ),
            None => info!("epoch {epoch}: loss {train_loss:.4}"),
        }
        log.epochs.push(entry);
        match eval {
            Some(e) => {
                if best.as_ref().is_none_or(|(b, _)| e.macro_top1 > *b) {
                    debug!("epoch {epoch} is the best so far");
                    best = Some((e.macro_top1, params.clone()));
                    log.best_epoch = Some(epoch);
                }
                if spec.stop_at_val_macro.is_some_and(|t| e.macro_top1 >= t) {
                    info!("validation macro reached {:.4}, stopping", e.macro_top1);
                    break;
                }
            }
            None => log.best_epoch = Some(epoch),
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(log)
}
