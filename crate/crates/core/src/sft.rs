//! Supervised cold start: next-token likelihood training on filtered
//! chain-of-thought targets.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CoTRecord, Sample};
use crate::error::{config_err, Error, Result};
use crate::grammar::parse;
use crate::policy::{logprob_logit_grads, PolicyModel, PolicyParams};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 8,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err("sft learning_rate must be finite and nonnegative"));
        }
        if self.epochs == 0 {
            return Err(config_err("sft epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("sft batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Cosine decay from `base` at step 0 towards 0 at `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// A training pair: the conditioning sample and its target token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub sample: Sample,
    pub tokens: Vec<TokenId>,
}

/// Joins CoT records to their samples and tokenizes the targets. Records
/// whose sample is unknown are an error.
pub fn prepare_examples(model: &PolicyModel, samples: &[Sample], records: &[CoTRecord]) -> Result<Vec<SftExample>> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    records
        .iter()
        .map(|r| {
            let sample = by_id
                .get(r.sample_id.as_str())
                .ok_or_else(|| Error::Vocab(format!("unknown sample id {}", r.sample_id)))?;
            let out = parse(&r.rendered_text, model.vocab.profile())?;
            Ok(SftExample {
                sample: (*sample).clone(),
                tokens: model.vocab.encode(&out)?,
            })
        })
        .collect()
}

/// Summed negative log-likelihood of one target sequence.
pub fn sequence_nll(model: &PolicyModel, p: &PolicyParams, ex: &SftExample) -> Result<f64> {
    let ctx = model.encode(p, &ex.sample)?;
    Ok(-model.sequence_logprob(p, &ctx, &ex.tokens)?.iter().sum::<f64>())
}

/// Per-token NLL averaged within each sequence, then over the batch.
pub fn sft_loss(model: &PolicyModel, p: &PolicyParams, batch: &[&SftExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("sft batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        total += sequence_nll(model, p, ex)? / ex.tokens.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// Loss and its gradient in one pass.
pub fn sft_loss_and_grad(model: &PolicyModel, p: &PolicyParams, batch: &[&SftExample]) -> Result<(f64, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("sft batch"));
    }
    let b = batch.len() as f64;
    let mut grad = PolicyParams::zeros(*p.layout());
    let mut loss = 0.0;
    for ex in batch {
        let ctx = model.encode(p, &ex.sample)?;
        let trace = model.forward(p, &ctx, &ex.tokens)?;
        let n = ex.tokens.len() as f64;
        loss -= trace.logprobs.iter().sum::<f64>() / n;
        let w = vec![1.0; ex.tokens.len()];
        let dlogits = logprob_logit_grads(&trace, &w);
        model.backward(p, &ctx, &trace, &dlogits, -1.0 / (n * b), &mut grad);
    }
    Ok((loss / b, grad))
}

/// Minibatch SGD with cosine decay over all steps. Returns the updated
/// parameters and the mean training loss of each epoch (measured on each
/// batch before its update).
pub fn sft_train(
    model: &PolicyModel,
    params: &PolicyParams,
    data: &[SftExample],
    cfg: &SftConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(config_err("sft dataset is empty"));
    }
    let mut p = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SftExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = sft_loss_and_grad(model, &p, &batch)?;
            epoch_loss += loss * batch.len() as f64;
            p.axpy(-cosine_lr(cfg.learning_rate, step, total), &grad);
            step += 1;
        }
        if !p.is_finite() {
            return Err(Error::Degenerate("sft produced non-finite parameters"));
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok((p, curve))
}
