//! Group-relative policy optimization with a KL anchor to the supervised
//! policy, hard-group detection and polarity-hint resampling.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::error::{config_err, Error, Result};
use crate::policy::{kl_divergence, PolicyModel, PolicyParams, Rollout, Trace};
use crate::rewards::{total_reward, RewardBreakdown, RewardWeights};
use crate::sft::cosine_lr;
use crate::vocab::polarity_block;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub beta: f64,
    /// A group is hard when every reward is strictly below this value.
    pub hard_threshold: f64,
    pub weights: RewardWeights,
    pub learning_rate: f64,
    pub steps: usize,
    /// Groups per optimizer step.
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub hint_enabled: bool,
    pub include_hard: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            beta: 0.1,
            hard_threshold: 2.0,
            weights: RewardWeights::default(),
            learning_rate: 0.1,
            steps: 300,
            batch_size: 16,
            temperature: 1.0,
            seed: 0,
            hint_enabled: true,
            include_hard: true,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.group_size < 2 {
            return Err(config_err("group_size must be at least 2"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(config_err("beta must be finite and nonnegative"));
        }
        if !(self.hard_threshold >= 0.0) {
            return Err(config_err("hard_threshold must be nonnegative"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err("grpo learning_rate must be finite and nonnegative"));
        }
        if !(self.temperature > 0.0) {
            return Err(config_err("temperature must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_err("grpo batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Ablation arms of the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Full,
    NoHint,
    NoHard,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::NoHint, Arm::NoHard];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoHint => "no_hint",
            Arm::NoHard => "no_hard",
        }
    }

    /// `(hint_enabled, include_hard)` of the arm.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Arm::Full => (true, true),
            Arm::NoHint => (false, true),
            Arm::NoHard => (true, false),
        }
    }

    pub fn apply(self, cfg: &GrpoConfig) -> GrpoConfig {
        let (hint_enabled, include_hard) = self.flags();
        GrpoConfig {
            hint_enabled,
            include_hard,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown arm '{s}' (expected full, no_hint or no_hard)")))
    }
}

/// G rollouts of one sample with their rewards and standardized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub sample: Sample,
    pub rollouts: Vec<Rollout>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub hinted: bool,
}

impl RolloutGroup {
    pub fn sample_id(&self) -> &str {
        &self.sample.id
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `(r - mean(r)) / std(r)` with the population std; all zeros when the
/// rewards are constant.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Length(rewards.len()));
    }
    let m = mean(rewards);
    let var = rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / rewards.len() as f64;
    let std = var.sqrt();
    if std == 0.0 || rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - m) / std).collect())
}

/// True iff every reward in the group is strictly below `tau`.
pub fn detect_hard(group: &RolloutGroup, tau: f64) -> bool {
    group.rewards.iter().all(|&r| r < tau)
}

/// Samples `group_size` rollouts sharing `forced_prefix` and scores them.
pub fn rollout_group<R: Rng + ?Sized>(
    model: &PolicyModel,
    p: &PolicyParams,
    sample: &Sample,
    cfg: &GrpoConfig,
    rng: &mut R,
    forced_prefix: &[crate::vocab::TokenId],
) -> Result<RolloutGroup> {
    if cfg.group_size < 2 {
        return Err(Error::Length(cfg.group_size));
    }
    let ctx = model.encode(p, sample)?;
    let profile = model.vocab.profile();
    let mut rollouts = Vec::with_capacity(cfg.group_size);
    let mut breakdowns = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let r = model.sample_sequence(p, &ctx, cfg.temperature, rng, forced_prefix)?;
        let text = model.vocab.decode_text(&r.tokens);
        breakdowns.push(total_reward(&text, sample, &cfg.weights, profile));
        rollouts.push(r);
    }
    let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
    let advantages = compute_advantages(&rewards)?;
    Ok(RolloutGroup {
        sample: sample.clone(),
        rollouts,
        breakdowns,
        rewards,
        advantages,
        hinted: !forced_prefix.is_empty(),
    })
}

/// Regenerates the group with the gold polarity block forced at the start.
pub fn hint_resample<R: Rng + ?Sized>(
    model: &PolicyModel,
    p: &PolicyParams,
    sample: &Sample,
    cfg: &GrpoConfig,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let prefix = polarity_block(&model.vocab, sample.gold_polarity);
    let mut g = rollout_group(model, p, sample, cfg, rng, &prefix)?;
    g.hinted = true;
    Ok(g)
}

/// Exact `KL(pi_theta || pi_ref)` of the next-token distributions after `prefix`.
pub fn kl_term(
    model: &PolicyModel,
    p: &PolicyParams,
    reference: &PolicyParams,
    sample: &Sample,
    prefix: &[crate::vocab::TokenId],
) -> Result<f64> {
    let cp = model.encode(p, sample)?;
    let cr = model.encode(reference, sample)?;
    let a = model.token_distribution(p, &cp, prefix)?;
    let b = model.token_distribution(reference, &cr, prefix)?;
    Ok(kl_divergence(&a, &b))
}

/// Loss contribution and logit gradients of one rollout:
/// `sum_{t >= forced} (-A log pi(o_t) + beta KL_t)`.
fn rollout_terms(
    trace: &Trace,
    ref_trace: &Trace,
    forced: usize,
    advantage: f64,
    beta: f64,
    want_grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let n = trace.tokens.len();
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(if want_grad { n } else { 0 });
    for t in 0..n {
        let pr = &trace.probs[t];
        if t < forced {
            if want_grad {
                dlogits.push(vec![0.0; pr.len()]);
            }
            continue;
        }
        let q = &ref_trace.probs[t];
        let kl = if beta != 0.0 { kl_divergence(pr, q) } else { 0.0 };
        loss += -advantage * trace.logprobs[t] + beta * kl;
        if want_grad {
            let tok = trace.tokens[t].index();
            let mut g: Vec<f64> = pr.iter().map(|x| advantage * x).collect();
            g[tok] -= advantage;
            if beta != 0.0 {
                for (gj, (pj, qj)) in g.iter_mut().zip(pr.iter().zip(q)) {
                    if *pj > 0.0 {
                        *gj += beta * pj * (pj.ln() - qj.ln() - kl);
                    }
                }
            }
            dlogits.push(g);
        }
    }
    (loss, dlogits)
}

fn grpo_eval(
    model: &PolicyModel,
    p: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    beta: f64,
    want_grad: bool,
) -> Result<(f64, PolicyParams)> {
    if groups.is_empty() {
        return Err(Error::Empty("grpo batch"));
    }
    let mut grad = PolicyParams::zeros(*p.layout());
    let mut loss = 0.0;
    let n_groups = groups.len() as f64;
    for g in groups {
        let scale = 1.0 / (g.rollouts.len() as f64 * n_groups);
        let ctx = model.encode(p, &g.sample)?;
        let ref_ctx = model.encode(reference, &g.sample)?;
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let trace = model.forward(p, &ctx, &r.tokens)?;
            let ref_trace = model.forward(reference, &ref_ctx, &r.tokens)?;
            let (l, dl) = rollout_terms(&trace, &ref_trace, r.forced_prefix_len, adv, beta, want_grad);
            loss += scale * l;
            if want_grad {
                model.backward(p, &ctx, &trace, &dl, scale, &mut grad);
            }
        }
    }
    Ok((loss, grad))
}

/// Negated group objective, averaged `1/G` within a group and over groups.
/// Advantages are constants; forced positions carry neither a likelihood
/// nor a KL term.
pub fn grpo_loss(
    model: &PolicyModel,
    p: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    beta: f64,
) -> Result<f64> {
    Ok(grpo_eval(model, p, reference, groups, beta, false)?.0)
}

pub fn grpo_loss_and_grad(
    model: &PolicyModel,
    p: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    beta: f64,
) -> Result<(f64, PolicyParams)> {
    grpo_eval(model, p, reference, groups, beta, true)
}

/// One row of the reward curve. Rewards are those that entered the
/// advantages, so hinted groups are logged after resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_polarity: f64,
    pub mean_score: f64,
    pub hard_fraction: f64,
    pub hinted_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GrpoStats {
    pub steps: usize,
    pub groups: usize,
    pub hard_groups: usize,
    pub hinted_groups: usize,
    /// Samples available to the sampler after the arm's hard-sample filter.
    pub pool_size: usize,
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GrpoOutcome {
    pub params: PolicyParams,
    pub curve: Vec<StepLog>,
    pub stats: GrpoStats,
}

/// Builds the groups of one batch: roll out, detect hard groups, and replace
/// them by hinted groups when hints are enabled.
pub fn collect_groups(
    model: &PolicyModel,
    p: &PolicyParams,
    batch: &[&Sample],
    cfg: &GrpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RolloutGroup>, usize)> {
    let mut groups = Vec::with_capacity(batch.len());
    let mut hard = 0;
    for sample in batch {
        let mut group_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut g = rollout_group(model, p, sample, cfg, &mut group_rng, &[])?;
        if detect_hard(&g, cfg.hard_threshold) {
            hard += 1;
            if cfg.hint_enabled {
                g = hint_resample(model, p, sample, cfg, &mut group_rng)?;
            }
        }
        groups.push(g);
    }
    Ok((groups, hard))
}

fn log_step(step: usize, groups: &[RolloutGroup], hard: usize) -> StepLog {
    let all: Vec<&RewardBreakdown> = groups.iter().flat_map(|g| &g.breakdowns).collect();
    let n = all.len() as f64;
    let avg = |f: fn(&RewardBreakdown) -> f64| all.iter().map(|b| f(b)).sum::<f64>() / n;
    let ng = groups.len() as f64;
    StepLog {
        step,
        mean_reward: avg(|b| b.total),
        mean_format: avg(|b| b.format),
        mean_polarity: avg(|b| b.polarity),
        mean_score: avg(|b| b.score),
        hard_fraction: hard as f64 / ng,
        hinted_fraction: groups.iter().filter(|g| g.hinted).count() as f64 / ng,
    }
}

/// Stage-two training from `params_sft`, which also serves as the frozen
/// reference policy. Samples are drawn without replacement in reshuffled
/// passes over the pool; `include_hard = false` removes generator-flagged
/// hard samples from the pool.
pub fn grpo_train(
    model: &PolicyModel,
    params_sft: &PolicyParams,
    dataset: &[Sample],
    cfg: &GrpoConfig,
) -> Result<GrpoOutcome> {
    cfg.validate()?;
    let pool: Vec<&Sample> = dataset.iter().filter(|s| cfg.include_hard || !s.is_hard).collect();
    if pool.is_empty() {
        return Err(config_err("no training samples left for the grpo stage"));
    }
    let reference = params_sft.clone();
    let mut p = params_sft.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut stats = GrpoStats {
        pool_size: pool.len(),
        ..GrpoStats::default()
    };

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..pool.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(pool[order[cursor]]);
            cursor += 1;
        }
        let (groups, hard) = collect_groups(model, &p, &batch, cfg, &mut rng)?;
        let (_, grad) = grpo_loss_and_grad(model, &p, &reference, &groups, cfg.beta)?;
        p.axpy(-cosine_lr(cfg.learning_rate, step, cfg.steps), &grad);
        if !p.is_finite() {
            return Err(Error::Degenerate("grpo produced non-finite parameters"));
        }
        stats.groups += groups.len();
        stats.hard_groups += hard;
        stats.hinted_groups += groups.iter().filter(|g| g.hinted).count();
        stats.final_grad_norm = grad.norm();
        curve.push(log_step(step, &groups, hard));
    }
    stats.steps = cfg.steps;
    Ok(GrpoOutcome {
        params: p,
        curve,
        stats,
    })
}

pub const REWARD_CSV_HEADER: &str =
    "step,mean_reward,mean_format,mean_polarity,mean_score,hard_fraction,hinted_fraction";

pub fn write_reward_curve(path: &Path, curve: &[StepLog]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{REWARD_CSV_HEADER}")?;
    for r in curve {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, r.mean_reward, r.mean_format, r.mean_polarity, r.mean_score, r.hard_fraction, r.hinted_fraction
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reward_curve(path: &Path) -> Result<Vec<StepLog>> {
    let bad = |line: usize, why: &str| config_err(format!("{}:{line}: {why}", path.display()));
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == REWARD_CSV_HEADER => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(bad(1, "missing or unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, "expected 7 fields"));
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        out.push(StepLog {
            step: f[0].trim().parse().map_err(|_| bad(i + 1, "bad step"))?,
            mean_reward: num(1)?,
            mean_format: num(2)?,
            mean_polarity: num(3)?,
            mean_score: num(4)?,
            hard_fraction: num(5)?,
            hinted_fraction: num(6)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("reward curve"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Polarity;
    use crate::policy::test_support::{tiny_model, tiny_profile};
    use crate::vocab::TokenId;
    use proptest::prelude::{prop, prop_assert, prop_assume, proptest};

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        let a = compute_advantages(&[0.0, 0.0, 0.0, 2.0]).unwrap();
        let want = [-1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt(), 3f64.sqrt()];
        for (x, y) in a.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(compute_advantages(&[1.0]), Err(Error::Length(1))));
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(r in prop::collection::vec(-3.0f64..3.0, 2..9)) {
            prop_assume!(r.iter().any(|&x| (x - r[0]).abs() > 1e-6));
            let a = compute_advantages(&r).unwrap();
            let m = mean(&a);
            let sd = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / a.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    fn group_with(rewards: &[f64]) -> RolloutGroup {
        RolloutGroup {
            sample: Sample::with_gold("g", 0.1, &tiny_profile(), 2),
            rollouts: vec![],
            breakdowns: vec![],
            rewards: rewards.to_vec(),
            advantages: vec![],
            hinted: false,
        }
    }

    #[test]
    fn hard_detection_examples() {
        assert!(detect_hard(&group_with(&[0.0; 4]), 1.5));
        assert!(!detect_hard(&group_with(&[0.0, 0.0, 0.0, 2.4]), 1.5));
        assert!(!detect_hard(&group_with(&[0.0; 4]), 0.0));
    }

    #[test]
    fn arm_flags() {
        assert_eq!(Arm::Full.flags(), (true, true));
        assert_eq!(Arm::NoHint.flags(), (false, true));
        assert_eq!(Arm::NoHard.flags(), (true, false));
        for a in Arm::ALL {
            assert_eq!(a.as_str().parse::<Arm>().unwrap(), a);
        }
        assert!("both".parse::<Arm>().is_err());
    }

    fn sample(model: &PolicyModel, gold: f64, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Sample::with_gold("s", gold, model.vocab.profile(), model.d);
        for m in [&mut s.text_feat, &mut s.audio_feat, &mut s.vision_feat] {
            m.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        s
    }

    #[test]
    fn groups_are_deterministic_and_hints_fix_polarity() {
        let model = tiny_model();
        let p = model.init_params(5);
        let cfg = GrpoConfig::default();
        let s = sample(&model, -0.1, 2);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let g1 = rollout_group(&model, &p, &s, &cfg, &mut r1, &[]).unwrap();
        let g2 = rollout_group(&model, &p, &s, &cfg, &mut r2, &[]).unwrap();
        assert_eq!(g1, g2);
        let h = hint_resample(&model, &p, &s, &cfg, &mut r1).unwrap();
        assert!(h.hinted);
        let block = polarity_block(&model.vocab, Polarity::Negative);
        for (r, b) in h.rollouts.iter().zip(&h.breakdowns) {
            assert_eq!(&r.tokens[..3], &block[..]);
            assert_eq!(r.forced_prefix_len, 3);
            assert_eq!(b.polarity, 1.0);
            assert!(b.total >= cfg.weights.lambda_polarity);
        }
    }

    fn random_groups(model: &PolicyModel, p: &PolicyParams, seed: u64) -> Vec<RolloutGroup> {
        let cfg = GrpoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (k, gold) in [-0.15, 0.0, 0.1].into_iter().enumerate() {
            let s = sample(model, gold, seed * 10 + k as u64);
            let mut g = if k == 1 {
                hint_resample(model, p, &s, &cfg, &mut rng).unwrap()
            } else {
                rollout_group(model, p, &s, &cfg, &mut rng, &[]).unwrap()
            };
            // Advantages are constants of the loss; any values exercise it.
            g.advantages = (0..g.rollouts.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
            out.push(g);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = tiny_model();
        for seed in 0..3 {
            let reference = model.init_params(50 + seed);
            let mut p = reference.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            p.data.iter_mut().for_each(|x| *x += 0.3 * rng.random_range(-1.0..1.0));
            let groups = random_groups(&model, &reference, seed);
            let (_, g) = grpo_loss_and_grad(&model, &p, &reference, &groups, 0.1).unwrap();
            let eps = 1e-4;
            let mut worst: f64 = 0.0;
            for i in 0..p.len() {
                let mut a = p.clone();
                let mut b = p.clone();
                a.data[i] += eps;
                b.data[i] -= eps;
                let fd = (grpo_loss(&model, &a, &reference, &groups, 0.1).unwrap()
                    - grpo_loss(&model, &b, &reference, &groups, 0.1).unwrap())
                    / (2.0 * eps);
                let err = (fd - g.data[i]).abs() / fd.abs().max(g.data[i].abs()).max(1e-6);
                worst = worst.max(err);
            }
            assert!(worst <= 1e-3, "max relative error {worst}");
        }
    }

    #[test]
    fn zero_advantages_without_kl_give_zero_loss() {
        let model = tiny_model();
        let p = model.init_params(1);
        let mut groups = random_groups(&model, &p, 4);
        groups
            .iter_mut()
            .for_each(|g| g.advantages.iter_mut().for_each(|a| *a = 0.0));
        let (loss, grad) = grpo_loss_and_grad(&model, &p, &model.init_params(2), &groups, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn single_unit_advantage_reduces_to_scaled_nll() {
        let model = tiny_model();
        let p = model.init_params(3);
        let mut groups = random_groups(&model, &p, 6);
        groups.truncate(1);
        let g = &mut groups[0];
        g.advantages = vec![0.0; g.rollouts.len()];
        g.advantages[0] = 1.0;
        let ctx = model.encode(&p, &g.sample).unwrap();
        let lp = model.sequence_logprob(&p, &ctx, &g.rollouts[0].tokens).unwrap();
        let want = -lp.iter().sum::<f64>() / g.rollouts.len() as f64;
        let loss = grpo_loss(&model, &p, &p, &groups, 0.0).unwrap();
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn forced_positions_carry_no_gradient() {
        let model = tiny_model();
        let p = model.init_params(8);
        let s = sample(&model, 0.1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full: Vec<TokenId> = model.greedy(&p, &model.encode(&p, &s).unwrap()).unwrap().tokens;
        let cfg = GrpoConfig::default();
        let mut g = rollout_group(&model, &p, &s, &cfg, &mut rng, &full).unwrap();
        g.advantages = vec![1.0, -1.0, 0.5, 2.0];
        let (loss, grad) = grpo_loss_and_grad(&model, &p, &model.init_params(9), &[g], 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn kl_is_zero_at_identity_and_nonnegative() {
        let model = tiny_model();
        let s = sample(&model, 0.05, 3);
        let p = model.init_params(0);
        assert!(kl_term(&model, &p, &p, &s, &[]).unwrap().abs() < 1e-12);
        for seed in 1..20 {
            let q = model.init_params(seed);
            assert!(kl_term(&model, &p, &q, &s, &[TokenId::POLARITY_OPEN]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn reward_curve_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reward.csv");
        let curve = vec![StepLog {
            step: 0,
            mean_reward: 1.25,
            mean_format: 1.0,
            mean_polarity: 0.5,
            mean_score: 0.1 + 0.2,
            hard_fraction: 0.25,
            hinted_fraction: 0.25,
        }];
        write_reward_curve(&path, &curve).unwrap();
        assert_eq!(read_reward_curve(&path).unwrap(), curve);
        std::fs::write(&path, format!("{REWARD_CSV_HEADER}\n")).unwrap();
        assert!(matches!(read_reward_curve(&path), Err(Error::Empty(_))));
    }
}
