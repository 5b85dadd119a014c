//! Small autoregressive policy over the structured output vocabulary.
//!
//! Encoder: one `tanh` projection per modality (d -> h), summed and fused by a
//! further `tanh` layer (h -> h) into a context vector `c`.
//!
//! Decoder: an Elman recurrence
//! `s_t = tanh(W_r s_{t-1} + E[y_{t-1}] + W_c c + b)` started from `s_0 = 0`
//! and `y_0 = BOS`, followed by a linear head `z_t = O s_t + o`. Next-token
//! probabilities are the softmax of `z_t` restricted to the legal tokens of the
//! current grammar phase (or every non-BOS token under free decoding).
//!
//! Gradients are computed by hand (backpropagation through time) and checked
//! against central finite differences in the tests.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::error::{config_err, Error, Result};
use crate::vocab::{free_mask, DecodeMode, Grammar, Phase, TokenId, Vocabulary};

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub h: usize,
    pub v: usize,
    enc_w: [usize; 3],
    enc_b: [usize; 3],
    fuse_w: usize,
    fuse_b: usize,
    embed: usize,
    rec_w: usize,
    ctx_w: usize,
    dec_b: usize,
    head_w: usize,
    head_b: usize,
    len: usize,
}

impl Layout {
    pub fn new(d: usize, h: usize, v: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let mut enc_w = [0; 3];
        let mut enc_b = [0; 3];
        for k in 0..3 {
            enc_w[k] = take(h * d);
            enc_b[k] = take(h);
        }
        let fuse_w = take(h * h);
        let fuse_b = take(h);
        let embed = take(v * h);
        let rec_w = take(h * h);
        let ctx_w = take(h * h);
        let dec_b = take(h);
        let head_w = take(v * h);
        let head_b = take(v);
        Self {
            d,
            h,
            v,
            enc_w,
            enc_b,
            fuse_w,
            fuse_b,
            embed,
            rec_w,
            ctx_w,
            dec_b,
            head_w,
            head_b,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Start of the output-head bias block; entry `t` is the bias of token `t`.
    pub fn head_bias(&self) -> usize {
        self.head_b
    }
}

/// All policy weights as one flat vector. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: Layout,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &PolicyParams) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    fn block(&self, start: usize, n: usize) -> &[f64] {
        &self.data[start..start + n]
    }
}

/// Encoder activations, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    inputs: [Vec<f64>; 3],
    modal: [Vec<f64>; 3],
    fused_in: Vec<f64>,
    pub vector: Vec<f64>,
}

/// A generated sequence with the policy's own per-token log-probabilities.
/// Positions below `forced_prefix_len` were imposed, not sampled; their
/// log-probabilities are still recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub forced_prefix_len: usize,
}

impl Rollout {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Per-position decoder activations of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub tokens: Vec<TokenId>,
    states: Vec<Vec<f64>>,
    /// Masked next-token distribution at each position.
    pub probs: Vec<Vec<f64>>,
    pub logprobs: Vec<f64>,
}

/// Architecture and decoding rules shared by every parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub vocab: Vocabulary,
    pub grammar: Grammar,
    pub mode: DecodeMode,
    pub d: usize,
    pub h: usize,
}

#[inline]
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

#[inline]
fn matvec_t_add(w: &[f64], y: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(n)) {
        if *yi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += yi * a;
            }
        }
    }
}

#[inline]
fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let n = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(n)) {
        if *yi != 0.0 {
            for (gi, xi) in row.iter_mut().zip(x) {
                *gi += yi * xi;
            }
        }
    }
}

/// Softmax of `logits / temperature` over `mask`; masked entries get zero.
fn masked_softmax(logits: &[f64], mask: &[bool], temperature: f64, out: &mut [f64]) {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(z, _)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for ((o, z), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { ((z - max) / temperature).exp() } else { 0.0 };
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

impl PolicyModel {
    pub fn new(vocab: Vocabulary, max_think: usize, d: usize, h: usize) -> Self {
        Self {
            vocab,
            grammar: Grammar::new(max_think),
            mode: DecodeMode::Grammar,
            d,
            h,
        }
    }

    pub fn with_mode(mut self, mode: DecodeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.d, self.h, self.vocab.len())
    }

    pub fn max_len(&self) -> usize {
        self.grammar.max_len()
    }

    /// Gaussian init scaled by `1/sqrt(fan_in)`; biases start at zero.
    pub fn init_params(&self, seed: u64) -> PolicyParams {
        let layout = self.layout();
        let mut p = PolicyParams::zeros(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, v) = (layout.d, layout.h, layout.v);
        let mut fill = |start: usize, n: usize, std: f64, rng: &mut ChaCha8Rng| {
            for x in &mut p.data[start..start + n] {
                *x = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        for k in 0..3 {
            fill(layout.enc_w[k], h * d, 1.0 / (d as f64).sqrt(), &mut rng);
        }
        fill(layout.fuse_w, h * h, 1.0 / (h as f64).sqrt(), &mut rng);
        fill(layout.embed, v * h, 0.5, &mut rng);
        fill(layout.rec_w, h * h, 0.5 / (h as f64).sqrt(), &mut rng);
        fill(layout.ctx_w, h * h, 1.0 / (h as f64).sqrt(), &mut rng);
        fill(layout.head_w, v * h, 0.5 / (h as f64).sqrt(), &mut rng);
        p
    }

    fn check_params(&self, p: &PolicyParams) -> Result<()> {
        let want = self.layout();
        if p.layout != want {
            return Err(Error::Dimension {
                what: "parameters",
                expected: want.len(),
                got: p.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, p: &PolicyParams, sample: &Sample) -> Result<Context> {
        self.check_params(p)?;
        let l = &p.layout;
        let h = l.h;
        let mut fused_in = vec![0.0; h];
        let mut modal: [Vec<f64>; 3] = Default::default();
        for (k, x) in sample.modalities().into_iter().enumerate() {
            if x.len() != l.d {
                return Err(Error::Dimension {
                    what: "modality features",
                    expected: l.d,
                    got: x.len(),
                });
            }
            let mut m = p.block(l.enc_b[k], h).to_vec();
            matvec_add(p.block(l.enc_w[k], h * l.d), x, &mut m);
            m.iter_mut().for_each(|v| *v = v.tanh());
            for (f, mv) in fused_in.iter_mut().zip(&m) {
                *f += mv;
            }
            modal[k] = m;
        }
        let mut c = p.block(l.fuse_b, h).to_vec();
        matvec_add(p.block(l.fuse_w, h * h), &fused_in, &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());
        Ok(Context {
            inputs: [
                sample.text_feat.clone(),
                sample.audio_feat.clone(),
                sample.vision_feat.clone(),
            ],
            modal,
            fused_in,
            vector: c,
        })
    }

    /// `W_c c + b`, the context drive shared by every decoder step.
    fn context_drive(&self, p: &PolicyParams, ctx: &Context) -> Vec<f64> {
        let l = &p.layout;
        let mut drive = p.block(l.dec_b, l.h).to_vec();
        matvec_add(p.block(l.ctx_w, l.h * l.h), &ctx.vector, &mut drive);
        drive
    }

    fn step(&self, p: &PolicyParams, drive: &[f64], prev_state: &[f64], prev_token: TokenId) -> (Vec<f64>, Vec<f64>) {
        let l = &p.layout;
        let h = l.h;
        let mut a = drive.to_vec();
        for (ai, e) in a.iter_mut().zip(p.block(l.embed + prev_token.index() * h, h)) {
            *ai += e;
        }
        matvec_add(p.block(l.rec_w, h * h), prev_state, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        let mut z = p.block(l.head_b, l.v).to_vec();
        matvec_add(p.block(l.head_w, l.v * h), &a, &mut z);
        (a, z)
    }

    fn mask_for(&self, phase: Phase, mask: &mut [bool]) {
        match self.mode {
            DecodeMode::Grammar => self.grammar.legal(&self.vocab, phase, mask),
            DecodeMode::Free => free_mask(mask),
        }
    }

    fn next_phase(&self, phase: Phase, token: TokenId, pos: usize) -> Result<Phase> {
        match self.mode {
            DecodeMode::Grammar => self
                .grammar
                .advance(&self.vocab, phase, token)
                .ok_or_else(|| config_err(format!("token {} at position {pos} leaves the grammar", token.0))),
            // Free decoding tracks the grammar on a best-effort basis only.
            DecodeMode::Free => Ok(self.grammar.advance(&self.vocab, phase, token).unwrap_or(phase)),
        }
    }

    /// Teacher-forced pass over `tokens`, recording the masked distribution
    /// and log-probability at each position.
    pub fn forward(&self, p: &PolicyParams, ctx: &Context, tokens: &[TokenId]) -> Result<Trace> {
        self.vocab.check(tokens)?;
        let drive = self.context_drive(p, ctx);
        let v = self.vocab.len();
        let mut mask = vec![false; v];
        let mut states = Vec::with_capacity(tokens.len());
        let mut probs = Vec::with_capacity(tokens.len());
        let mut logprobs = Vec::with_capacity(tokens.len());
        let mut prev_state = vec![0.0; p.layout.h];
        let mut prev = TokenId::BOS;
        let mut phase = self.grammar.start();
        for (pos, &tok) in tokens.iter().enumerate() {
            self.mask_for(phase, &mut mask);
            if !mask[tok.index()] {
                return Err(config_err(format!("token {} at position {pos} is masked", tok.0)));
            }
            let (s, z) = self.step(p, &drive, &prev_state, prev);
            let mut pr = vec![0.0; v];
            masked_softmax(&z, &mask, 1.0, &mut pr);
            logprobs.push(pr[tok.index()].ln());
            phase = self.next_phase(phase, tok, pos)?;
            prev_state.clone_from(&s);
            states.push(s);
            probs.push(pr);
            prev = tok;
        }
        Ok(Trace {
            tokens: tokens.to_vec(),
            states,
            probs,
            logprobs,
        })
    }

    /// Emits `forced_prefix` verbatim, then samples from the
    /// temperature-scaled masked softmax until EOS or the length limit.
    /// Recorded log-probabilities are always those of the untempered policy.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        p: &PolicyParams,
        ctx: &Context,
        temperature: f64,
        rng: &mut R,
        forced_prefix: &[TokenId],
    ) -> Result<Rollout> {
        if !(temperature > 0.0) {
            return Err(config_err("temperature must be positive"));
        }
        self.decode(
            p,
            ctx,
            forced_prefix,
            |probs_t, _| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (i, &q) in probs_t.iter().enumerate() {
                    if q > 0.0 {
                        acc += q;
                        last = i;
                        if u < acc {
                            return i;
                        }
                    }
                }
                last
            },
            temperature,
        )
    }

    /// Argmax decoding; ties resolve to the lowest token id.
    pub fn greedy(&self, p: &PolicyParams, ctx: &Context) -> Result<Rollout> {
        self.decode(
            p,
            ctx,
            &[],
            |_, probs| {
                let mut best = 0;
                for (i, &q) in probs.iter().enumerate() {
                    if q > probs[best] {
                        best = i;
                    }
                }
                best
            },
            1.0,
        )
    }

    fn decode(
        &self,
        p: &PolicyParams,
        ctx: &Context,
        forced_prefix: &[TokenId],
        mut choose: impl FnMut(&[f64], &[f64]) -> usize,
        temperature: f64,
    ) -> Result<Rollout> {
        self.check_params(p)?;
        self.vocab.check(forced_prefix)?;
        let max_len = self.max_len();
        let drive = self.context_drive(p, ctx);
        let v = self.vocab.len();
        let mut mask = vec![false; v];
        let mut probs = vec![0.0; v];
        let mut tempered = vec![0.0; v];
        let mut tokens = Vec::with_capacity(max_len);
        let mut logprobs = Vec::with_capacity(max_len);
        let mut state = vec![0.0; p.layout.h];
        let mut prev = TokenId::BOS;
        let mut phase = self.grammar.start();

        while tokens.len() < max_len {
            let pos = tokens.len();
            self.mask_for(phase, &mut mask);
            let (s, z) = self.step(p, &drive, &state, prev);
            masked_softmax(&z, &mask, 1.0, &mut probs);
            let tok = if let Some(&forced) = forced_prefix.get(pos) {
                if !mask[forced.index()] {
                    return Err(config_err(format!(
                        "forced token {} at position {pos} is not a legal continuation",
                        forced.0
                    )));
                }
                forced
            } else {
                let dist = if temperature == 1.0 {
                    &probs
                } else {
                    masked_softmax(&z, &mask, temperature, &mut tempered);
                    &tempered
                };
                TokenId(choose(dist, &probs) as u32)
            };
            logprobs.push(probs[tok.index()].ln());
            tokens.push(tok);
            phase = self.next_phase(phase, tok, pos)?;
            state = s;
            prev = tok;
            if tok == TokenId::EOS && pos + 1 >= forced_prefix.len() {
                return Ok(Rollout {
                    tokens,
                    logprobs,
                    forced_prefix_len: forced_prefix.len(),
                });
            }
        }
        match self.mode {
            DecodeMode::Grammar => Err(Error::Length(max_len)),
            DecodeMode::Free => Ok(Rollout {
                tokens,
                logprobs,
                forced_prefix_len: forced_prefix.len().min(max_len),
            }),
        }
    }

    pub fn sequence_logprob(&self, p: &PolicyParams, ctx: &Context, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        Ok(self.forward(p, ctx, tokens)?.logprobs)
    }

    /// Masked next-token distribution after `prefix`.
    pub fn token_distribution(&self, p: &PolicyParams, ctx: &Context, prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let trace = self.forward(p, ctx, prefix)?;
        let phase = match self.mode {
            DecodeMode::Grammar => self
                .grammar
                .walk(&self.vocab, prefix)
                .ok_or_else(|| config_err("prefix leaves the grammar"))?,
            DecodeMode::Free => Phase::Done,
        };
        let drive = self.context_drive(p, ctx);
        let (prev_state, prev) = match (trace.states.last(), prefix.last()) {
            (Some(s), Some(&t)) => (s.clone(), t),
            _ => (vec![0.0; p.layout.h], TokenId::BOS),
        };
        let mut mask = vec![false; self.vocab.len()];
        self.mask_for(phase, &mut mask);
        let (_, z) = self.step(p, &drive, &prev_state, prev);
        let mut out = vec![0.0; self.vocab.len()];
        masked_softmax(&z, &mask, 1.0, &mut out);
        Ok(out)
    }

    /// Accumulates `scale * d(loss)/d(params)` into `grad`, given the loss
    /// gradient with respect to the logits at every position of `trace`.
    pub fn backward(
        &self,
        p: &PolicyParams,
        ctx: &Context,
        trace: &Trace,
        dlogits: &[Vec<f64>],
        scale: f64,
        grad: &mut PolicyParams,
    ) {
        let l = p.layout;
        let (h, v) = (l.h, l.v);
        let n = trace.tokens.len();
        debug_assert_eq!(dlogits.len(), n);
        let g = &mut grad.data;
        let mut da_next = vec![0.0; h];
        let mut dc = vec![0.0; h];
        let zeros = vec![0.0; h];

        for t in (0..n).rev() {
            let s = &trace.states[t];
            let dz: Vec<f64> = dlogits[t].iter().map(|x| x * scale).collect();
            outer_add(&mut g[l.head_w..l.head_w + v * h], &dz, s);
            for (gb, d) in g[l.head_b..l.head_b + v].iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut ds = vec![0.0; h];
            matvec_t_add(p.block(l.head_w, v * h), &dz, &mut ds);
            matvec_t_add(p.block(l.rec_w, h * h), &da_next, &mut ds);
            let da: Vec<f64> = ds.iter().zip(s).map(|(d, sv)| d * (1.0 - sv * sv)).collect();

            let prev_state = if t == 0 { &zeros } else { &trace.states[t - 1] };
            let prev_tok = if t == 0 { TokenId::BOS } else { trace.tokens[t - 1] };
            outer_add(&mut g[l.rec_w..l.rec_w + h * h], &da, prev_state);
            let e = l.embed + prev_tok.index() * h;
            for (ge, d) in g[e..e + h].iter_mut().zip(&da) {
                *ge += d;
            }
            outer_add(&mut g[l.ctx_w..l.ctx_w + h * h], &da, &ctx.vector);
            for (gb, d) in g[l.dec_b..l.dec_b + h].iter_mut().zip(&da) {
                *gb += d;
            }
            matvec_t_add(p.block(l.ctx_w, h * h), &da, &mut dc);
            da_next = da;
        }

        let dpre_c: Vec<f64> = dc.iter().zip(&ctx.vector).map(|(d, c)| d * (1.0 - c * c)).collect();
        outer_add(&mut g[l.fuse_w..l.fuse_w + h * h], &dpre_c, &ctx.fused_in);
        for (gb, d) in g[l.fuse_b..l.fuse_b + h].iter_mut().zip(&dpre_c) {
            *gb += d;
        }
        let mut du = vec![0.0; h];
        matvec_t_add(p.block(l.fuse_w, h * h), &dpre_c, &mut du);
        for k in 0..3 {
            let dpre: Vec<f64> = du.iter().zip(&ctx.modal[k]).map(|(d, m)| d * (1.0 - m * m)).collect();
            outer_add(&mut g[l.enc_w[k]..l.enc_w[k] + h * l.d], &dpre, &ctx.inputs[k]);
            for (gb, d) in g[l.enc_b[k]..l.enc_b[k] + h].iter_mut().zip(&dpre) {
                *gb += d;
            }
        }
    }

    /// Gradient of `sum_t w_t * log pi(token_t | prefix_t)`.
    pub fn grad_logprob(
        &self,
        p: &PolicyParams,
        sample: &Sample,
        tokens: &[TokenId],
        weights: &[f64],
    ) -> Result<PolicyParams> {
        if weights.len() != tokens.len() {
            return Err(Error::Dimension {
                what: "per-token weights",
                expected: tokens.len(),
                got: weights.len(),
            });
        }
        let ctx = self.encode(p, sample)?;
        let trace = self.forward(p, &ctx, tokens)?;
        let dlogits = logprob_logit_grads(&trace, weights);
        let mut grad = PolicyParams::zeros(p.layout);
        self.backward(p, &ctx, &trace, &dlogits, 1.0, &mut grad);
        Ok(grad)
    }
}

/// d/dz of `sum_t w_t log p_t(y_t)`: `w_t (onehot(y_t) - p_t)` on legal tokens.
pub fn logprob_logit_grads(trace: &Trace, weights: &[f64]) -> Vec<Vec<f64>> {
    trace
        .probs
        .iter()
        .zip(&trace.tokens)
        .zip(weights)
        .map(|((pr, tok), &w)| {
            let mut g: Vec<f64> = pr.iter().map(|q| -w * q).collect();
            g[tok.index()] += w;
            g
        })
        .collect()
}

/// Exact KL divergence between two distributions over the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum::<f64>()
        .max(0.0)
}

const CHECKPOINT_MAGIC: &str = "SENTI-CHECKPOINT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub d: usize,
    pub h: usize,
    pub vocab_size: usize,
    pub n_think: usize,
    pub max_think: usize,
    pub vocab_hash: String,
    pub n_params: usize,
}

impl PolicyModel {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            version: CHECKPOINT_VERSION,
            d: self.d,
            h: self.h,
            vocab_size: self.vocab.len(),
            n_think: self.vocab.n_think(),
            max_think: self.grammar.max_think,
            vocab_hash: self.vocab.hash(),
            n_params: self.layout().len(),
        }
    }

    /// Writes a magic line, a JSON manifest line, then the parameters as
    /// little-endian `f64`.
    pub fn save_checkpoint(&self, p: &PolicyParams, path: &Path) -> Result<()> {
        self.check_params(p)?;
        let mut buf = Vec::with_capacity(64 + 8 * p.len());
        writeln!(buf, "{CHECKPOINT_MAGIC}")?;
        serde_json::to_writer(&mut buf, &self.manifest())?;
        buf.push(b'\n');
        for x in &p.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_checkpoint(&self, path: &Path) -> Result<PolicyParams> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().ok_or_else(|| bad("empty file"))?;
        if magic != CHECKPOINT_MAGIC.as_bytes() {
            return Err(bad("not a checkpoint"));
        }
        let header = lines.next().ok_or_else(|| bad("missing manifest"))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(header).map_err(|e| bad(&format!("bad manifest: {e}")))?;
        let expected = self.manifest();
        if manifest.version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", manifest.version)));
        }
        if manifest.vocab_hash != expected.vocab_hash {
            return Err(bad(&format!(
                "vocabulary hash mismatch: file {} vs model {}",
                manifest.vocab_hash, expected.vocab_hash
            )));
        }
        if manifest != expected {
            return Err(bad("dimensions do not match the model"));
        }
        let body = lines.next().unwrap_or(&[]);
        if body.len() != 8 * manifest.n_params {
            return Err(bad("truncated parameter block"));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(PolicyParams {
            layout: self.layout(),
            data,
        })
    }
}
