//! GRU encoder-decoder with dot-product attention.
//!
//! The encoder reads the source followed by `<eos>`. Each decoder step feeds
//! the previous token, attends over the encoder states, and predicts the
//! next token from `[hidden; context]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{log_sum_exp, Block, GruBlocks, NodeId, Tape};
use super::vocab::{TokenId, BOS, EOS, PAD, SEP, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub dropout: f64,
    /// Longest accepted source or target, in tokens.
    pub max_len: usize,
    pub rng_seed: u64,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        SeqModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            n_layers: 1,
            dropout: 0.0,
            max_len: 256,
            rng_seed: 17,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.n_layers == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// How a target position contributes to the sequence log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetToken {
    /// Scored as `log p(token)`.
    Token(TokenId),
    /// An event terminator: scored as the log of the total probability of
    /// the terminal set, then the given token is fed forward.
    Terminal(TokenId),
    /// Fed forward without being scored.
    Given(TokenId),
}

impl TargetToken {
    pub fn id(self) -> TokenId {
        match self {
            TargetToken::Token(t) | TargetToken::Terminal(t) | TargetToken::Given(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Target {
    pub tokens: Vec<TargetToken>,
    pub terminal_set: Vec<TokenId>,
}

impl Target {
    pub fn plain(ids: &[TokenId]) -> Self {
        Target {
            tokens: ids.iter().map(|&t| TargetToken::Token(t)).collect(),
            terminal_set: Vec::new(),
        }
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    /// Number of positions that contribute to the score.
    pub fn scored_len(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| !matches!(t, TargetToken::Given(_)))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeStrategy {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Constraints for one decode.
///
/// `forced` tokens are emitted first, unscored. When `schedule` is empty the
/// decoder runs until `<eos>`. Otherwise each time the model chooses a
/// member of `terminal_set` the next scheduled token is emitted in its place,
/// and decoding stops once the schedule is used up.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodePlan {
    pub forced: Vec<TokenId>,
    pub terminal_set: Vec<TokenId>,
    pub schedule: Vec<TokenId>,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Includes the forced prefix and, for free decoding, the final `<eos>`.
    pub tokens: Vec<TokenId>,
    /// The decode expressed as a scoring target.
    pub target: Target,
    /// Log-probability of the scored positions at temperature 1.
    pub log_prob: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Block,
    encoder: Vec<GruBlocks>,
    decoder: Vec<GruBlocks>,
    attn: Block,
    out_w: Block,
    out_b: Block,
    total: usize,
}

impl Layout {
    fn new(cfg: &SeqModelConfig, vocab_size: usize) -> Self {
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let mut offset = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let embed = block(vocab_size, e);
        let gru_stack = |block: &mut dyn FnMut(usize, usize) -> Block| {
            (0..cfg.n_layers)
                .map(|l| {
                    let input = if l == 0 { e } else { h };
                    GruBlocks {
                        w: block(3 * h, input),
                        u: block(3 * h, h),
                        b: block(3 * h, 1),
                        bu: block(3 * h, 1),
                    }
                })
                .collect::<Vec<_>>()
        };
        let encoder = gru_stack(&mut block);
        let decoder = gru_stack(&mut block);
        let attn = block(h, h + e);
        let out_w = block(vocab_size, 2 * h + e);
        let out_b = block(vocab_size, 1);
        Layout {
            embed,
            encoder,
            decoder,
            attn,
            out_w,
            out_b,
            total: offset,
        }
    }

    /// (block, init scale) in layout order.
    fn blocks(&self) -> Vec<(Block, f64)> {
        let mut v = vec![(self.embed, 0.1)];
        for g in self.encoder.iter().chain(&self.decoder) {
            let s = 1.0 / (g.u.cols as f64).sqrt();
            v.extend([(g.w, s), (g.u, s), (g.b, s), (g.bu, s)]);
        }
        v.push((self.attn, 1.0 / (self.attn.cols as f64).sqrt()));
        v.push((self.out_w, 1.0 / (self.out_w.cols as f64).sqrt()));
        v.push((self.out_b, 0.0));
        v
    }
}

struct Dropper<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
    rate: f64,
}

impl Dropper<'_> {
    fn apply(&mut self, tape: &mut Tape, node: NodeId) -> NodeId {
        let Some(rng) = self.rng.as_deref_mut() else {
            return node;
        };
        if self.rate <= 0.0 {
            return node;
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..tape.value(node).len())
            .map(|_| if rng.gen_bool(self.rate) { 0.0 } else { keep })
            .collect();
        tape.dropout(node, mask)
    }
}

struct Encoded {
    keys: NodeId,
    values: NodeId,
    n: usize,
    final_states: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct SeqModel {
    config: SeqModelConfig,
    vocab_size: usize,
    params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab_size == other.vocab_size
            && self.params == other.params
    }
}

impl SeqModel {
    /// Randomly initialised from `config.rng_seed`.
    pub fn new(config: SeqModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size <= EOS as usize {
            return Err(Error::InvalidConfig("vocabulary too small".into()));
        }
        let layout = Layout::new(&config, vocab_size);
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut params = vec![0.0; layout.total];
        for (b, scale) in layout.blocks() {
            if scale > 0.0 {
                for p in &mut params[b.offset..b.offset + b.len()] {
                    *p = rng.gen_range(-scale..scale);
                }
            }
        }
        Ok(SeqModel {
            config,
            vocab_size,
            params,
            layout,
        })
    }

    pub fn from_params(
        config: SeqModelConfig,
        vocab_size: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config, vocab_size);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(SeqModel {
            config,
            vocab_size,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, source: &[TokenId], target_len: usize) -> Result<()> {
        let max = self.config.max_len;
        for len in [source.len() + 1, target_len] {
            if len > max {
                return Err(Error::SequenceTooLong { len, max });
            }
        }
        if let Some(&bad) = source.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::InvalidConfig(format!(
                "token id {bad} outside vocabulary"
            )));
        }
        Ok(())
    }

    fn encode(&self, tape: &mut Tape, source: &[TokenId], drop: &mut Dropper) -> Encoded {
        let h = self.config.hidden_dim;
        let mut states: Vec<NodeId> = (0..self.config.n_layers)
            .map(|_| tape.input(vec![0.0; h]))
            .collect();
        let mut keys = Vec::with_capacity(source.len() + 1);
        let mut values = Vec::with_capacity(source.len() + 1);
        for &tok in source.iter().chain(std::iter::once(&EOS)) {
            let emb = tape.embed(self.layout.embed, tok as usize);
            let mut x = drop.apply(tape, emb);
            for (layer, g) in self.layout.encoder.iter().enumerate() {
                states[layer] = tape.gru(x, states[layer], *g);
                x = states[layer];
            }
            let value = tape.concat(vec![x, emb]);
            keys.push(tape.matvec(self.layout.attn, value));
            values.push(value);
        }
        let n = values.len();
        Encoded {
            keys: tape.concat(keys),
            values: tape.concat(values),
            n,
            final_states: states,
        }
    }

    /// Advances the decoder by feeding `prev`; returns logits when asked.
    fn step(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        states: &mut [NodeId],
        prev: TokenId,
        want_logits: bool,
        drop: &mut Dropper,
    ) -> Option<NodeId> {
        let emb = tape.embed(self.layout.embed, prev as usize);
        let mut x = drop.apply(tape, emb);
        for (layer, g) in self.layout.decoder.iter().enumerate() {
            states[layer] = tape.gru(x, states[layer], *g);
            x = states[layer];
        }
        if !want_logits {
            return None;
        }
        let ctx = tape.attention(x, enc.keys, enc.values, enc.n);
        let top = drop.apply(tape, x);
        let feat = tape.concat(vec![top, ctx]);
        let lin = tape.matvec(self.layout.out_w, feat);
        Some(tape.add_bias(lin, self.layout.out_b))
    }

    fn score<'p>(
        &'p self,
        source: &[TokenId],
        target: &Target,
        drop: &mut Dropper,
    ) -> Result<(Tape<'p>, Option<NodeId>)> {
        self.check(source, target.tokens.len())?;
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, source, drop);
        let mut states = enc.final_states.clone();
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(target.tokens.len());
        for tt in &target.tokens {
            let want = !matches!(tt, TargetToken::Given(_));
            let logits = self.step(&mut tape, &enc, &mut states, prev, want, drop);
            match (*tt, logits) {
                (TargetToken::Token(t), Some(l)) => {
                    terms.push(tape.log_prob_set(l, vec![t as usize]))
                }
                (TargetToken::Terminal(_), Some(l)) => {
                    let set = target.terminal_set.iter().map(|&t| t as usize).collect();
                    terms.push(tape.log_prob_set(l, set));
                }
                _ => {}
            }
            prev = tt.id();
        }
        let root = (!terms.is_empty()).then(|| tape.sum(terms));
        Ok((tape, root))
    }

    /// `log p(target | source)` over the scored positions, without dropout.
    pub fn log_prob(&self, source: &[TokenId], target: &Target) -> Result<f64> {
        let mut drop = Dropper {
            rng: None,
            rate: 0.0,
        };
        let (tape, root) = self.score(source, target, &mut drop)?;
        Ok(root.map_or(0.0, |r| tape.scalar(r)))
    }

    /// Adds `scale * d log p(target | source) / d params` to `grad` and
    /// returns the log-probability. Dropout is active when `rng` is given.
    pub fn accumulate_grad(
        &self,
        source: &[TokenId],
        target: &Target,
        scale: f64,
        grad: &mut [f64],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: grad.len(),
                right: self.params.len(),
            });
        }
        let mut drop = Dropper {
            rng,
            rate: self.config.dropout,
        };
        let (tape, root) = self.score(source, target, &mut drop)?;
        let Some(root) = root else {
            return Ok(0.0);
        };
        tape.backward(root, scale, grad);
        Ok(tape.scalar(root))
    }

    pub fn decode(
        &self,
        source: &[TokenId],
        plan: &DecodePlan,
        strategy: &DecodeStrategy,
    ) -> Result<Decoded> {
        self.check(source, plan.forced.len())?;
        let (temperature, mut rng) = match strategy {
            DecodeStrategy::Greedy => (1.0, None),
            DecodeStrategy::Sample { temperature, seed } => {
                if !(*temperature > 0.0) {
                    return Err(Error::InvalidConfig("temperature must be positive".into()));
                }
                (*temperature, Some(ChaCha8Rng::seed_from_u64(*seed)))
            }
        };
        let constrained = !plan.schedule.is_empty();
        let mut banned = vec![false; self.vocab_size];
        for t in [PAD, BOS, UNK, SEP] {
            banned[t as usize] = true;
        }
        if constrained {
            banned[EOS as usize] = true;
        }
        let mut is_terminal = vec![false; self.vocab_size];
        for &t in &plan.terminal_set {
            is_terminal[t as usize] = true;
        }

        let mut tape = Tape::new(&self.params);
        let mut drop = Dropper {
            rng: None,
            rate: 0.0,
        };
        let enc = self.encode(&mut tape, source, &mut drop);
        let mut states = enc.final_states.clone();
        let mut prev = BOS;
        let mut out = Decoded {
            tokens: Vec::new(),
            target: Target {
                tokens: Vec::new(),
                terminal_set: plan.terminal_set.clone(),
            },
            log_prob: 0.0,
            truncated: false,
        };
        for &t in &plan.forced {
            self.step(&mut tape, &enc, &mut states, prev, false, &mut drop);
            out.tokens.push(t);
            out.target.tokens.push(TargetToken::Given(t));
            prev = t;
        }
        let mut next_scheduled = 0;
        loop {
            if constrained && next_scheduled == plan.schedule.len() {
                break;
            }
            if out.tokens.len() >= plan.max_len.min(self.config.max_len) {
                out.truncated = true;
                break;
            }
            let logits = self
                .step(&mut tape, &enc, &mut states, prev, true, &mut drop)
                .expect("logits requested");
            let l = tape.value(logits);
            let lse = log_sum_exp(l.iter().copied());
            // Candidates: every allowed non-terminal token, plus one pooled
            // "end of event" choice in constrained mode.
            let mut cands: Vec<(Option<TokenId>, f64)> = Vec::with_capacity(self.vocab_size + 1);
            if constrained {
                let pooled = log_sum_exp(plan.terminal_set.iter().map(|&t| l[t as usize])) - lse;
                cands.push((None, pooled));
            }
            for (i, &li) in l.iter().enumerate() {
                if !banned[i] && !(constrained && is_terminal[i]) {
                    cands.push((Some(i as TokenId), li - lse));
                }
            }
            let pick = match rng.as_mut() {
                None => {
                    cands
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, c)| if c.1 > cands[best].1 { i } else { best })
                }
                Some(rng) => {
                    let m = cands
                        .iter()
                        .map(|c| c.1 / temperature)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = cands
                        .iter()
                        .map(|c| (c.1 / temperature - m).exp())
                        .collect();
                    let mut u = rng.gen::<f64>() * w.iter().sum::<f64>();
                    let mut idx = w.len() - 1;
                    for (i, wi) in w.iter().enumerate() {
                        if u < *wi {
                            idx = i;
                            break;
                        }
                        u -= wi;
                    }
                    idx
                }
            };
            let (choice, logp) = cands[pick];
            out.log_prob += logp;
            let (tok, tt) = match choice {
                None => {
                    let t = plan.schedule[next_scheduled];
                    next_scheduled += 1;
                    (t, TargetToken::Terminal(t))
                }
                Some(t) => (t, TargetToken::Token(t)),
            };
            out.tokens.push(tok);
            out.target.tokens.push(tt);
            prev = tok;
            if !constrained && tok == EOS {
                break;
            }
        }
        Ok(out)
    }
}
