//! Shared domain types: vocabularies, categorical distributions, trajectory
//! states and multi-stream states, plus their probability arithmetic.
//!
//! All types are immutable values after construction and safe to share
//! read-only across threads. Arithmetic is done in log domain; probabilities
//! below [`PROB_FLOOR`] are treated as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token identifier: an index into a [`Vocab`].
pub type Token = u32;

/// Probabilities below this are treated as exact zeros.
pub const PROB_FLOOR: f64 = 1e-300;

/// Normalization tolerance for categorical distributions.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A finite token alphabet with reserved SEP and EOS markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    sep: Token,
    eos: Token,
}

impl Vocab {
    pub fn new(symbols: Vec<String>, sep: Token, eos: Token) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidVocab(format!(
                "need at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidVocab(format!("duplicate symbol {s:?}")));
            }
        }
        if sep == eos {
            return Err(Error::InvalidVocab("SEP and EOS must be distinct".into()));
        }
        for (name, t) in [("SEP", sep), ("EOS", eos)] {
            if t as usize >= symbols.len() {
                return Err(Error::InvalidVocab(format!(
                    "{name} index {t} out of range for {} symbols",
                    symbols.len()
                )));
            }
        }
        Ok(Vocab { symbols, sep, eos })
    }

    /// A synthetic vocabulary: `n_answers` answer tokens `a0..`, then
    /// `n_contexts` context-marker tokens `c0..`, then SEP and EOS.
    pub fn synthetic(n_answers: usize, n_contexts: usize) -> Self {
        let mut symbols: Vec<String> = (0..n_answers).map(|i| format!("a{i}")).collect();
        symbols.extend((0..n_contexts).map(|i| format!("c{i}")));
        let sep = symbols.len() as Token;
        symbols.push("SEP".into());
        let eos = symbols.len() as Token;
        symbols.push("EOS".into());
        Vocab::new(symbols, sep, eos).expect("synthetic vocab is valid")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn sep(&self) -> Token {
        self.sep
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, t: Token) -> bool {
        (t as usize) < self.symbols.len()
    }
}

/// A normalized probability distribution over a token vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is negative or non-finite")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, expected 1 within {NORMALIZATION_TOL}"
            )));
        }
        Ok(Categorical { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Categorical {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Softmax of `logits / temperature`, evaluated with a max shift.
    pub fn from_logits(logits: &[f64], temperature: f64) -> Self {
        debug_assert!(temperature > 0.0);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits
            .iter()
            .map(|l| ((l - max) / temperature).exp())
            .collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Categorical { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, t: Token) -> f64 {
        self.probs[t as usize]
    }

    /// Log probability of `t`. Zero-probability entries signal an error
    /// instead of returning -inf.
    pub fn log_prob(&self, t: Token) -> Result<f64> {
        let p = self.probs[t as usize];
        if p < PROB_FLOOR {
            Err(Error::ZeroProbabilityToken { token: t, step: 0 })
        } else {
            Ok(p.ln())
        }
    }

    /// Argmax with ties broken toward the lowest token index.
    pub fn argmax(&self) -> Token {
        let mut best = 0usize;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best as Token
    }

    /// Inverse-CDF sample from a uniform draw in [0, 1).
    pub fn sample_with(&self, u: f64) -> Token {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as Token;
            }
        }
        (self.probs.len() - 1) as Token
    }

    /// Total variation distance to `other`.
    pub fn total_variation(&self, other: &Categorical) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Categorical) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Conditioning identifier: a short token sequence standing in for the
/// (visual input, textual prompt) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextId {
    tokens: Vec<Token>,
}

impl ContextId {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidStream("context must be non-empty".into()));
        }
        Ok(ContextId { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }
}

/// One trajectory state: the generated prefix and the predictive
/// distribution governing the next token.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub prefix: Vec<Token>,
    pub predictive: Categorical,
}

/// A chain-of-thought stream: the ordered trajectory states for one teacher
/// under one context, together with the realized tokens.
///
/// State `k` holds the prefix of the first `k` realized tokens; its
/// predictive must give the `k`-th token nonzero probability.
#[derive(Debug, Clone)]
pub struct CotStream {
    context: ContextId,
    states: Vec<TrajectoryState>,
    tokens: Vec<Token>,
}

impl CotStream {
    pub fn new(context: ContextId, states: Vec<TrajectoryState>, tokens: Vec<Token>) -> Result<Self> {
        if states.len() != tokens.len() {
            return Err(Error::InvalidStream(format!(
                "{} states but {} tokens",
                states.len(),
                tokens.len()
            )));
        }
        for (k, state) in states.iter().enumerate() {
            if state.prefix != tokens[..k] {
                return Err(Error::InvalidStream(format!(
                    "state {k} prefix does not extend the realized tokens"
                )));
            }
            if state.predictive.prob(tokens[k]) < PROB_FLOOR {
                return Err(Error::InvalidStream(format!(
                    "token {} at step {k} has zero probability under its own predictive",
                    tokens[k]
                )));
            }
        }
        Ok(CotStream {
            context,
            states,
            tokens,
        })
    }

    pub fn context(&self) -> &ContextId {
        &self.context
    }

    pub fn states(&self) -> &[TrajectoryState] {
        &self.states
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The joint state of N teacher streams at one step.
#[derive(Debug, Clone)]
pub struct MultiStreamState {
    per_teacher: Vec<TrajectoryState>,
}

impl MultiStreamState {
    pub fn new(per_teacher: Vec<TrajectoryState>) -> Result<Self> {
        if per_teacher.is_empty() {
            return Err(Error::InvalidStream("need at least one teacher state".into()));
        }
        Ok(MultiStreamState { per_teacher })
    }

    pub fn per_teacher(&self) -> &[TrajectoryState] {
        &self.per_teacher
    }

    pub fn n_teachers(&self) -> usize {
        self.per_teacher.len()
    }
}

/// A context-conditioned autoregressive policy over a fixed vocabulary.
pub trait AutoregressivePolicy {
    fn vocab(&self) -> &Vocab;

    /// Next-token distribution given the context and the generated prefix.
    fn predictive(&self, context: &ContextId, prefix: &[Token]) -> Categorical;
}

/// Sum of per-step log probabilities of `tokens` under `policy`,
/// i.e. log pi(t | context) for the whole sequence.
pub fn sequence_log_prob(
    policy: &dyn AutoregressivePolicy,
    context: &ContextId,
    tokens: &[Token],
) -> Result<f64> {
    let mut total = 0.0;
    for (step, &t) in tokens.iter().enumerate() {
        let dist = policy.predictive(context, &tokens[..step]);
        let p = dist.prob(t);
        if p < PROB_FLOOR {
            return Err(Error::ZeroProbabilityToken { token: t, step });
        }
        total += p.ln();
    }
    Ok(total)
}

/// Log probability of a joint multi-stream state under N independent
/// teacher policies, in the fully decomposed form: the sum over teachers of
/// the prefix log probability, with the predictive factor required to match
/// the recorded predictive (it is a deterministic function of the prefix, so
/// the factor is 1 on match and 0 otherwise).
pub fn joint_state_log_prob(
    state: &MultiStreamState,
    policies: &[&dyn AutoregressivePolicy],
    context: &ContextId,
) -> Result<f64> {
    assert_eq!(
        state.n_teachers(),
        policies.len(),
        "state and policy counts must agree"
    );
    let mut total = 0.0;
    for (u, (s, policy)) in state.per_teacher.iter().zip(policies).enumerate() {
        total += sequence_log_prob(*policy, context, &s.prefix)?;
        let computed = policy.predictive(context, &s.prefix);
        let max_diff = computed.max_abs_diff(&s.predictive);
        if max_diff > NORMALIZATION_TOL {
            return Err(Error::PredictiveMismatch { teacher: u, max_diff });
        }
    }
    Ok(total)
}

/// KL divergence sum_x p(x) log(p(x)/q(x)), with 0 log(0/.) = 0.
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> Result<f64> {
    assert_eq!(p.len(), q.len(), "distributions must share a vocabulary");
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi < PROB_FLOOR {
            continue;
        }
        if qi < PROB_FLOOR {
            return Err(Error::AbsoluteContinuityViolation { index: i, p: pi });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// Symmetric (Jeffreys) KL divergence.
pub fn symmetric_kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    Ok(kl_divergence(p, q)? + kl_divergence(q, p)?)
}
