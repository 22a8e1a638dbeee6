//! Autonomous preference optimization: the log-ratio reward, the
//! generalized Bradley-Terry preference of one positive trajectory over N
//! weighted negatives, the resulting maximum-likelihood loss, its analytic
//! gradient, and the critique-stage training loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::{sequence_log_prob, AutoregressivePolicy, ContextId, Token};
use crate::distill::StudentPolicy;
use crate::error::{Error, Result};
use crate::teachers::RowKey;

/// One APO training unit: a preferred trajectory against N weighted
/// negative teacher trajectories under one context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceTuple {
    pub context: ContextId,
    pub positive: Vec<Token>,
    pub negatives: Vec<Vec<Token>>,
    pub weights: Vec<f64>,
}

impl PreferenceTuple {
    pub fn new(
        context: ContextId,
        positive: Vec<Token>,
        negatives: Vec<Vec<Token>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if positive.is_empty() {
            return Err(Error::InvalidConfig("positive trajectory must be non-empty".into()));
        }
        if negatives.is_empty() {
            return Err(Error::InvalidConfig("need at least one negative".into()));
        }
        if negatives.len() != weights.len() {
            return Err(Error::InvalidConfig("one weight per negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidConfig(
                "weights must be finite, non-negative, with positive sum".into(),
            ));
        }
        Ok(PreferenceTuple {
            context,
            positive,
            negatives,
            weights,
        })
    }

    /// Uniform weights w_u = 1.
    pub fn uniform(context: ContextId, positive: Vec<Token>, negatives: Vec<Vec<Token>>) -> Result<Self> {
        let weights = vec![1.0; negatives.len()];
        PreferenceTuple::new(context, positive, negatives, weights)
    }
}

/// APO training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApoConfig {
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ApoConfig {
    fn default() -> Self {
        ApoConfig {
            beta: 0.1,
            lr: 0.1,
            steps: 200,
            seed: 0,
        }
    }
}

impl ApoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::InvalidConfig("beta must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Reward r(v,l,t) = beta * log(pi_theta(t) / pi_ref(t)).
pub fn reward(
    policy: &StudentPolicy,
    reference: &StudentPolicy,
    context: &ContextId,
    tokens: &[Token],
    beta: f64,
) -> Result<f64> {
    let lp = sequence_log_prob(policy, context, tokens)?;
    let lp_ref = sequence_log_prob(reference, context, tokens)?;
    Ok(beta * (lp - lp_ref))
}

struct TupleEval {
    /// log P(t+ > T)
    log_pref: f64,
    /// normalized share of each negative: w_u exp(r_u) / Z
    neg_shares: Vec<f64>,
}

fn eval_tuple(
    tuple: &PreferenceTuple,
    policy: &StudentPolicy,
    reference: &StudentPolicy,
    beta: f64,
) -> Result<TupleEval> {
    let r_pos = reward(policy, reference, &tuple.context, &tuple.positive, beta)?;
    // scores: r+ and r_u + ln w_u for w_u > 0; zero-weight negatives drop
    // out exactly.
    let mut scores = vec![r_pos];
    let mut active = Vec::new();
    for (neg, &w) in tuple.negatives.iter().zip(&tuple.weights) {
        if w == 0.0 {
            active.push(None);
            continue;
        }
        let r = reward(policy, reference, &tuple.context, neg, beta)?;
        active.push(Some(scores.len()));
        scores.push(r + w.ln());
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + z.ln();
    let neg_shares = active
        .iter()
        .map(|slot| match slot {
            Some(i) => ((scores[*i] - max).exp()) / z,
            None => 0.0,
        })
        .collect();
    Ok(TupleEval {
        log_pref: r_pos - log_z,
        neg_shares,
    })
}

/// Bradley-Terry preference probability of the positive over the weighted
/// negatives, evaluated with a max-shifted log-sum-exp. Strictly in (0, 1).
pub fn preference_probability(
    tuple: &PreferenceTuple,
    policy: &StudentPolicy,
    reference: &StudentPolicy,
    beta: f64,
) -> Result<f64> {
    Ok(eval_tuple(tuple, policy, reference, beta)?.log_pref.exp())
}

/// Mean negative log preference probability over the batch.
pub fn apo_loss(
    batch: &[PreferenceTuple],
    policy: &StudentPolicy,
    reference: &StudentPolicy,
    beta: f64,
) -> Result<f64> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut total = 0.0;
    for tuple in batch {
        total -= eval_tuple(tuple, policy, reference, beta)?.log_pref;
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of `apo_loss` with respect to the policy logit table.
///
/// Per tuple, dL/dlog pi(t+) = -beta (1 - P) and dL/dlog pi(t_u) =
/// beta P_u, with P_u the normalized weighted share of negative u; the
/// chain rule through each softmax row gives per-step row contributions
/// (onehot - p) / temperature. Rows the policy does not hold (uniform
/// fallback) carry no parameters and contribute nothing.
pub fn apo_grad(
    batch: &[PreferenceTuple],
    policy: &StudentPolicy,
    reference: &StudentPolicy,
    beta: f64,
) -> Result<BTreeMap<RowKey, Vec<f64>>> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grad: BTreeMap<RowKey, Vec<f64>> = BTreeMap::new();
    let scale = 1.0 / batch.len() as f64;
    let v = policy.vocab().size();
    let temperature = policy.policy().temperature();
    for tuple in batch {
        let eval = eval_tuple(tuple, policy, reference, beta)?;
        let p_pref = eval.log_pref.exp();
        accumulate_sequence(
            &mut grad,
            policy,
            &tuple.context,
            &tuple.positive,
            scale * (-beta) * (1.0 - p_pref),
            v,
            temperature,
        );
        for (neg, &share) in tuple.negatives.iter().zip(&eval.neg_shares) {
            if share == 0.0 {
                continue;
            }
            accumulate_sequence(
                &mut grad,
                policy,
                &tuple.context,
                neg,
                scale * beta * share,
                v,
                temperature,
            );
        }
    }
    Ok(grad)
}

fn accumulate_sequence(
    grad: &mut BTreeMap<RowKey, Vec<f64>>,
    policy: &StudentPolicy,
    context: &ContextId,
    tokens: &[Token],
    coeff: f64,
    v: usize,
    temperature: f64,
) {
    for (j, &t) in tokens.iter().enumerate() {
        let Some(key) = policy.resolve_key(context, &tokens[..j]) else {
            continue; // uniform fallback: no parameters
        };
        let p = policy.predictive(context, &tokens[..j]);
        let row = grad.entry(key).or_insert_with(|| vec![0.0; v]);
        for (x, (gx, &px)) in row.iter_mut().zip(p.probs()).enumerate() {
            let onehot = if x == t as usize { 1.0 } else { 0.0 };
            *gx += coeff * (onehot - px) / temperature;
        }
    }
}

/// Outcome of APO training: the refined policy and the per-step loss curve.
#[derive(Debug, Clone)]
pub struct ApoOutcome {
    pub policy: StudentPolicy,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on the APO loss. The reference stays frozen;
/// training aborts with `DivergenceDetected` if the loss exceeds 10x its
/// initial value.
pub fn train_apo(
    mut policy: StudentPolicy,
    reference: &StudentPolicy,
    tuples: &[PreferenceTuple],
    config: &ApoConfig,
) -> Result<ApoOutcome> {
    config.validate()?;
    assert!(!tuples.is_empty(), "tuples must be non-empty");
    // Materialize every row the tuples touch so gradients have parameters
    // to flow into.
    for tuple in tuples {
        for j in 0..tuple.positive.len() {
            policy.materialize_key(&tuple.context, &tuple.positive[..j]);
        }
        for neg in &tuple.negatives {
            for j in 0..neg.len() {
                policy.materialize_key(&tuple.context, &neg[..j]);
            }
        }
    }
    let initial = apo_loss(tuples, &policy, reference, config.beta)?;
    let mut losses = vec![initial];
    for step in 0..config.steps {
        let grad = apo_grad(tuples, &policy, reference, config.beta)?;
        policy.apply_gradient(&grad, config.lr);
        let loss = apo_loss(tuples, &policy, reference, config.beta)?;
        if loss > 10.0 * initial {
            return Err(Error::DivergenceDetected {
                step,
                loss,
                initial,
            });
        }
        losses.push(loss);
    }
    Ok(ApoOutcome { policy, losses })
}
