//! Synthetic drifting teacher policies: context-conditioned tabular softmax
//! autoregressive models with scheduled parameter drift, and corpus
//! generation over them.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{
    AutoregressivePolicy, Categorical, ContextId, CotStream, Token, TrajectoryState, Vocab,
};
use crate::error::{Error, Result};
use crate::io::TrajectoryRecord;

/// Logit-table key: context tokens plus the trailing prefix window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub context: Vec<Token>,
    pub suffix: Vec<Token>,
}

impl RowKey {
    pub fn new(context: &ContextId, suffix: impl Into<Vec<Token>>) -> Self {
        RowKey {
            context: context.tokens().to_vec(),
            suffix: suffix.into(),
        }
    }
}

/// An order-k tabular softmax policy. Rows are keyed by (context, last k
/// prefix tokens); lookups back off to shorter suffixes, and a missing row
/// means a uniform predictive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    vocab: Vocab,
    order: usize,
    temperature: f64,
    #[serde(with = "row_table")]
    rows: BTreeMap<RowKey, Vec<f64>>,
}

/// Row tables serialize as ordered (key, logits) pairs; structured map keys
/// have no JSON representation.
mod row_table {
    use super::RowKey;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        rows: &BTreeMap<RowKey, Vec<f64>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        rows.iter().collect::<Vec<_>>().serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<RowKey, Vec<f64>>, D::Error> {
        let pairs = Vec::<(RowKey, Vec<f64>)>::deserialize(deserializer)?;
        Ok(pairs.into_iter().collect())
    }
}

impl TabularPolicy {
    pub fn new(vocab: Vocab, order: usize, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        TabularPolicy {
            vocab,
            order,
            temperature,
            rows: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn rows(&self) -> &BTreeMap<RowKey, Vec<f64>> {
        &self.rows
    }

    pub fn set_row(&mut self, key: RowKey, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.vocab.size(), "logit row must cover the vocabulary");
        self.rows.insert(key, logits);
    }

    /// Set a row from a probability vector (logits = ln p, floored).
    pub fn set_row_probs(&mut self, key: RowKey, probs: &[f64]) {
        let logits = probs.iter().map(|p| p.max(1e-12).ln()).collect();
        self.set_row(key, logits);
    }

    pub fn row(&self, key: &RowKey) -> Option<&[f64]> {
        self.rows.get(key).map(|r| r.as_slice())
    }

    pub fn row_mut(&mut self, key: &RowKey) -> Option<&mut Vec<f64>> {
        self.rows.get_mut(key)
    }

    /// Insert a zero (uniform) row if absent and return it mutably.
    pub fn row_or_default(&mut self, key: RowKey) -> &mut Vec<f64> {
        let v = self.vocab.size();
        self.rows.entry(key).or_insert_with(|| vec![0.0; v])
    }

    /// The key the predictive for (context, prefix) actually resolves to,
    /// walking the suffix backoff chain. `None` means the uniform fallback.
    pub fn resolve_key(&self, context: &ContextId, prefix: &[Token]) -> Option<RowKey> {
        let start = prefix.len().saturating_sub(self.order);
        let mut from = start;
        loop {
            let key = RowKey::new(context, &prefix[from..]);
            if self.rows.contains_key(&key) {
                return Some(key);
            }
            if from == prefix.len() {
                return None;
            }
            from += 1;
        }
    }

    /// Autoregressive sampling until EOS or `max_len`, recording the
    /// predictive at every step. Reproducible given `seed`.
    pub fn sample_trajectory(
        &self,
        context: &ContextId,
        max_len: usize,
        seed: u64,
    ) -> CotStream {
        assert!(max_len >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_trajectory_from(context, &[], max_len, &mut rng)
    }

    /// Sampling continuation of an existing prefix (the prefix itself is not
    /// part of the returned stream).
    pub fn sample_continuation(
        &self,
        context: &ContextId,
        prefix: &[Token],
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Token> {
        let mut full = prefix.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let dist = self.predictive(context, &full);
            let t = dist.sample_with(rng.random::<f64>());
            full.push(t);
            out.push(t);
            if t == self.vocab.eos() {
                break;
            }
        }
        out
    }

    /// Greedy continuation (argmax, ties to the lowest token index).
    pub fn greedy_continuation(
        &self,
        context: &ContextId,
        prefix: &[Token],
        max_len: usize,
    ) -> Vec<Token> {
        let mut full = prefix.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let t = self.predictive(context, &full).argmax();
            full.push(t);
            out.push(t);
            if t == self.vocab.eos() {
                break;
            }
        }
        out
    }

    fn sample_trajectory_from(
        &self,
        context: &ContextId,
        prefix: &[Token],
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> CotStream {
        let mut tokens: Vec<Token> = prefix.to_vec();
        let mut states = Vec::new();
        let mut realized = Vec::new();
        for _ in 0..max_len {
            let dist = self.predictive(context, &tokens);
            let t = dist.sample_with(rng.random::<f64>());
            states.push(TrajectoryState {
                prefix: realized.clone(),
                predictive: dist,
            });
            tokens.push(t);
            realized.push(t);
            if t == self.vocab.eos() {
                break;
            }
        }
        CotStream::new(context.clone(), states, realized)
            .expect("sampled stream satisfies its own invariants")
    }
}

impl AutoregressivePolicy for TabularPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predictive(&self, context: &ContextId, prefix: &[Token]) -> Categorical {
        match self.resolve_key(context, prefix) {
            Some(key) => Categorical::from_logits(&self.rows[&key], self.temperature),
            None => Categorical::uniform(self.vocab.size()),
        }
    }
}

/// How a drift event perturbs the target teacher's logit table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Perturbation {
    /// Add a delta to each listed row (rows are created at zero if absent).
    AddDelta(Vec<(RowKey, Vec<f64>)>),
    /// Replace one row (gradual events interpolate old -> new).
    ReplaceRow { key: RowKey, logits: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriftKind {
    /// Applied fully from the event step on.
    Sudden,
    /// Interpolated linearly over `span` steps starting at the event step.
    Gradual { span: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftEvent {
    pub step: usize,
    pub teacher: usize,
    pub kind: DriftKind,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DriftSchedule {
    events: Vec<DriftEvent>,
}

impl DriftSchedule {
    pub fn new(events: Vec<DriftEvent>) -> Result<Self> {
        for pair in events.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::InvalidConfig(
                    "drift event steps must be strictly increasing".into(),
                ));
            }
        }
        Ok(DriftSchedule { events })
    }

    pub fn empty() -> Self {
        DriftSchedule { events: Vec::new() }
    }

    pub fn events(&self) -> &[DriftEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// N teacher policies sharing one vocabulary, plus their drift schedule.
///
/// Teachers never share RNG streams: every (context index, teacher, sample)
/// triple derives its own seed, so parallel and serial generation agree.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    teachers: Vec<TabularPolicy>,
    schedule: DriftSchedule,
    seed: u64,
}

impl TeacherEnsemble {
    pub fn new(teachers: Vec<TabularPolicy>, schedule: DriftSchedule, seed: u64) -> Result<Self> {
        if teachers.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one teacher".into()));
        }
        let vocab = teachers[0].vocab().clone();
        if teachers.iter().any(|t| *t.vocab() != vocab) {
            return Err(Error::InvalidConfig("all teachers must share one vocabulary".into()));
        }
        for ev in schedule.events() {
            if ev.teacher >= teachers.len() {
                return Err(Error::UnknownTeacherIndex {
                    teacher: ev.teacher,
                    n_teachers: teachers.len(),
                });
            }
        }
        Ok(TeacherEnsemble {
            teachers,
            schedule,
            seed,
        })
    }

    pub fn n_teachers(&self) -> usize {
        self.teachers.len()
    }

    pub fn teachers(&self) -> &[TabularPolicy] {
        &self.teachers
    }

    pub fn vocab(&self) -> &Vocab {
        self.teachers[0].vocab()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The ensemble with all schedule events at or before `step` applied,
    /// gradual events pro-rata. Untouched teachers are bit-identical clones
    /// of the base.
    pub fn apply_drift(&self, step: usize) -> Result<TeacherEnsemble> {
        let mut teachers = self.teachers.clone();
        for ev in self.schedule.events() {
            if ev.teacher >= teachers.len() {
                return Err(Error::UnknownTeacherIndex {
                    teacher: ev.teacher,
                    n_teachers: teachers.len(),
                });
            }
            if step < ev.step {
                continue;
            }
            let fraction = match ev.kind {
                DriftKind::Sudden => 1.0,
                DriftKind::Gradual { span } => {
                    if span == 0 {
                        1.0
                    } else {
                        ((step - ev.step) as f64 / span as f64).min(1.0)
                    }
                }
            };
            apply_perturbation(&mut teachers[ev.teacher], &ev.perturbation, fraction);
        }
        Ok(TeacherEnsemble {
            teachers,
            schedule: self.schedule.clone(),
            seed: self.seed,
        })
    }

    /// Multi-teacher trajectory corpus: N x |contexts| x per_context records.
    /// The drift schedule advances with the context index; record
    /// `corpus_step` is that index. Contexts fan out in parallel, each with
    /// an independently derived seed, so parallel and serial runs agree.
    pub fn generate_corpus(
        &self,
        contexts: &[ContextId],
        per_context: usize,
        max_len: usize,
    ) -> Result<Vec<TrajectoryRecord>> {
        assert!(per_context >= 1);
        let per_step: Vec<Vec<TrajectoryRecord>> = contexts
            .par_iter()
            .enumerate()
            .map(|(ci, context)| -> Result<Vec<TrajectoryRecord>> {
                let drifted = self.apply_drift(ci)?;
                let mut out = Vec::with_capacity(drifted.n_teachers() * per_context);
                for (u, teacher) in drifted.teachers().iter().enumerate() {
                    for rep in 0..per_context {
                        let seed = derive_seed(self.seed, &[ci as u64, u as u64, rep as u64]);
                        let stream = teacher.sample_trajectory(context, max_len, seed);
                        let step_logprobs = stream
                            .states()
                            .iter()
                            .zip(stream.tokens())
                            .map(|(s, &t)| s.predictive.prob(t).ln())
                            .collect();
                        out.push(TrajectoryRecord {
                            id: format!("c{ci}-t{u}-r{rep}"),
                            context: context.tokens().to_vec(),
                            teacher_id: u.to_string(),
                            tokens: stream.tokens().to_vec(),
                            step_logprobs: Some(step_logprobs),
                            corpus_step: ci as i64,
                            meta: BTreeMap::new(),
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_step.into_iter().flatten().collect())
    }
}

fn apply_perturbation(teacher: &mut TabularPolicy, perturbation: &Perturbation, fraction: f64) {
    match perturbation {
        Perturbation::AddDelta(deltas) => {
            for (key, delta) in deltas {
                let row = teacher.row_or_default(key.clone());
                for (r, d) in row.iter_mut().zip(delta) {
                    *r += fraction * d;
                }
            }
        }
        Perturbation::ReplaceRow { key, logits } => {
            let row = teacher.row_or_default(key.clone());
            for (r, target) in row.iter_mut().zip(logits) {
                *r += fraction * (target - *r);
            }
        }
    }
}

/// SplitMix64-style seed derivation; decorrelates per-(context, teacher,
/// sample) RNG streams from one base seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(p.wrapping_mul(0xbf58476d1ce4e5b9));
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}
