//! Stage 1 and 2 of the pipeline: supervised pre-distillation toward the
//! KL-barycenter of teacher predictives, and self-distillation conditioned
//! on concatenated teacher trajectories.
//!
//! For the forward direction sum_u w_u KL(p_u || q), the minimizing q over
//! the simplex is the weighted arithmetic mean of the p_u; pre-distillation
//! trains each student row toward that target with full-batch gradient
//! descent on the row logits.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{
    kl_divergence, AutoregressivePolicy, Categorical, ContextId, Token, Vocab,
};
use crate::error::{Error, Result};
use crate::io::TrajectoryRecord;
use crate::teachers::{RowKey, TabularPolicy};

/// The teachers' predictive distributions at one shared alignment point.
#[derive(Debug, Clone)]
pub struct PredictiveSet {
    per_teacher: Vec<Categorical>,
}

impl PredictiveSet {
    pub fn new(per_teacher: Vec<Categorical>) -> Result<Self> {
        if per_teacher.is_empty() {
            return Err(Error::InvalidDistribution(
                "predictive set needs at least one teacher".into(),
            ));
        }
        let v = per_teacher[0].len();
        if per_teacher.iter().any(|p| p.len() != v) {
            return Err(Error::InvalidDistribution(
                "predictive set teachers must share one vocabulary".into(),
            ));
        }
        Ok(PredictiveSet { per_teacher })
    }

    pub fn n_teachers(&self) -> usize {
        self.per_teacher.len()
    }

    pub fn per_teacher(&self) -> &[Categorical] {
        &self.per_teacher
    }
}

/// Exact minimizer of sum_u w_u KL(p_u || q): the weighted arithmetic mean.
/// Omitted weights mean uniform 1/N.
pub fn barycenter(zset: &PredictiveSet, weights: Option<&[f64]>) -> Categorical {
    let n = zset.n_teachers();
    let v = zset.per_teacher[0].len();
    let uniform = vec![1.0 / n as f64; n];
    let weights = match weights {
        Some(w) => {
            assert_eq!(w.len(), n, "one weight per teacher");
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "weights must sum to 1");
            w.to_vec()
        }
        None => uniform,
    };
    let mut mean = vec![0.0; v];
    for (p, w) in zset.per_teacher.iter().zip(&weights) {
        for (m, &pi) in mean.iter_mut().zip(p.probs()) {
            *m += w * pi;
        }
    }
    // renormalize away accumulated rounding
    let sum: f64 = mean.iter().sum();
    Categorical::new(mean.into_iter().map(|m| m / sum).collect())
        .expect("convex combination of distributions is a distribution")
}

/// A trainable tabular policy plus an immutability marker for frozen
/// reference snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentPolicy {
    policy: TabularPolicy,
    reference: bool,
}

impl StudentPolicy {
    /// Fresh student with all-zero (uniform) logits.
    pub fn new(vocab: Vocab, order: usize) -> Self {
        StudentPolicy {
            policy: TabularPolicy::new(vocab, order, 1.0),
            reference: false,
        }
    }

    pub fn from_policy(policy: TabularPolicy) -> Self {
        StudentPolicy {
            policy,
            reference: false,
        }
    }

    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn is_reference(&self) -> bool {
        self.reference
    }

    pub fn order(&self) -> usize {
        self.policy.order()
    }

    /// Immutable snapshot for later use as the frozen reference.
    pub fn freeze_reference(&self) -> StudentPolicy {
        StudentPolicy {
            policy: self.policy.clone(),
            reference: true,
        }
    }

    pub fn rows(&self) -> &BTreeMap<RowKey, Vec<f64>> {
        self.policy.rows()
    }

    pub fn resolve_key(&self, context: &ContextId, prefix: &[Token]) -> Option<RowKey> {
        self.policy.resolve_key(context, prefix)
    }

    pub fn set_row(&mut self, key: RowKey, logits: Vec<f64>) {
        assert!(!self.reference, "reference snapshots are immutable");
        self.policy.set_row(key, logits);
    }

    pub fn set_row_probs(&mut self, key: RowKey, probs: &[f64]) {
        assert!(!self.reference, "reference snapshots are immutable");
        self.policy.set_row_probs(key, probs);
    }

    /// Materialize the full-order row for (context, prefix), creating a zero
    /// row if absent. Training always owns an exact row per visited prefix
    /// window; suffix backoff only serves lookups at unvisited prefixes.
    pub fn materialize_key(&mut self, context: &ContextId, prefix: &[Token]) -> RowKey {
        assert!(!self.reference, "reference snapshots are immutable");
        let start = prefix.len().saturating_sub(self.policy.order());
        let key = RowKey::new(context, &prefix[start..]);
        self.policy.row_or_default(key.clone());
        key
    }

    /// Apply `logits -= lr * grad` for every row present in the gradient
    /// table. Gradient keys must already exist in the policy.
    pub fn apply_gradient(&mut self, grad: &BTreeMap<RowKey, Vec<f64>>, lr: f64) {
        assert!(!self.reference, "reference snapshots are immutable");
        for (key, g) in grad {
            let row = self
                .policy
                .row_mut(key)
                .expect("gradient keys must be materialized rows");
            for (r, gi) in row.iter_mut().zip(g) {
                *r -= lr * gi;
            }
        }
    }
}

impl AutoregressivePolicy for StudentPolicy {
    fn vocab(&self) -> &Vocab {
        self.policy.vocab()
    }
    fn predictive(&self, context: &ContextId, prefix: &[Token]) -> Categorical {
        self.policy.predictive(context, prefix)
    }
}

/// One SPD training point: a shared (context, student-visible prefix)
/// alignment point and the teachers' predictives there.
#[derive(Debug, Clone)]
pub struct AlignmentPoint {
    pub context: ContextId,
    pub prefix: Vec<Token>,
    pub zset: PredictiveSet,
}

/// Harvest alignment points from a corpus: every (context, last-k prefix)
/// visited by any teacher trajectory, with each teacher's predictive
/// estimated as its empirical next-token distribution at that point.
pub fn collect_alignment_points(
    corpus: &[TrajectoryRecord],
    vocab_size: usize,
    order: usize,
) -> Result<Vec<AlignmentPoint>> {
    // (context, prefix) -> teacher -> token counts
    let mut counts: BTreeMap<(Vec<Token>, Vec<Token>), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for rec in corpus {
        for (j, &t) in rec.tokens.iter().enumerate() {
            let start = j.saturating_sub(order);
            let prefix = rec.tokens[start..j].to_vec();
            let per_teacher = counts.entry((rec.context.clone(), prefix)).or_default();
            let row = per_teacher
                .entry(&rec.teacher_id)
                .or_insert_with(|| vec![0.0; vocab_size]);
            row[t as usize] += 1.0;
        }
    }
    let mut points = Vec::with_capacity(counts.len());
    for ((context, prefix), per_teacher) in counts {
        let per: Vec<Categorical> = per_teacher
            .values()
            .map(|c| {
                let total: f64 = c.iter().sum();
                Categorical::new(c.iter().map(|x| x / total).collect())
                    .expect("normalized counts form a distribution")
            })
            .collect();
        points.push(AlignmentPoint {
            context: ContextId::new(context)?,
            prefix,
            zset: PredictiveSet::new(per)?,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyAlignmentSet);
    }
    Ok(points)
}

/// Mean over the batch of KL(barycenter(Z) || q_theta) at each point.
pub fn spd_loss(student: &StudentPolicy, batch: &[AlignmentPoint]) -> Result<f64> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut total = 0.0;
    for point in batch {
        let target = barycenter(&point.zset, None);
        let q = student.predictive(&point.context, &point.prefix);
        total += kl_divergence(&target, &q)?;
    }
    Ok(total / batch.len() as f64)
}

/// Full-batch gradient of `spd_loss` with respect to the student logits.
/// Rows for every batch point must already be materialized.
fn spd_grad(student: &StudentPolicy, batch: &[AlignmentPoint]) -> BTreeMap<RowKey, Vec<f64>> {
    let mut grad: BTreeMap<RowKey, Vec<f64>> = BTreeMap::new();
    let scale = 1.0 / batch.len() as f64;
    for point in batch {
        let target = barycenter(&point.zset, None);
        let key = student
            .resolve_key(&point.context, &point.prefix)
            .expect("batch rows are materialized before training");
        let q = student.predictive(&point.context, &point.prefix);
        let g = grad
            .entry(key)
            .or_insert_with(|| vec![0.0; q.len()]);
        // d KL(p || softmax(theta)) / d theta = q - p
        for ((gi, &qi), &pi) in g.iter_mut().zip(q.probs()).zip(target.probs()) {
            *gi += scale * (qi - pi);
        }
    }
    grad
}

/// Result of supervised pre-distillation: the trained student and the
/// frozen reference snapshot, plus the full-batch loss curve.
#[derive(Debug, Clone)]
pub struct SpdOutcome {
    pub student: StudentPolicy,
    pub reference: StudentPolicy,
    pub losses: Vec<f64>,
}

/// Supervised pre-distillation: harvest alignment points from the corpus and
/// run `epochs` full-batch gradient steps toward the per-point barycenters.
/// Deterministic; `epochs = 0` returns the student unchanged.
pub fn train_spd(
    mut student: StudentPolicy,
    corpus: &[TrajectoryRecord],
    epochs: usize,
    lr: f64,
) -> Result<SpdOutcome> {
    assert!(!corpus.is_empty(), "corpus must be non-empty");
    let points = collect_alignment_points(corpus, student.vocab().size(), student.order())?;
    for point in &points {
        student.materialize_key(&point.context, &point.prefix);
    }
    let mut losses = Vec::with_capacity(epochs + 1);
    losses.push(spd_loss(&student, &points)?);
    for _ in 0..epochs {
        let grad = spd_grad(&student, &points);
        student.apply_gradient(&grad, lr);
        losses.push(spd_loss(&student, &points)?);
    }
    debug_assert!(losses.last().unwrap() <= &(losses[0] + 1e-12));
    let reference = student.freeze_reference();
    Ok(SpdOutcome {
        student,
        reference,
        losses,
    })
}

/// Decoding mode for self-distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Encode the conditioning for self-distillation: the teacher trajectories
/// (terminal EOS stripped) joined with SEP in ascending teacher order,
/// SEP-terminated, truncated from the left to `cap` tokens.
pub fn encode_conditioning(
    vocab: &Vocab,
    trajectories: &[Vec<Token>],
    cap: usize,
) -> Vec<Token> {
    let mut encoded = Vec::new();
    for traj in trajectories {
        encoded.push(vocab.sep());
        let body = match traj.last() {
            Some(&t) if t == vocab.eos() => &traj[..traj.len() - 1],
            _ => &traj[..],
        };
        encoded.extend_from_slice(body);
    }
    encoded.push(vocab.sep());
    if encoded.len() > cap {
        encoded.drain(..encoded.len() - cap);
    }
    encoded
}

/// Sample a consensus trajectory from the frozen pre-distilled reference,
/// conditioned on the SEP-joined teacher trajectories. Deterministic given
/// seed (and exactly deterministic in greedy mode).
pub fn self_distill(
    reference: &StudentPolicy,
    context: &ContextId,
    teacher_trajectories: &[Vec<Token>],
    max_len: usize,
    cap: usize,
    mode: DecodeMode,
    seed: u64,
) -> Result<Vec<Token>> {
    assert!(!teacher_trajectories.is_empty(), "need at least one trajectory");
    if cap < reference.order() {
        return Err(Error::ContextOverflow {
            required: reference.order(),
            cap,
        });
    }
    let encoding = encode_conditioning(reference.vocab(), teacher_trajectories, cap);
    let tokens = match mode {
        DecodeMode::Greedy => reference
            .policy()
            .greedy_continuation(context, &encoding, max_len),
        DecodeMode::Sample => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            reference
                .policy()
                .sample_continuation(context, &encoding, max_len, &mut rng)
        }
    };
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teachers::{DriftSchedule, TeacherEnsemble};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn vocab4() -> Vocab {
        Vocab::new(vec!["a".into(), "b".into(), "SEP".into(), "EOS".into()], 2, 3).unwrap()
    }

    fn ctx(t: Token) -> ContextId {
        ContextId::new(vec![t]).unwrap()
    }

    fn cat(p: &[f64]) -> Categorical {
        Categorical::new(p.to_vec()).unwrap()
    }

    #[test]
    fn barycenter_of_identical_teachers_is_identity() {
        let p = cat(&[0.3, 0.2, 0.1, 0.4]);
        let zset = PredictiveSet::new(vec![p.clone(), p.clone(), p.clone()]).unwrap();
        let b = barycenter(&zset, None);
        assert!(b.max_abs_diff(&p) < 1e-12);
    }

    /// Grid search over the 2-simplex at step 1e-4 confirms the arithmetic
    /// mean minimizes the summed forward KL.
    #[test]
    fn barycenter_matches_grid_search_on_two_teachers() {
        let p1 = cat(&[0.8, 0.2]);
        let p2 = cat(&[0.2, 0.8]);
        let zset = PredictiveSet::new(vec![p1.clone(), p2.clone()]).unwrap();
        let b = barycenter(&zset, None);
        assert!(b.max_abs_diff(&cat(&[0.5, 0.5])) < 1e-12);

        let objective = |q: &Categorical| {
            kl_divergence(&p1, q).unwrap() + kl_divergence(&p2, q).unwrap()
        };
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..10_000 {
            let x = i as f64 * 1e-4;
            let q = cat(&[x, 1.0 - x]);
            let obj = objective(&q);
            if obj < best.0 {
                best = (obj, x);
            }
        }
        assert!(objective(&b) <= best.0 + 1e-12);
        assert!((best.1 - 0.5).abs() < 1e-4 + 1e-12);
    }

    /// Brute-force simplex grid oracle at V=3.
    #[test]
    fn barycenter_matches_simplex_grid_minimizer() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let ps: Vec<Categorical> = (0..3)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    cat(&raw.iter().map(|x| x / sum).collect::<Vec<_>>())
                })
                .collect();
            let zset = PredictiveSet::new(ps.clone()).unwrap();
            let b = barycenter(&zset, None);
            let objective = |q: &Categorical| -> f64 {
                ps.iter().map(|p| kl_divergence(p, q).unwrap()).sum()
            };
            let step = 1e-3;
            let n = 1000usize;
            let mut best_q = None;
            let mut best = f64::INFINITY;
            for i in 1..n {
                for j in 1..(n - i) {
                    let q = cat(&[i as f64 * step, j as f64 * step, (n - i - j) as f64 * step]);
                    let obj = objective(&q);
                    if obj < best {
                        best = obj;
                        best_q = Some(q);
                    }
                }
            }
            let best_q = best_q.unwrap();
            assert!(objective(&b) <= best + 1e-12);
            assert!(b.total_variation(&best_q) < 2e-3);
        }
    }

    #[test]
    fn barycenter_is_permutation_invariant_under_uniform_weights() {
        let ps = vec![cat(&[0.7, 0.1, 0.2]), cat(&[0.1, 0.8, 0.1]), cat(&[0.3, 0.3, 0.4])];
        let mut reversed = ps.clone();
        reversed.reverse();
        let a = barycenter(&PredictiveSet::new(ps).unwrap(), None);
        let b = barycenter(&PredictiveSet::new(reversed).unwrap(), None);
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    /// Minimizer property: the barycenter beats 1,000 random alternatives.
    #[test]
    fn barycenter_beats_random_alternatives() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ps = vec![cat(&[0.6, 0.3, 0.1]), cat(&[0.2, 0.2, 0.6])];
        let zset = PredictiveSet::new(ps.clone()).unwrap();
        let b = barycenter(&zset, None);
        let objective = |q: &Categorical| -> f64 {
            ps.iter().map(|p| kl_divergence(p, q).unwrap()).sum()
        };
        let best = objective(&b);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let q = cat(&raw.iter().map(|x| x / sum).collect::<Vec<_>>());
            assert!(best <= objective(&q) + 1e-12);
        }
    }

    fn point(context: ContextId, prefix: Vec<Token>, ps: Vec<Categorical>) -> AlignmentPoint {
        AlignmentPoint {
            context,
            prefix,
            zset: PredictiveSet::new(ps).unwrap(),
        }
    }

    #[test]
    fn spd_loss_zero_when_student_matches_barycenter() {
        let vocab = vocab4();
        let mut student = StudentPolicy::new(vocab.clone(), 2);
        let target = [0.5, 0.3, 0.1, 0.1];
        student.set_row(
            RowKey::new(&ctx(0), vec![]),
            target.iter().map(|p: &f64| p.ln()).collect(),
        );
        let batch = vec![point(ctx(0), vec![], vec![cat(&target)])];
        assert!(spd_loss(&student, &batch).unwrap().abs() < 1e-12);
    }

    #[test]
    fn spd_loss_single_point_hand_value() {
        let vocab = Vocab::new(vec!["a".into(), "b".into()], 0, 1).unwrap();
        let mut student = StudentPolicy::new(vocab, 1);
        student.set_row(RowKey::new(&ctx(0), vec![]), vec![0.2f64.ln(), 0.8f64.ln()]);
        let batch = vec![point(ctx(0), vec![], vec![cat(&[0.8, 0.2])])];
        let expected = 0.8 * 4.0f64.ln() + 0.2 * 0.25f64.ln();
        assert!((spd_loss(&student, &batch).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn spd_loss_decreases_monotonically_under_descent() {
        let vocab = vocab4();
        let mut student = StudentPolicy::new(vocab.clone(), 2);
        let batch = vec![
            point(ctx(0), vec![], vec![cat(&[0.7, 0.1, 0.1, 0.1]), cat(&[0.1, 0.7, 0.1, 0.1])]),
            point(ctx(1), vec![0], vec![cat(&[0.05, 0.05, 0.05, 0.85])]),
        ];
        for p in &batch {
            student.materialize_key(&p.context, &p.prefix);
        }
        let mut last = spd_loss(&student, &batch).unwrap();
        for _ in 0..3000 {
            let grad = spd_grad(&student, &batch);
            student.apply_gradient(&grad, 0.1);
            let loss = spd_loss(&student, &batch).unwrap();
            assert!(loss <= last + 1e-12, "loss must not increase");
            last = loss;
        }
        assert!(last < 1e-3);
    }

    /// Stability bound: at lr 0.5 the full-batch loss never increases by
    /// more than 1e-8 between consecutive steps.
    #[test]
    fn spd_descent_is_stable_at_half_learning_rate() {
        let vocab = vocab4();
        let mut student = StudentPolicy::new(vocab.clone(), 2);
        let batch = vec![
            point(ctx(0), vec![], vec![cat(&[0.9, 0.05, 0.02, 0.03])]),
            point(ctx(0), vec![0], vec![cat(&[0.01, 0.01, 0.01, 0.97])]),
            point(ctx(1), vec![], vec![cat(&[0.25, 0.25, 0.25, 0.25])]),
        ];
        for p in &batch {
            student.materialize_key(&p.context, &p.prefix);
        }
        let mut last = spd_loss(&student, &batch).unwrap();
        for _ in 0..500 {
            let grad = spd_grad(&student, &batch);
            student.apply_gradient(&grad, 0.5);
            let loss = spd_loss(&student, &batch).unwrap();
            assert!(loss <= last + 1e-8);
            last = loss;
        }
    }

    fn single_teacher_corpus(vocab: &Vocab, seed: u64) -> (TabularPolicy, Vec<TrajectoryRecord>) {
        let mut teacher = TabularPolicy::new(vocab.clone(), 1, 1.0);
        teacher.set_row_probs(RowKey::new(&ctx(0), vec![]), &[0.6, 0.3, 0.0, 0.1]);
        teacher.set_row_probs(RowKey::new(&ctx(0), vec![0]), &[0.1, 0.1, 0.0, 0.8]);
        teacher.set_row_probs(RowKey::new(&ctx(0), vec![1]), &[0.0, 0.0, 0.0, 1.0]);
        let ensemble =
            TeacherEnsemble::new(vec![teacher.clone()], DriftSchedule::empty(), seed).unwrap();
        let corpus = ensemble
            .generate_corpus(&[ctx(0)], 8000, 6)
            .unwrap();
        (teacher, corpus)
    }

    /// Recoverability oracle: with a single teacher and enough capacity the
    /// student rows converge to the teacher rows within TV 0.05.
    #[test]
    fn train_spd_recovers_single_teacher_rows() {
        let vocab = vocab4();
        let (teacher, corpus) = single_teacher_corpus(&vocab, 123);
        let student = StudentPolicy::new(vocab.clone(), 1);
        let outcome = train_spd(student, &corpus, 2000, 0.5).unwrap();
        for prefix in [vec![], vec![0u32], vec![1u32]] {
            let got = outcome.student.predictive(&ctx(0), &prefix);
            let want = teacher.predictive(&ctx(0), &prefix);
            let tv = got.total_variation(&want);
            assert!(tv < 0.05, "prefix {prefix:?}: TV {tv}");
        }
        assert!(outcome.losses.last().unwrap() <= &outcome.losses[0]);
        assert!(outcome.reference.is_reference());
    }

    #[test]
    fn train_spd_zero_epochs_is_a_no_op() {
        let vocab = vocab4();
        let (_, corpus) = single_teacher_corpus(&vocab, 5);
        let student = StudentPolicy::new(vocab.clone(), 1);
        let outcome = train_spd(student, &corpus, 0, 0.5).unwrap();
        // all rows materialized but untouched: uniform predictives
        let got = outcome.student.predictive(&ctx(0), &[]);
        assert!(got.max_abs_diff(&Categorical::uniform(vocab.size())) < 1e-15);
        assert_eq!(outcome.reference.policy(), outcome.student.policy());
    }

    /// Two teachers with disjoint deterministic continuations at one prefix:
    /// the student converges to the 50/50 barycenter.
    #[test]
    fn train_spd_converges_to_disjoint_barycenter() {
        let vocab = vocab4();
        let mut ta = TabularPolicy::new(vocab.clone(), 1, 1.0);
        let mut tb = TabularPolicy::new(vocab.clone(), 1, 1.0);
        ta.set_row(RowKey::new(&ctx(0), vec![]), vec![30.0, -30.0, -30.0, -30.0]);
        ta.set_row(RowKey::new(&ctx(0), vec![0]), vec![-30.0, -30.0, -30.0, 30.0]);
        tb.set_row(RowKey::new(&ctx(0), vec![]), vec![-30.0, 30.0, -30.0, -30.0]);
        tb.set_row(RowKey::new(&ctx(0), vec![1]), vec![-30.0, -30.0, -30.0, 30.0]);
        let ensemble = TeacherEnsemble::new(vec![ta, tb], DriftSchedule::empty(), 7).unwrap();
        let corpus = ensemble.generate_corpus(&[ctx(0)], 200, 4).unwrap();
        let outcome = train_spd(StudentPolicy::new(vocab, 1), &corpus, 2000, 0.5).unwrap();
        let got = outcome.student.predictive(&ctx(0), &[]);
        assert!(got.total_variation(&cat(&[0.5, 0.5, 0.0, 0.0])) < 0.05);
    }

    #[test]
    fn empty_alignment_set_is_an_error() {
        // a corpus exists but the student never gets valid points: impossible
        // via collect (any record yields points), so check the collector on
        // an empty corpus directly.
        assert!(matches!(
            collect_alignment_points(&[], 4, 1).unwrap_err(),
            Error::EmptyAlignmentSet
        ));
    }

    #[test]
    fn reference_snapshot_serializes_bit_identically() {
        let vocab = vocab4();
        let (_, corpus) = single_teacher_corpus(&vocab, 99);
        let outcome = train_spd(StudentPolicy::new(vocab, 1), &corpus, 50, 0.3).unwrap();
        let a = serde_json::to_vec(&outcome.reference).unwrap();
        let b = serde_json::to_vec(&outcome.reference).unwrap();
        let reparsed: StudentPolicy = serde_json::from_slice(&a).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_vec(&reparsed).unwrap(), a);
    }

    #[test]
    fn self_distill_greedy_consistency_with_single_teacher() {
        let vocab = vocab4();
        let mut student = StudentPolicy::new(vocab.clone(), 2);
        // student: at (ctx, []) emit a, then EOS after a
        student.set_row(RowKey::new(&ctx(0), vec![]), vec![5.0, -5.0, -5.0, -5.0]);
        student.set_row(RowKey::new(&ctx(0), vec![0]), vec![-5.0, -5.0, -5.0, 5.0]);
        let reference = student.freeze_reference();
        let teacher_traj = vec![vec![0u32, 3]]; // already the greedy continuation
        let got = self_distill(&reference, &ctx(0), &teacher_traj, 10, 64, DecodeMode::Greedy, 0)
            .unwrap();
        let greedy = reference.policy().greedy_continuation(&ctx(0), &encode_conditioning(&vocab, &teacher_traj, 64), 10);
        assert_eq!(got, greedy);
        assert_eq!(got, vec![0, 3]);
    }

    #[test]
    fn self_distill_is_deterministic_given_seed() {
        let vocab = vocab4();
        let student = StudentPolicy::new(vocab.clone(), 2);
        let reference = student.freeze_reference();
        let trajs = vec![vec![0u32, 3], vec![1, 3]];
        let a = self_distill(&reference, &ctx(0), &trajs, 20, 64, DecodeMode::Sample, 9).unwrap();
        let b = self_distill(&reference, &ctx(0), &trajs, 20, 64, DecodeMode::Sample, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_distill_context_overflow() {
        let vocab = vocab4();
        let reference = StudentPolicy::new(vocab, 2).freeze_reference();
        assert!(matches!(
            self_distill(&reference, &ctx(0), &[vec![0]], 5, 1, DecodeMode::Greedy, 0).unwrap_err(),
            Error::ContextOverflow { required: 2, cap: 1 }
        ));
    }

    /// The first sampled token matches the row the truncated conditioning
    /// resolves to (chi-squared over 10,000 draws).
    #[test]
    fn self_distill_first_token_matches_resolved_row() {
        let vocab = vocab4();
        let mut student = StudentPolicy::new(vocab.clone(), 2);
        // row keyed by the exact last-2 tokens of the encoding [.., 0, SEP]
        let row_probs = [0.5, 0.25, 0.05, 0.2];
        student.set_row_probs(RowKey::new(&ctx(0), vec![0, vocab.sep()]), &row_probs);
        let reference = student.freeze_reference();
        let trajs = vec![vec![0u32, vocab.eos()]]; // encoding: [SEP, 0, SEP]
        let expected = reference.predictive(&ctx(0), &encode_conditioning(&vocab, &trajs, 64));
        assert!(expected.max_abs_diff(&cat(&row_probs)) < 1e-12);

        let n = 10_000usize;
        let mut counts = [0usize; 4];
        for i in 0..n {
            let t = self_distill(&reference, &ctx(0), &trajs, 1, 64, DecodeMode::Sample, i as u64)
                .unwrap();
            counts[t[0] as usize] += 1;
        }
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(&row_probs) {
            let e = p * n as f64;
            chi2 += (*c as f64 - e).powi(2) / e;
        }
        let dist = ChiSquared::new(3.0).unwrap();
        assert!(1.0 - dist.cdf(chi2) > 0.01, "chi2 = {chi2}");
    }
}
