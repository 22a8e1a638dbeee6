//! Multi-stream concept-drift detection over teacher trajectory corpora:
//! a windowed two-sample test on per-context next-token distributions,
//! calibrated by permutation.
//!
//! The statistic is the mean symmetric KL (Jeffreys) divergence between
//! matched per-context summaries, with add-0.5 smoothing. The joint
//! statistic over N teachers is the sum of per-teacher statistics (the
//! log-domain image of the factorized joint law).

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::Token;
use crate::error::{Error, Result};
use crate::io::TrajectoryRecord;
use crate::teachers::derive_seed;

/// Smoothing pseudo-count added per vocabulary entry before normalizing.
pub const SMOOTHING: f64 = 0.5;

/// A window of one teacher's records, summarized as empirical next-token
/// counts per context bucket.
#[derive(Debug, Clone)]
pub struct StreamWindow {
    teacher_id: String,
    vocab_size: usize,
    buckets: BTreeMap<Vec<Token>, Vec<f64>>,
    n_records: usize,
}

impl StreamWindow {
    pub fn build(teacher_id: &str, records: &[&TrajectoryRecord], vocab_size: usize) -> Self {
        let mut buckets: BTreeMap<Vec<Token>, Vec<f64>> = BTreeMap::new();
        for rec in records {
            let counts = buckets
                .entry(rec.context.clone())
                .or_insert_with(|| vec![0.0; vocab_size]);
            for &t in &rec.tokens {
                counts[t as usize] += 1.0;
            }
        }
        StreamWindow {
            teacher_id: teacher_id.to_string(),
            vocab_size,
            buckets,
            n_records: records.len(),
        }
    }

    pub fn teacher_id(&self) -> &str {
        &self.teacher_id
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn contexts(&self) -> impl Iterator<Item = &Vec<Token>> {
        self.buckets.keys()
    }

    /// Smoothed summary distribution for one context bucket.
    pub fn summary(&self, context: &[Token]) -> Option<Vec<f64>> {
        self.buckets.get(context).map(|c| smooth(c, self.vocab_size))
    }

    /// Fraction of count mass sitting in buckets the other window lacks.
    pub fn unshared_fraction(&self, other: &StreamWindow) -> f64 {
        let total: f64 = self.buckets.values().flatten().sum();
        if total == 0.0 {
            return 0.0;
        }
        let unshared: f64 = self
            .buckets
            .iter()
            .filter(|(ctx, _)| !other.buckets.contains_key(*ctx))
            .flat_map(|(_, c)| c.iter())
            .sum();
        unshared / total
    }
}

fn smooth(counts: &[f64], vocab_size: usize) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + SMOOTHING * vocab_size as f64;
    counts.iter().map(|c| (c + SMOOTHING) / total).collect()
}

fn sym_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a - b) * (a / b).ln())
        .sum()
}

/// Mean symmetric KL between matched per-context summaries of two windows
/// of the same teacher. Contexts present in only one window are excluded.
pub fn stream_divergence(a: &StreamWindow, b: &StreamWindow) -> Result<f64> {
    assert_eq!(a.teacher_id, b.teacher_id, "windows must belong to one teacher");
    assert_eq!(a.vocab_size, b.vocab_size);
    let mut total = 0.0;
    let mut shared = 0usize;
    for (ctx, ca) in &a.buckets {
        if let Some(cb) = b.buckets.get(ctx) {
            total += sym_kl(&smooth(ca, a.vocab_size), &smooth(cb, b.vocab_size));
            shared += 1;
        }
    }
    if shared == 0 {
        return Err(Error::NoSharedContexts);
    }
    Ok((total / shared as f64).max(0.0))
}

/// Outcome of one statistic against its permutation threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTest {
    pub statistic: f64,
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherDrift {
    pub teacher_id: String,
    pub test: StatTest,
    /// Count mass in context buckets not shared between the two windows;
    /// excluded from the statistic, reported here.
    pub unshared_context_fraction: f64,
}

/// Drift test outcome at one step: per-teacher tests plus the joint test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub step: i64,
    pub per_teacher: Vec<TeacherDrift>,
    pub joint: StatTest,
}

impl DriftReport {
    /// Flatten into one metrics row per test (for CSV export).
    pub fn metric_rows(&self) -> Vec<crate::io::MetricRow> {
        let mut rows = Vec::new();
        for td in &self.per_teacher {
            let mut row = crate::io::MetricRow::new();
            row.insert("step".into(), self.step.into());
            row.insert("scope".into(), format!("teacher:{}", td.teacher_id).into());
            row.insert("statistic".into(), td.test.statistic.into());
            row.insert("threshold".into(), td.test.threshold.into());
            row.insert("flagged".into(), td.test.flagged.into());
            row.insert("unshared_fraction".into(), td.unshared_context_fraction.into());
            rows.push(row);
        }
        let mut row = crate::io::MetricRow::new();
        row.insert("step".into(), self.step.into());
        row.insert("scope".into(), "joint".into());
        row.insert("statistic".into(), self.joint.statistic.into());
        row.insert("threshold".into(), self.joint.threshold.into());
        row.insert("flagged".into(), self.joint.flagged.into());
        row.insert("unshared_fraction".into(), 0.0.into());
        rows.push(row);
        rows
    }
}

/// Permutation threshold at level `alpha`: the k-th largest replicate
/// statistic with k = floor(alpha * (n + 1)), so that P(stat > threshold)
/// under the null is at most alpha. k = 0 yields +inf (never flag).
pub fn permutation_threshold(replicates: &[f64], alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0);
    let k = (alpha * (replicates.len() + 1) as f64).floor() as usize;
    if k == 0 {
        return f64::INFINITY;
    }
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[k - 1]
}

// Dense per-record summary used inside the permutation loop.
struct RecordSummary {
    ctx: usize,
    tokens: Vec<Token>,
}

struct DenseWindows {
    n_contexts: usize,
    vocab_size: usize,
}

impl DenseWindows {
    fn statistic(&self, pool: &[RecordSummary], order: &[usize], split: usize) -> f64 {
        let mut a = vec![vec![0.0f64; self.vocab_size]; self.n_contexts];
        let mut b = vec![vec![0.0f64; self.vocab_size]; self.n_contexts];
        let mut a_seen = vec![false; self.n_contexts];
        let mut b_seen = vec![false; self.n_contexts];
        for (pos, &idx) in order.iter().enumerate() {
            let rec = &pool[idx];
            let (win, seen) = if pos < split {
                (&mut a, &mut a_seen)
            } else {
                (&mut b, &mut b_seen)
            };
            seen[rec.ctx] = true;
            for &t in &rec.tokens {
                win[rec.ctx][t as usize] += 1.0;
            }
        }
        let mut total = 0.0;
        let mut shared = 0usize;
        for c in 0..self.n_contexts {
            if a_seen[c] && b_seen[c] {
                total += sym_kl(
                    &smooth(&a[c], self.vocab_size),
                    &smooth(&b[c], self.vocab_size),
                );
                shared += 1;
            }
        }
        if shared == 0 {
            0.0
        } else {
            (total / shared as f64).max(0.0)
        }
    }
}

/// Windowed two-sample drift test at `step`: reference window
/// [step-2W, step-W) against current window [step-W, step), per teacher and
/// jointly, with permutation-calibrated thresholds at level `alpha`.
/// Deterministic given `seed`.
pub fn detect_drift(
    history: &[TrajectoryRecord],
    step: i64,
    w: usize,
    alpha: f64,
    permutations: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<DriftReport> {
    assert!(w >= 1);
    assert!(permutations >= 100, "need at least 100 permutations");
    let from = step - 2 * w as i64;
    let mid = step - w as i64;

    let mut by_teacher: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for rec in history {
        if rec.corpus_step >= from && rec.corpus_step < step {
            by_teacher.entry(&rec.teacher_id).or_default().push(rec);
        }
    }

    let mut per_teacher = Vec::new();
    let mut perm_stats: Vec<Vec<f64>> = Vec::new();
    for (u, (teacher_id, records)) in by_teacher.iter().enumerate() {
        if records.len() < 2 * w {
            return Err(Error::InsufficientHistory {
                teacher: teacher_id.to_string(),
                available: records.len(),
                required: 2 * w,
                from,
                to: step,
            });
        }
        let (recs_a, recs_b): (Vec<&TrajectoryRecord>, Vec<&TrajectoryRecord>) =
            records.iter().partition(|r| r.corpus_step < mid);
        let win_a = StreamWindow::build(teacher_id, &recs_a, vocab_size);
        let win_b = StreamWindow::build(teacher_id, &recs_b, vocab_size);
        let statistic = stream_divergence(&win_a, &win_b)?;
        let unshared = win_a.unshared_fraction(&win_b).max(win_b.unshared_fraction(&win_a));

        // Context dictionary for the dense permutation loop.
        let mut ctx_ids: BTreeMap<&[Token], usize> = BTreeMap::new();
        let pool: Vec<RecordSummary> = records
            .iter()
            .map(|r| {
                let next = ctx_ids.len();
                let ctx = *ctx_ids.entry(&r.context).or_insert(next);
                RecordSummary {
                    ctx,
                    tokens: r.tokens.clone(),
                }
            })
            .collect();
        let dense = DenseWindows {
            n_contexts: ctx_ids.len(),
            vocab_size,
        };
        let split = recs_a.len();
        let mut replicates = Vec::with_capacity(permutations);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for r in 0..permutations {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u as u64, r as u64]));
            order.shuffle(&mut rng);
            replicates.push(dense.statistic(&pool, &order, split));
        }
        let threshold = permutation_threshold(&replicates, alpha);
        per_teacher.push(TeacherDrift {
            teacher_id: teacher_id.to_string(),
            test: StatTest {
                statistic,
                threshold,
                flagged: statistic > threshold,
            },
            unshared_context_fraction: unshared,
        });
        perm_stats.push(replicates);
    }

    let joint_stat: f64 = per_teacher.iter().map(|t| t.test.statistic).sum();
    let joint_replicates: Vec<f64> = (0..permutations)
        .map(|r| perm_stats.iter().map(|p| p[r]).sum())
        .collect();
    let joint_threshold = permutation_threshold(&joint_replicates, alpha);
    Ok(DriftReport {
        step,
        per_teacher,
        joint: StatTest {
            statistic: joint_stat,
            threshold: joint_threshold,
            flagged: joint_stat > joint_threshold,
        },
    })
}
