//! Staged learn-compare-critique orchestration: the synthetic concept-group
//! evaluation task, complementary drifting teacher construction, corpus
//! generation, the SPD / self-distillation / APO stage chain with on-disk
//! artifacts, and greedy-decode evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apo::{train_apo, ApoConfig, PreferenceTuple};
use crate::core::{AutoregressivePolicy, ContextId, Token, Vocab};
use crate::distill::{self_distill, train_spd, DecodeMode, StudentPolicy};
use crate::drift::{detect_drift, DriftReport};
use crate::error::{Error, Result};
use crate::io::{
    self, MetricRow, MetricValue, RunManifest, TrajectoryRecord,
};
use crate::teachers::{
    derive_seed, DriftEvent, DriftKind, DriftSchedule, Perturbation, RowKey, TabularPolicy,
    TeacherEnsemble,
};

pub const VOCAB_FILE: &str = "vocab.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPD_STUDENT_FILE: &str = "spd_student.json";
pub const SPD_REFERENCE_FILE: &str = "spd_reference.json";
pub const TUPLES_FILE: &str = "tuples.json";
pub const APO_STUDENT_FILE: &str = "apo_student.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DRIFT_REPORT_FILE: &str = "drift_report.json";

/// Full experiment configuration. Every field has a default; a config file
/// may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Number of teachers N; teacher u is accurate on concept group u mod K.
    pub n_teachers: usize,
    /// Number of concept groups K (also the number of answer tokens).
    pub concept_groups: usize,
    pub contexts_per_group: usize,
    /// How many times the evaluation contexts cycle through the corpus
    /// schedule (drift advances along it).
    pub corpus_repeats: usize,
    /// Override the corpus schedule length directly (None: groups x
    /// contexts_per_group x corpus_repeats).
    pub corpus_steps: Option<usize>,
    /// Trajectories per (teacher, schedule step).
    pub per_context: usize,
    /// Uniform random record subsampling after generation.
    pub subsample_fraction: f64,
    pub max_len: usize,
    pub order: usize,
    pub temperature: f64,
    /// Gold-answer mass of a teacher's first-step row on its own group.
    pub on_group_gold: f64,
    /// Total-variation distance between a teacher's on-group and off-group
    /// first-step rows (mass moved from the gold answer to a per-teacher
    /// distractor answer).
    pub off_group_noise_tv: f64,
    /// EOS mass after an answer token.
    pub eos_prob: f64,
    /// Logit bump a gradual drift event adds to the distractor coordinate of
    /// every off-group row by the end of the schedule.
    pub drift_delta: f64,
    pub spd_epochs: usize,
    pub spd_lr: f64,
    pub context_cap: usize,
    pub decode: DecodeMode,
    pub apo: ApoConfig,
    pub drift_window: usize,
    pub drift_alpha: f64,
    pub drift_permutations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            n_teachers: 5,
            concept_groups: 5,
            contexts_per_group: 4,
            corpus_repeats: 10,
            corpus_steps: None,
            per_context: 3,
            subsample_fraction: 1.0,
            max_len: 4,
            order: 2,
            temperature: 1.0,
            on_group_gold: 0.92,
            off_group_noise_tv: 0.4,
            eos_prob: 0.96,
            drift_delta: 2.0,
            spd_epochs: 300,
            spd_lr: 0.5,
            context_cap: 64,
            decode: DecodeMode::Greedy,
            apo: ApoConfig::default(),
            drift_window: 500,
            drift_alpha: 0.05,
            drift_permutations: 1000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_teachers == 0 {
            return err("n_teachers must be at least 1".into());
        }
        if self.concept_groups < 2 {
            return err("concept_groups must be at least 2".into());
        }
        if self.contexts_per_group == 0 {
            return err("contexts_per_group must be at least 1".into());
        }
        if self.corpus_repeats == 0 && self.corpus_steps.is_none() {
            return err("corpus_repeats must be at least 1".into());
        }
        if self.corpus_steps == Some(0) {
            return err("corpus_steps must be at least 1".into());
        }
        if self.per_context == 0 {
            return err("per_context must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.subsample_fraction) || self.subsample_fraction == 0.0 {
            return err("subsample_fraction must be in (0, 1]".into());
        }
        if self.max_len < 2 {
            return err("max_len must be at least 2".into());
        }
        if self.order == 0 {
            return err("order must be at least 1".into());
        }
        if self.temperature <= 0.0 {
            return err("temperature must be positive".into());
        }
        if !(0.0 < self.on_group_gold && self.on_group_gold < 1.0) {
            return err("on_group_gold must be in (0, 1)".into());
        }
        if self.off_group_noise_tv < 0.0 || self.off_group_noise_tv >= self.on_group_gold {
            return err("off_group_noise_tv must be in [0, on_group_gold)".into());
        }
        if !(0.0 < self.eos_prob && self.eos_prob < 1.0) {
            return err("eos_prob must be in (0, 1)".into());
        }
        if self.spd_lr <= 0.0 {
            return err("spd_lr must be positive".into());
        }
        if self.context_cap < self.order {
            return err("context_cap must be at least the student order".into());
        }
        if !(0.0 < self.drift_alpha && self.drift_alpha < 1.0) {
            return err("drift_alpha must be in (0, 1)".into());
        }
        self.apo.validate()
    }

    pub fn n_contexts(&self) -> usize {
        self.concept_groups * self.contexts_per_group
    }

    pub fn total_steps(&self) -> usize {
        self.corpus_steps
            .unwrap_or(self.n_contexts() * self.corpus_repeats)
    }
}

/// The synthetic evaluation task: contexts partitioned into concept groups,
/// each with a gold answer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub vocab: Vocab,
    pub contexts: Vec<ContextId>,
    /// Concept group per context.
    pub groups: Vec<usize>,
    /// Gold answer token per concept group, drawn uniformly per seed.
    pub golds: Vec<Token>,
}

impl SynthTask {
    pub fn build(config: &PipelineConfig) -> Result<SynthTask> {
        config.validate()?;
        let k = config.concept_groups;
        let n_ctx = config.n_contexts();
        let vocab = Vocab::synthetic(k, n_ctx);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0xA5]));
        let golds: Vec<Token> = (0..k).map(|_| rng.random_range(0..k as Token)).collect();
        let contexts: Vec<ContextId> = (0..n_ctx)
            .map(|i| ContextId::new(vec![(k + i) as Token]))
            .collect::<Result<_>>()?;
        let groups: Vec<usize> = (0..n_ctx).map(|i| i / config.contexts_per_group).collect();
        Ok(SynthTask {
            vocab,
            contexts,
            groups,
            golds,
        })
    }

    pub fn gold_for_context(&self, i: usize) -> Token {
        self.golds[self.groups[i]]
    }
}

/// The distractor answer teacher `u` over-produces off its own group: a
/// teacher-dependent rotation away from the gold answer, never equal to it.
fn distractor(gold: Token, teacher: usize, k: usize) -> Token {
    let shift = 1 + (teacher as Token % (k as Token - 1));
    (gold + shift) % k as Token
}

/// Build the complementary drifting ensemble: teacher u is accurate on group
/// u mod K and biased toward its distractor elsewhere, with a gradual drift
/// event per teacher pushing the off-group distractor further up over the
/// corpus schedule.
pub fn build_ensemble(task: &SynthTask, config: &PipelineConfig) -> Result<TeacherEnsemble> {
    let k = config.concept_groups;
    let v = task.vocab.size();
    let eos = task.vocab.eos() as usize;
    let mut teachers = Vec::with_capacity(config.n_teachers);
    let mut events = Vec::new();
    let total = config.total_steps();
    for u in 0..config.n_teachers {
        let mut teacher = TabularPolicy::new(task.vocab.clone(), config.order, config.temperature);
        let mut deltas = Vec::new();
        for (i, ctx) in task.contexts.iter().enumerate() {
            let gold = task.gold_for_context(i) as usize;
            let mut first = vec![0.0; v];
            let rest = (1.0 - config.on_group_gold) / (k - 1) as f64;
            for a in 0..k {
                first[a] = if a == gold { config.on_group_gold } else { rest };
            }
            if task.groups[i] != u % k {
                let d = distractor(gold as Token, u, k) as usize;
                first[gold] -= config.off_group_noise_tv;
                first[d] += config.off_group_noise_tv;
                let mut delta = vec![0.0; v];
                delta[d] = config.drift_delta;
                deltas.push((RowKey::new(ctx, vec![]), delta));
            }
            teacher.set_row_probs(RowKey::new(ctx, vec![]), &first);
            for a in 0..k {
                let mut row = vec![0.0; v];
                row[eos] = config.eos_prob;
                for b in 0..k {
                    row[b] = (1.0 - config.eos_prob) / k as f64;
                }
                teacher.set_row_probs(RowKey::new(ctx, vec![a as Token]), &row);
            }
        }
        teachers.push(teacher);
        if config.drift_delta != 0.0 && !deltas.is_empty() {
            let step = u + 1;
            events.push(DriftEvent {
                step,
                teacher: u,
                kind: DriftKind::Gradual {
                    span: total.saturating_sub(step).max(1),
                },
                perturbation: Perturbation::AddDelta(deltas),
            });
        }
    }
    TeacherEnsemble::new(teachers, DriftSchedule::new(events)?, config.seed)
}

/// The corpus schedule: evaluation contexts cycled so every context appears
/// at every drift phase.
pub fn corpus_schedule(task: &SynthTask, config: &PipelineConfig) -> Vec<ContextId> {
    (0..config.total_steps())
        .map(|s| task.contexts[s % task.contexts.len()].clone())
        .collect()
}

/// Generate the corpus for `config`, including subsampling.
pub fn generate_corpus(
    task: &SynthTask,
    config: &PipelineConfig,
) -> Result<Vec<TrajectoryRecord>> {
    let ensemble = build_ensemble(task, config)?;
    let schedule = corpus_schedule(task, config);
    let mut corpus = ensemble.generate_corpus(&schedule, config.per_context, config.max_len)?;
    if config.subsample_fraction < 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5B]));
        corpus.retain(|_| rng.random::<f64>() < config.subsample_fraction);
    }
    Ok(corpus)
}

/// Per-group accuracy plus the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_group: Vec<f64>,
    pub macro_accuracy: f64,
}

/// Greedy argmax decode until EOS or `max_len`.
pub fn greedy_decode(
    policy: &dyn AutoregressivePolicy,
    context: &ContextId,
    max_len: usize,
) -> Vec<Token> {
    let eos = policy.vocab().eos();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let t = policy.predictive(context, &out).argmax();
        out.push(t);
        if t == eos {
            break;
        }
    }
    out
}

fn report_from_answers(task: &SynthTask, answers: &[Option<Token>]) -> EvalReport {
    let n_groups = task.golds.len();
    let mut hits = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (i, answer) in answers.iter().enumerate() {
        let g = task.groups[i];
        counts[g] += 1;
        if *answer == Some(task.gold_for_context(i)) {
            hits[g] += 1.0;
        }
    }
    let per_group: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .map(|(h, c)| if *c == 0 { 0.0 } else { h / *c as f64 })
        .collect();
    let macro_accuracy = per_group.iter().sum::<f64>() / n_groups as f64;
    EvalReport {
        per_group,
        macro_accuracy,
    }
}

/// Greedy-decode each context and score the first decoded token against the
/// group's gold answer.
pub fn evaluate(
    policy: &dyn AutoregressivePolicy,
    task: &SynthTask,
    max_len: usize,
) -> Result<EvalReport> {
    if *policy.vocab() != task.vocab {
        return Err(Error::VocabMismatch(format!(
            "checkpoint vocabulary has {} symbols, task has {}",
            policy.vocab().size(),
            task.vocab.size()
        )));
    }
    let answers: Vec<Option<Token>> = task
        .contexts
        .iter()
        .map(|ctx| greedy_decode(policy, ctx, max_len).first().copied())
        .collect();
    Ok(report_from_answers(task, &answers))
}

/// Build one preference tuple per context: negatives are each teacher's
/// latest corpus trajectory for that context, the positive is the
/// self-distilled consensus from the frozen reference.
pub fn build_preference_tuples(
    task: &SynthTask,
    config: &PipelineConfig,
    corpus: &[TrajectoryRecord],
    reference: &StudentPolicy,
) -> Result<Vec<PreferenceTuple>> {
    let mut latest: BTreeMap<(&[Token], &str), &TrajectoryRecord> = BTreeMap::new();
    for rec in corpus {
        let key = (rec.context.as_slice(), rec.teacher_id.as_str());
        let slot = latest.entry(key).or_insert(rec);
        if (rec.corpus_step, &rec.id) > (slot.corpus_step, &slot.id) {
            *slot = rec;
        }
    }
    let mut tuples = Vec::new();
    for (ci, ctx) in task.contexts.iter().enumerate() {
        let negatives: Vec<Vec<Token>> = (0..config.n_teachers)
            .filter_map(|u| {
                latest
                    .get(&(ctx.tokens(), u.to_string().as_str()))
                    .map(|r| r.tokens.clone())
            })
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let seed = derive_seed(config.seed, &[0x5D, ci as u64]);
        let positive = self_distill(
            reference,
            ctx,
            &negatives,
            config.max_len,
            config.context_cap,
            config.decode,
            seed,
        )?;
        if positive.is_empty() {
            continue;
        }
        tuples.push(PreferenceTuple::uniform(ctx.clone(), positive, negatives)?);
    }
    if tuples.is_empty() {
        return Err(Error::InvalidStream(
            "no preference tuples could be built from the corpus".into(),
        ));
    }
    Ok(tuples)
}

/// Results of the three-way ablation plus per-teacher baselines at the final
/// drift step.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub spd_only: EvalReport,
    pub spd_mt: EvalReport,
    pub apo: EvalReport,
    pub teachers: Vec<EvalReport>,
}

/// Run the whole ablation in memory: single-teacher SPD, multi-teacher SPD,
/// multi-teacher SPD plus APO, and the drifted teacher baselines.
pub fn run_ablation(config: &PipelineConfig) -> Result<AblationResult> {
    let task = SynthTask::build(config)?;
    let ensemble = build_ensemble(&task, config)?;
    let corpus = generate_corpus(&task, config)?;

    let solo: Vec<TrajectoryRecord> = corpus
        .iter()
        .filter(|r| r.teacher_id == "0")
        .cloned()
        .collect();
    let spd_only = train_spd(
        StudentPolicy::new(task.vocab.clone(), config.order),
        &solo,
        config.spd_epochs,
        config.spd_lr,
    )?;

    let spd = train_spd(
        StudentPolicy::new(task.vocab.clone(), config.order),
        &corpus,
        config.spd_epochs,
        config.spd_lr,
    )?;
    let tuples = build_preference_tuples(&task, config, &corpus, &spd.reference)?;
    let apo = train_apo(spd.student.clone(), &spd.reference, &tuples, &config.apo)?;

    let final_step = config.total_steps().saturating_sub(1);
    let drifted = ensemble.apply_drift(final_step)?;
    let teachers = drifted
        .teachers()
        .iter()
        .map(|t| evaluate(t, &task, config.max_len))
        .collect::<Result<_>>()?;

    Ok(AblationResult {
        spd_only: evaluate(&spd_only.student, &task, config.max_len)?,
        spd_mt: evaluate(&spd.student, &task, config.max_len)?,
        apo: evaluate(&apo.policy, &task, config.max_len)?,
        teachers,
    })
}

/// Which stages a pipeline invocation runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageSet {
    pub spd: bool,
    pub selfdistill: bool,
    pub apo: bool,
}

impl StageSet {
    pub fn all() -> Self {
        StageSet {
            spd: true,
            selfdistill: true,
            apo: true,
        }
    }

    pub fn parse(names: &[String]) -> Result<StageSet> {
        let mut set = StageSet::default();
        for name in names {
            match name.as_str() {
                "spd" => set.spd = true,
                "selfdistill" => set.selfdistill = true,
                "apo" => set.apo = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown stage {other:?} (expected spd, selfdistill, apo)"
                    )))
                }
            }
        }
        if !(set.spd || set.selfdistill || set.apo) {
            return Err(Error::InvalidConfig("no stages requested".into()));
        }
        Ok(set)
    }
}

fn artifact(run_dir: &Path, name: &str) -> PathBuf {
    run_dir.join(name)
}

/// Rebuild the run manifest over every artifact currently present.
fn update_manifest(run_dir: &Path, config: &PipelineConfig) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(config.seed, serde_json::to_value(config)?);
    for name in [
        VOCAB_FILE,
        CORPUS_FILE,
        SPD_STUDENT_FILE,
        SPD_REFERENCE_FILE,
        TUPLES_FILE,
        APO_STUDENT_FILE,
        METRICS_FILE,
        METRICS_CSV_FILE,
        DRIFT_REPORT_FILE,
    ] {
        let path = artifact(run_dir, name);
        if path.exists() {
            manifest.record_artifact(name, &path)?;
        }
    }
    manifest.save(artifact(run_dir, MANIFEST_FILE))?;
    Ok(manifest)
}

/// Generate the corpus and vocabulary sidecar into the run directory.
/// Returns the number of records written.
pub fn cmd_generate(config: &PipelineConfig, run_dir: &Path) -> Result<usize> {
    let task = SynthTask::build(config)?;
    let corpus = generate_corpus(&task, config)?;
    io::write_json(&task.vocab, artifact(run_dir, VOCAB_FILE))?;
    io::write_corpus(&corpus, artifact(run_dir, CORPUS_FILE))?;
    update_manifest(run_dir, config)?;
    Ok(corpus.len())
}

fn append_metrics(run_dir: &Path, rows: Vec<MetricRow>) -> Result<()> {
    let path = artifact(run_dir, METRICS_FILE);
    let mut all: Vec<MetricRow> = if path.exists() {
        io::read_json(&path)?
    } else {
        Vec::new()
    };
    all.extend(rows);
    io::write_json(&all, &path)?;
    io::export_metrics(&all, artifact(run_dir, METRICS_CSV_FILE))
}

fn stage_row(config: &PipelineConfig, stage: &str, report: &EvalReport) -> MetricRow {
    let mut row = MetricRow::new();
    row.insert("stage".into(), MetricValue::Text(stage.into()));
    row.insert("seed".into(), MetricValue::Int(config.seed as i64));
    row.insert(
        "macro_accuracy".into(),
        MetricValue::Float(report.macro_accuracy),
    );
    for (g, acc) in report.per_group.iter().enumerate() {
        row.insert(format!("group_{g}"), MetricValue::Float(*acc));
    }
    row
}

fn require_artifact<T: for<'de> Deserialize<'de>>(run_dir: &Path, name: &str) -> Result<T> {
    let path = artifact(run_dir, name);
    if !path.exists() {
        return Err(Error::MissingStageArtifact(format!(
            "{name} (run the producing stage first)"
        )));
    }
    io::read_json(path)
}

/// Run the requested stage subset over the run directory, generating the
/// corpus first if it is absent. Emits one metrics row per stage.
pub fn cmd_pipeline(
    config: &PipelineConfig,
    run_dir: &Path,
    stages: StageSet,
) -> Result<Vec<MetricRow>> {
    let task = SynthTask::build(config)?;
    if !artifact(run_dir, CORPUS_FILE).exists() {
        cmd_generate(config, run_dir)?;
    }
    let corpus = io::read_corpus(artifact(run_dir, CORPUS_FILE))?;
    let mut rows = Vec::new();

    let mut student: Option<StudentPolicy> = None;
    let mut reference: Option<StudentPolicy> = None;

    if stages.spd {
        let out = train_spd(
            StudentPolicy::new(task.vocab.clone(), config.order),
            &corpus,
            config.spd_epochs,
            config.spd_lr,
        )?;
        io::write_json(&out.student, artifact(run_dir, SPD_STUDENT_FILE))?;
        io::write_json(&out.reference, artifact(run_dir, SPD_REFERENCE_FILE))?;
        let report = evaluate(&out.student, &task, config.max_len)?;
        rows.push(stage_row(config, "spd", &report));
        student = Some(out.student);
        reference = Some(out.reference);
    }

    let mut tuples: Option<Vec<PreferenceTuple>> = None;
    if stages.selfdistill {
        let reference = match &reference {
            Some(r) => r.clone(),
            None => require_artifact::<StudentPolicy>(run_dir, SPD_REFERENCE_FILE)?,
        };
        let built = build_preference_tuples(&task, config, &corpus, &reference)?;
        io::write_json(&built, artifact(run_dir, TUPLES_FILE))?;
        let answers: Vec<Option<Token>> = task
            .contexts
            .iter()
            .map(|ctx| {
                built
                    .iter()
                    .find(|t| t.context == *ctx)
                    .and_then(|t| t.positive.first().copied())
            })
            .collect();
        let report = report_from_answers(&task, &answers);
        rows.push(stage_row(config, "selfdistill", &report));
        tuples = Some(built);
    }

    if stages.apo {
        let base = match student.take() {
            Some(s) => s,
            None => require_artifact::<StudentPolicy>(run_dir, SPD_STUDENT_FILE)?,
        };
        let reference = match reference.take() {
            Some(r) => r,
            None => require_artifact::<StudentPolicy>(run_dir, SPD_REFERENCE_FILE)?,
        };
        let tuples = match tuples.take() {
            Some(t) => t,
            None => require_artifact::<Vec<PreferenceTuple>>(run_dir, TUPLES_FILE)?,
        };
        let out = train_apo(base, &reference, &tuples, &config.apo)?;
        io::write_json(&out.policy, artifact(run_dir, APO_STUDENT_FILE))?;
        let report = evaluate(&out.policy, &task, config.max_len)?;
        rows.push(stage_row(config, "apo", &report));
    }

    append_metrics(run_dir, rows.clone())?;
    update_manifest(run_dir, config)?;
    Ok(rows)
}

/// Evaluate a serialized checkpoint against the config's task.
pub fn cmd_eval(config: &PipelineConfig, checkpoint: &Path) -> Result<Vec<MetricRow>> {
    let task = SynthTask::build(config)?;
    let policy: StudentPolicy = io::read_json(checkpoint)?;
    let report = evaluate(&policy, &task, config.max_len)?;
    let stage = checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("checkpoint")
        .to_string();
    Ok(vec![stage_row(config, &stage, &report)])
}

/// Run the windowed drift test over the run directory's corpus at `step`.
pub fn cmd_detect_drift(
    config: &PipelineConfig,
    run_dir: &Path,
    step: i64,
) -> Result<DriftReport> {
    let vocab: Vocab = require_artifact(run_dir, VOCAB_FILE)?;
    let corpus = io::read_corpus(artifact(run_dir, CORPUS_FILE))?;
    let report = detect_drift(
        &corpus,
        step,
        config.drift_window,
        config.drift_alpha,
        config.drift_permutations,
        vocab.size(),
        config.seed,
    )?;
    io::write_json(&report, artifact(run_dir, DRIFT_REPORT_FILE))?;
    update_manifest(run_dir, config)?;
    Ok(report)
}

/// Re-export the accumulated metrics rows to CSV.
pub fn cmd_export(config: &PipelineConfig, run_dir: &Path) -> Result<PathBuf> {
    let rows: Vec<MetricRow> = require_artifact(run_dir, METRICS_FILE)?;
    let path = artifact(run_dir, METRICS_CSV_FILE);
    io::export_metrics(&rows, &path)?;
    update_manifest(run_dir, config)?;
    Ok(path)
}
