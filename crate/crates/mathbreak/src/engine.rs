//! The per-question attack loop, campaign runner, and transferability
//! evaluation.
//!
//! For each question: solve the original; if the baseline answer is wrong the
//! item is not attacked. Otherwise walk the attackable word positions left to
//! right, build the candidate set for each, and try candidates in priority
//! order — local replacement for embedding candidates, global for dictionary
//! and masked-LM ones. A reply that no longer matches the gold answer is a
//! preliminary success; the judge model confirms it before the loop stops.
//!
//! Traces are line-delimited records persisted in item order as they
//! complete, with a sidecar metadata file, so interrupted campaigns resume
//! without duplicates and downstream metrics work from files alone.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::candidates::{
    build_candidate_set, CandidateParams, EmbeddingSpace, MaskFill, WordNet,
};
use crate::corpus::{answers_match, normalize_answer, CanonicalAnswer, QuestionItem, TaskKind};
use crate::error::{Error, Result};
use crate::gateway::{extract_final_answer, Gateway, GatewayMaskFill, ModelEndpoint};
use crate::perturb::{apply_global, apply_local, tokenize_words, PerturbedQuestion};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Default prompt for the secondary evaluation stage. Placeholders:
/// `{question}`, `{gold}`, `{response}`.
pub const DEFAULT_JUDGE_PROMPT: &str = "You are grading a model's answer to a math problem.\n\
Question: {question}\n\
Reference answer: {gold}\n\
Model response: {response}\n\
Is the model's final answer incorrect? Reply YES or NO.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStatus {
    /// Baseline answer was wrong or unextractable; no attack mounted.
    NotAttacked,
    /// A perturbation flipped the answer and survived the judge stage.
    AttackSuccess,
    /// Every candidate at every attackable position failed.
    AttackFailedExhausted,
    /// Record from a baseline-only campaign; no attack was attempted.
    BaselineOnly,
    /// Unrecoverable gateway error; see `abort_cause`.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub response_text: String,
    /// Canonical answer value, when one could be extracted.
    pub answer: Option<String>,
    pub correct: bool,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub perturbed: PerturbedQuestion,
    pub response_text: String,
    pub answer: Option<String>,
    pub tokens: u64,
}

/// Per-question outcome. Records carry the original question and gold answer
/// so traces are self-contained for transfer evaluation and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub schema_version: u32,
    pub item_id: String,
    pub run_index: u32,
    pub question: String,
    pub gold_answer: String,
    pub status: AttackStatus,
    pub baseline: Option<BaselineResult>,
    pub adversarial: Option<AdversarialResult>,
    /// Target-model queries issued for this item (baseline + candidates).
    pub queries_used: u64,
    pub judge_verdict: Option<bool>,
    pub abort_cause: Option<String>,
}

/// Sidecar metadata for one trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    /// "baseline", "attack", or "transfer".
    pub kind: String,
    pub dataset_id: String,
    pub endpoint: String,
    pub run_index: u32,
    /// Snapshot of the configuration the run was started with.
    pub config: serde_json::Value,
}

/// An ordered collection of records plus run metadata; the unit of
/// persistence and metric computation.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignTrace {
    pub meta: TraceMeta,
    pub records: Vec<AttackRecord>,
}

/// Which answer the first-stage check compares the perturbed reply against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PreliminaryComparison {
    /// The dataset gold answer (default).
    #[default]
    Gold,
    /// The model's own unperturbed answer.
    BaselineResponse,
}

#[derive(Debug, Clone)]
pub struct AttackSettings {
    pub temperature: f64,
    /// Base seed; each run uses `seed + run_index` so runs stay distinct in
    /// the cache while remaining replayable.
    pub seed: Option<u64>,
    pub candidate_params: CandidateParams,
    pub comparison: PreliminaryComparison,
    pub use_judge: bool,
    pub judge_prompt: Option<String>,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            seed: None,
            candidate_params: CandidateParams::default(),
            comparison: PreliminaryComparison::Gold,
            use_judge: true,
            judge_prompt: None,
        }
    }
}

/// Everything the attack loop needs, shared across worker threads. Baseline
/// campaigns run without the candidate-source assets.
pub struct AttackContext<'a> {
    pub gateway: &'a Gateway,
    pub target: &'a ModelEndpoint,
    pub judge: Option<&'a ModelEndpoint>,
    pub masked: Option<&'a ModelEndpoint>,
    pub space: Option<&'a EmbeddingSpace>,
    pub lexicon: Option<&'a WordNet>,
    pub settings: AttackSettings,
}

struct NoMaskFill;

impl MaskFill for NoMaskFill {
    fn mask_token(&self) -> String {
        crate::gateway::DEFAULT_MASK_TOKEN.to_string()
    }
    fn fill_mask(&self, _masked_text: &str) -> Result<Vec<(String, f64)>> {
        Ok(Vec::new())
    }
}

pub fn effective_seed(base: Option<u64>, run_index: u32) -> Option<u64> {
    Some(base.unwrap_or(0).wrapping_add(u64::from(run_index)))
}

/// First-stage check: the attack preliminarily succeeds when the model's
/// answer does NOT match the reference. An unextractable model answer counts
/// as success (the answer changed).
pub fn preliminary_check(
    model_answer: Option<&CanonicalAnswer>,
    reference: &CanonicalAnswer,
) -> bool {
    match model_answer {
        Some(a) => !answers_match(a, reference),
        None => true,
    }
}

/// Last standalone YES/NO token of a verdict, case-insensitive.
fn parse_verdict(text: &str) -> Option<bool> {
    let mut verdict = None;
    for raw in text.split_whitespace() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if word.eq_ignore_ascii_case("yes") {
            verdict = Some(true);
        } else if word.eq_ignore_ascii_case("no") {
            verdict = Some(false);
        }
    }
    verdict
}

/// Second-stage check: ask the judge whether the target's final answer is
/// incorrect. An unparseable verdict is retried once (with a shifted seed so
/// the cache does not pin the same reply), then conservatively treated as
/// "not confirmed".
pub fn judge_confirm(
    gateway: &Gateway,
    judge: &ModelEndpoint,
    question: &str,
    model_response: &str,
    gold: &CanonicalAnswer,
    template: Option<&str>,
    seed: Option<u64>,
) -> Result<bool> {
    let prompt = template
        .unwrap_or(DEFAULT_JUDGE_PROMPT)
        .replace("{question}", question)
        .replace("{gold}", &gold.value)
        .replace("{response}", model_response);
    let first = gateway.complete(judge, &prompt, 0.0, seed)?;
    if let Some(v) = parse_verdict(&first.text) {
        return Ok(v);
    }
    let retry_seed = seed.map(|s| s.wrapping_add(1_000_003));
    let second = gateway.complete(judge, &prompt, 0.0, retry_seed)?;
    Ok(parse_verdict(&second.text).unwrap_or(false))
}

fn base_record(item: &QuestionItem, run_index: u32) -> AttackRecord {
    AttackRecord {
        schema_version: TRACE_SCHEMA_VERSION,
        item_id: item.id.clone(),
        run_index,
        question: item.question.clone(),
        gold_answer: item.gold_answer_raw.clone(),
        status: AttackStatus::Aborted,
        baseline: None,
        adversarial: None,
        queries_used: 0,
        judge_verdict: None,
        abort_cause: None,
    }
}

/// Solve the original question once and report correctness against gold.
pub fn solve_baseline(
    gateway: &Gateway,
    target: &ModelEndpoint,
    item: &QuestionItem,
    temperature: f64,
    seed: Option<u64>,
) -> Result<(BaselineResult, Option<CanonicalAnswer>)> {
    let gold = normalize_answer(&item.gold_answer_raw, item.task_kind)?;
    let response = gateway.complete(target, &item.question, temperature, seed)?;
    let answer = extract_final_answer(&response.text, item.task_kind).ok();
    let correct = answer.as_ref().is_some_and(|a| answers_match(a, &gold));
    Ok((
        BaselineResult {
            response_text: response.text,
            answer: answer.as_ref().map(|a| a.value.clone()),
            correct,
            tokens: response.completion_tokens,
        },
        answer,
    ))
}

/// Execute the attack loop for one question. Gateway failures abort the
/// record rather than propagating, so campaigns always persist an outcome.
pub fn attack_question(ctx: &AttackContext, item: &QuestionItem, run_index: u32) -> AttackRecord {
    let mut record = base_record(item, run_index);
    let seed = effective_seed(ctx.settings.seed, run_index);

    let gold = match normalize_answer(&item.gold_answer_raw, item.task_kind) {
        Ok(g) => g,
        Err(e) => {
            record.abort_cause = Some(format!("gold answer unparseable: {e}"));
            return record;
        }
    };

    let (baseline, baseline_answer) =
        match solve_baseline(ctx.gateway, ctx.target, item, ctx.settings.temperature, seed) {
            Ok(b) => b,
            Err(e) => {
                record.queries_used = 1;
                record.abort_cause = Some(format!("baseline query failed: {e}"));
                return record;
            }
        };
    record.queries_used = 1;
    let baseline_correct = baseline.correct;
    record.baseline = Some(baseline);

    if !baseline_correct {
        record.status = AttackStatus::NotAttacked;
        return record;
    }

    let reference = match ctx.settings.comparison {
        PreliminaryComparison::Gold => gold.clone(),
        PreliminaryComparison::BaselineResponse => baseline_answer
            .clone()
            .expect("correct baseline has an answer"),
    };

    let (Some(space), Some(lexicon)) = (ctx.space, ctx.lexicon) else {
        record.abort_cause =
            Some("attack requires an embedding space and a WordNet lexicon".into());
        return record;
    };

    let no_mask = NoMaskFill;
    let gateway_mask;
    let mask_fill: &dyn MaskFill = match ctx.masked {
        Some(endpoint) => {
            gateway_mask = GatewayMaskFill {
                gateway: ctx.gateway,
                endpoint,
            };
            &gateway_mask
        }
        None => &no_mask,
    };

    let spans = tokenize_words(&item.question);
    for span in spans.iter().filter(|s| s.attackable) {
        let set = match build_candidate_set(
            space,
            lexicon,
            mask_fill,
            &item.question,
            span.index,
            &ctx.settings.candidate_params,
        ) {
            Ok(set) => set,
            Err(e) => {
                record.abort_cause = Some(format!(
                    "candidate generation failed at position {}: {e}",
                    span.index
                ));
                return record;
            }
        };

        for candidate in &set.candidates {
            let applied = match candidate.replacement_strategy {
                crate::perturb::ReplacementStrategy::Local => {
                    apply_local(&item.question, span, &candidate.word)
                }
                crate::perturb::ReplacementStrategy::Global => {
                    apply_global(&item.question, &span.surface, &candidate.word)
                }
            };
            let mut perturbed = match applied {
                Ok(p) => p,
                Err(_) => continue,
            };
            perturbed.item_id = item.id.clone();
            perturbed.source = Some(candidate.source);

            let response = match ctx.gateway.complete(
                ctx.target,
                &perturbed.text,
                ctx.settings.temperature,
                seed,
            ) {
                Ok(r) => r,
                Err(e) => {
                    record.queries_used += 1;
                    record.abort_cause = Some(format!("target query failed: {e}"));
                    return record;
                }
            };
            record.queries_used += 1;

            let model_answer = extract_final_answer(&response.text, item.task_kind).ok();
            if !preliminary_check(model_answer.as_ref(), &reference) {
                continue;
            }

            let confirmed = if ctx.settings.use_judge {
                let Some(judge) = ctx.judge else {
                    record.abort_cause =
                        Some("judge required but no judge endpoint configured".into());
                    return record;
                };
                match judge_confirm(
                    ctx.gateway,
                    judge,
                    &perturbed.text,
                    &response.text,
                    &gold,
                    ctx.settings.judge_prompt.as_deref(),
                    seed,
                ) {
                    Ok(v) => {
                        record.judge_verdict = Some(v);
                        v
                    }
                    Err(e) => {
                        record.abort_cause = Some(format!("judge query failed: {e}"));
                        return record;
                    }
                }
            } else {
                true
            };

            if confirmed {
                record.status = AttackStatus::AttackSuccess;
                record.adversarial = Some(AdversarialResult {
                    perturbed,
                    response_text: response.text,
                    answer: model_answer.map(|a| a.value),
                    tokens: response.completion_tokens,
                });
                return record;
            }
        }
    }

    record.status = AttackStatus::AttackFailedExhausted;
    record.judge_verdict = None;
    record
}

/// Baseline-only record: one solve, no perturbation.
pub fn baseline_question(
    gateway: &Gateway,
    target: &ModelEndpoint,
    item: &QuestionItem,
    temperature: f64,
    base_seed: Option<u64>,
    run_index: u32,
) -> AttackRecord {
    let mut record = base_record(item, run_index);
    let seed = effective_seed(base_seed, run_index);
    match solve_baseline(gateway, target, item, temperature, seed) {
        Ok((baseline, _)) => {
            record.queries_used = 1;
            record.baseline = Some(baseline);
            record.status = AttackStatus::BaselineOnly;
        }
        Err(e) => {
            record.queries_used = 1;
            record.abort_cause = Some(format!("baseline query failed: {e}"));
        }
    }
    record
}

// ---------------------------------------------------------------------------
// Trace persistence
// ---------------------------------------------------------------------------

fn sanitize_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// `dataset.endpoint.runN.jsonl` under `out_dir`.
pub fn trace_path(out_dir: &Path, dataset_id: &str, endpoint: &str, run_index: u32) -> PathBuf {
    out_dir.join(format!(
        "{}.{}.run{run_index}.jsonl",
        sanitize_stem(dataset_id),
        sanitize_stem(endpoint)
    ))
}

pub fn meta_path(trace: &Path) -> PathBuf {
    trace.with_extension("meta.json")
}

pub fn audit_path_for(trace: &Path) -> PathBuf {
    trace.with_extension("audit.jsonl")
}

/// Read a trace file plus its sidecar metadata.
pub fn read_trace(path: &Path) -> Result<CampaignTrace> {
    let meta_text = std::fs::read_to_string(meta_path(path))
        .map_err(|e| Error::Trace(format!("missing sidecar for {}: {e}", path.display())))?;
    let meta: TraceMeta = serde_json::from_str(&meta_text)?;
    let mut records = Vec::new();
    let text = std::fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AttackRecord = serde_json::from_str(line)
            .map_err(|e| Error::Trace(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(CampaignTrace { meta, records })
}

/// All trace files in a directory (skipping sidecars and audit logs),
/// sorted by file name for determinism.
pub fn trace_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".jsonl") && !name.ends_with(".audit.jsonl") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Writes records strictly in item order regardless of worker completion
/// order, so a trace file is always an in-order prefix: resume is "count
/// lines, continue from there" and replayed campaigns are byte-identical.
struct OrderedTraceWriter {
    state: Mutex<WriterState>,
}

struct WriterState {
    next: usize,
    pending: BTreeMap<usize, AttackRecord>,
    out: BufWriter<File>,
}

impl OrderedTraceWriter {
    fn new(file: File, next: usize) -> Self {
        Self {
            state: Mutex::new(WriterState {
                next,
                pending: BTreeMap::new(),
                out: BufWriter::new(file),
            }),
        }
    }

    fn submit(&self, index: usize, record: AttackRecord) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        state.pending.insert(index, record);
        while let Some(record) = {
            let key = state.next;
            state.pending.remove(&key)
        } {
            serde_json::to_writer(&mut state.out, &record)?;
            state.out.write_all(b"\n")?;
            state.out.flush()?;
            state.next += 1;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CampaignKind {
    Baseline,
    Attack,
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub runs: u32,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub dataset_id: String,
    pub kind: CampaignKind,
    pub config_snapshot: serde_json::Value,
}

/// Run `runs` independent campaigns over `items`, persisting each record as
/// it completes and resuming from any existing partial trace. Items are
/// processed by `workers` threads; within one item the candidate loop stays
/// strictly sequential to preserve early-stop semantics.
pub fn run_campaign(
    ctx: &AttackContext,
    items: &[QuestionItem],
    opts: &CampaignOptions,
) -> Result<Vec<CampaignTrace>> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let mut traces = Vec::new();
    for run_index in 0..opts.runs {
        let path = trace_path(&opts.out_dir, &opts.dataset_id, &ctx.target.name, run_index);
        let meta = TraceMeta {
            schema_version: TRACE_SCHEMA_VERSION,
            kind: match opts.kind {
                CampaignKind::Baseline => "baseline".into(),
                CampaignKind::Attack => "attack".into(),
            },
            dataset_id: opts.dataset_id.clone(),
            endpoint: ctx.target.name.clone(),
            run_index,
            config: opts.config_snapshot.clone(),
        };
        std::fs::write(meta_path(&path), serde_json::to_string_pretty(&meta)?)?;

        // Resume: the file is an in-order prefix of the item list.
        let done = if path.exists() {
            let existing = std::fs::read_to_string(&path)?;
            let mut count = 0usize;
            for line in existing.lines().filter(|l| !l.trim().is_empty()) {
                let record: AttackRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Trace(format!("{}: {e}", path.display())))?;
                let expected = items.get(count).map(|i| i.id.as_str());
                if expected != Some(record.item_id.as_str()) {
                    return Err(Error::Trace(format!(
                        "{}: record {count} is for item {:?}, dataset has {:?}",
                        path.display(),
                        record.item_id,
                        expected
                    )));
                }
                count += 1;
            }
            count
        } else {
            0
        };

        if done < items.len() {
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            let writer = OrderedTraceWriter::new(file, done);
            let next_item = AtomicUsize::new(done);
            let write_error: Mutex<Option<Error>> = Mutex::new(None);

            std::thread::scope(|scope| {
                for _ in 0..opts.workers.max(1) {
                    scope.spawn(|| loop {
                        let i = next_item.fetch_add(1, Ordering::SeqCst);
                        if i >= items.len() {
                            break;
                        }
                        let record = match opts.kind {
                            CampaignKind::Attack => attack_question(ctx, &items[i], run_index),
                            CampaignKind::Baseline => baseline_question(
                                ctx.gateway,
                                ctx.target,
                                &items[i],
                                ctx.settings.temperature,
                                ctx.settings.seed,
                                run_index,
                            ),
                        };
                        if let Err(e) = writer.submit(i, record) {
                            *write_error.lock().unwrap() = Some(e);
                            break;
                        }
                    });
                }
            });
            if let Some(e) = write_error.into_inner().unwrap() {
                return Err(e);
            }
        }

        traces.push(read_trace(&path)?);
    }
    Ok(traces)
}

// ---------------------------------------------------------------------------
// Transferability evaluation
// ---------------------------------------------------------------------------

/// One adversarial sample lifted from a prior campaign's trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSample {
    pub item_id: String,
    pub question: String,
    pub gold_answer_raw: String,
    pub task_kind: TaskKind,
    pub perturbed: PerturbedQuestion,
}

/// Extract the judge-confirmed adversarial samples from attack traces.
pub fn load_transfer_samples(
    paths: &[PathBuf],
    task_kind: TaskKind,
) -> Result<Vec<TransferSample>> {
    let mut samples = Vec::new();
    for path in paths {
        let trace = read_trace(path)?;
        for record in trace.records {
            if record.status != AttackStatus::AttackSuccess {
                continue;
            }
            let Some(adv) = record.adversarial else {
                continue;
            };
            samples.push(TransferSample {
                item_id: record.item_id,
                question: record.question,
                gold_answer_raw: record.gold_answer,
                task_kind,
                perturbed: adv.perturbed,
            });
        }
    }
    Ok(samples)
}

pub struct TransferContext<'a> {
    pub gateway: &'a Gateway,
    pub target: &'a ModelEndpoint,
    pub judge: Option<&'a ModelEndpoint>,
    pub settings: AttackSettings,
}

/// Re-solve each original and each perturbed question on a new target; no
/// perturbation search is performed. Both outcomes are recorded: baseline
/// correctness feeds the Original column, and the perturbed outcome maps to
/// attack-success (wrong, judge-confirmed) or attack-failed-exhausted
/// (still correct).
pub fn transfer_eval(
    ctx: &TransferContext,
    samples: &[TransferSample],
    out_dir: &Path,
    dataset_id: &str,
    config_snapshot: serde_json::Value,
) -> Result<CampaignTrace> {
    std::fs::create_dir_all(out_dir)?;
    let run_index = 0;
    let path = trace_path(out_dir, dataset_id, &ctx.target.name, run_index);
    let meta = TraceMeta {
        schema_version: TRACE_SCHEMA_VERSION,
        kind: "transfer".into(),
        dataset_id: dataset_id.to_string(),
        endpoint: ctx.target.name.clone(),
        run_index,
        config: config_snapshot,
    };
    std::fs::write(meta_path(&path), serde_json::to_string_pretty(&meta)?)?;

    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&path)?;
    let mut out = BufWriter::new(file);
    let seed = effective_seed(ctx.settings.seed, run_index);

    for sample in samples {
        let item = QuestionItem {
            id: sample.item_id.clone(),
            question: sample.question.clone(),
            gold_answer_raw: sample.gold_answer_raw.clone(),
            task_kind: sample.task_kind,
        };
        let mut record = base_record(&item, run_index);

        let gold = match normalize_answer(&item.gold_answer_raw, item.task_kind) {
            Ok(g) => g,
            Err(e) => {
                record.abort_cause = Some(format!("gold answer unparseable: {e}"));
                write_record(&mut out, &record)?;
                continue;
            }
        };
        match solve_baseline(ctx.gateway, ctx.target, &item, ctx.settings.temperature, seed) {
            Ok((baseline, _)) => {
                record.queries_used = 1;
                record.baseline = Some(baseline);
            }
            Err(e) => {
                record.queries_used = 1;
                record.abort_cause = Some(format!("baseline query failed: {e}"));
                write_record(&mut out, &record)?;
                continue;
            }
        }

        let response = match ctx.gateway.complete(
            ctx.target,
            &sample.perturbed.text,
            ctx.settings.temperature,
            seed,
        ) {
            Ok(r) => r,
            Err(e) => {
                record.queries_used += 1;
                record.abort_cause = Some(format!("perturbed query failed: {e}"));
                write_record(&mut out, &record)?;
                continue;
            }
        };
        record.queries_used += 1;

        let model_answer = extract_final_answer(&response.text, item.task_kind).ok();
        let preliminary = preliminary_check(model_answer.as_ref(), &gold);
        let confirmed = if !preliminary {
            false
        } else if ctx.settings.use_judge {
            let Some(judge) = ctx.judge else {
                record.abort_cause = Some("judge required but not configured".into());
                write_record(&mut out, &record)?;
                continue;
            };
            match judge_confirm(
                ctx.gateway,
                judge,
                &sample.perturbed.text,
                &response.text,
                &gold,
                ctx.settings.judge_prompt.as_deref(),
                seed,
            ) {
                Ok(v) => {
                    record.judge_verdict = Some(v);
                    v
                }
                Err(e) => {
                    record.abort_cause = Some(format!("judge query failed: {e}"));
                    write_record(&mut out, &record)?;
                    continue;
                }
            }
        } else {
            true
        };

        record.adversarial = Some(AdversarialResult {
            perturbed: sample.perturbed.clone(),
            response_text: response.text,
            answer: model_answer.map(|a| a.value),
            tokens: response.completion_tokens,
        });
        record.status = if confirmed {
            AttackStatus::AttackSuccess
        } else {
            AttackStatus::AttackFailedExhausted
        };
        write_record(&mut out, &record)?;
    }
    out.flush()?;
    drop(out);

    read_trace(&path)
}

fn write_record(out: &mut BufWriter<File>, record: &AttackRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
