//! Accuracy and response-length metrics over campaign traces, multi-run
//! aggregation, and report rendering (markdown, CSV, SVG histograms).
//!
//! Attacked accuracy counts attack-failed-exhausted items as correct and
//! both attack-success and not-attacked (baseline-wrong) items as wrong, so
//! original − attacked equals the fraction of successfully attacked items.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{AttackStatus, CampaignTrace};
use crate::error::{Error, Result};

/// The accuracy convention described above. The alternative (re-solving all
/// items post-attack) stays computable from the same traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyConvention {
    #[default]
    AttackFailureCountsCorrect,
}

/// Which records feed the attacked-tokens mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LengthScope {
    /// Only attack-success records, where an adversarial response exists.
    #[default]
    SuccessOnly,
    /// All attacked records; failures fall back to their baseline response
    /// (the attack never changed the effective reply).
    AllAttacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAccuracy {
    pub run_index: u32,
    pub original_pct: f64,
    pub attacked_pct: f64,
    pub decrease_pct: f64,
    pub n_items: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n_items: usize,
    pub per_run: Vec<RunAccuracy>,
    pub original_pct: f64,
    pub attacked_pct: f64,
    pub decrease_pct: f64,
    pub original_std: f64,
    pub attacked_std: f64,
    pub decrease_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean_original_tokens: f64,
    pub mean_attacked_tokens: Option<f64>,
    /// attacked / original, rounded to 2 decimals; absent without any
    /// attacked responses.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioHistogram {
    /// Strictly increasing bin edges; `counts[i]` covers `[edges[i],
    /// edges[i+1])` and the final count pools everything at or above the top
    /// edge.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Items that could not be binned (zero baseline tokens, or a ratio
    /// below the first edge).
    pub excluded: u64,
}

pub const DEFAULT_HISTOGRAM_EDGES: [f64; 10] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0];

/// Arithmetic mean and sample standard deviation (n−1 denominator; 0 for a
/// single value).
pub fn aggregate_runs(per_run_values: &[f64]) -> Result<(f64, f64)> {
    if per_run_values.is_empty() {
        return Err(Error::Metrics("aggregate_runs on empty input".into()));
    }
    let n = per_run_values.len() as f64;
    let mean = per_run_values.iter().sum::<f64>() / n;
    if per_run_values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = per_run_values
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Appendix-style "94.39 (± 0.25)" formatting, 2 decimals.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} (± {std:.2})")
}

fn accuracy_of(trace: &CampaignTrace) -> Result<RunAccuracy> {
    let mut n = 0usize;
    let mut excluded = 0usize;
    let mut original = 0usize;
    let mut attacked_correct = 0usize;
    for r in &trace.records {
        if r.status == AttackStatus::Aborted {
            excluded += 1;
            continue;
        }
        n += 1;
        if r.baseline.as_ref().is_some_and(|b| b.correct) {
            original += 1;
        }
        if r.status == AttackStatus::AttackFailedExhausted {
            attacked_correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metrics(format!(
            "trace {}/{} run {} has no usable records",
            trace.meta.dataset_id, trace.meta.endpoint, trace.meta.run_index
        )));
    }
    let original_pct = 100.0 * original as f64 / n as f64;
    let attacked_pct = 100.0 * attacked_correct as f64 / n as f64;
    Ok(RunAccuracy {
        run_index: trace.meta.run_index,
        original_pct,
        attacked_pct,
        decrease_pct: original_pct - attacked_pct,
        n_items: n,
        excluded,
    })
}

/// Accuracy over one or more runs of the same campaign: per-run percentages
/// plus mean ± sample std across runs.
pub fn accuracy_summary(
    traces: &[&CampaignTrace],
    _convention: AccuracyConvention,
) -> Result<AccuracySummary> {
    if traces.is_empty() {
        return Err(Error::Metrics("accuracy_summary on empty trace list".into()));
    }
    let per_run: Vec<RunAccuracy> = traces
        .iter()
        .map(|t| accuracy_of(t))
        .collect::<Result<_>>()?;
    let (original_pct, original_std) =
        aggregate_runs(&per_run.iter().map(|r| r.original_pct).collect::<Vec<_>>())?;
    let (attacked_pct, attacked_std) =
        aggregate_runs(&per_run.iter().map(|r| r.attacked_pct).collect::<Vec<_>>())?;
    let (decrease_pct, decrease_std) =
        aggregate_runs(&per_run.iter().map(|r| r.decrease_pct).collect::<Vec<_>>())?;
    Ok(AccuracySummary {
        n_items: per_run[0].n_items,
        per_run,
        original_pct,
        attacked_pct,
        decrease_pct,
        original_std,
        attacked_std,
        decrease_std,
    })
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Mean original tokens over all items with a baseline response, mean
/// attacked tokens per `scope`, and their rounded ratio.
pub fn length_summary(traces: &[&CampaignTrace], scope: LengthScope) -> Result<LengthSummary> {
    let mut orig: Vec<f64> = Vec::new();
    let mut attacked: Vec<f64> = Vec::new();
    for trace in traces {
        for r in &trace.records {
            let Some(baseline) = &r.baseline else {
                continue;
            };
            orig.push(baseline.tokens as f64);
            match scope {
                LengthScope::SuccessOnly => {
                    if r.status == AttackStatus::AttackSuccess {
                        if let Some(adv) = &r.adversarial {
                            attacked.push(adv.tokens as f64);
                        }
                    }
                }
                LengthScope::AllAttacked => match (&r.adversarial, r.status) {
                    (Some(adv), AttackStatus::AttackSuccess) => attacked.push(adv.tokens as f64),
                    (_, AttackStatus::AttackFailedExhausted) => {
                        attacked.push(baseline.tokens as f64)
                    }
                    _ => {}
                },
            }
        }
    }
    if orig.is_empty() {
        return Err(Error::Metrics("no baseline token counts in traces".into()));
    }
    let mean_original = orig.iter().sum::<f64>() / orig.len() as f64;
    let mean_attacked = if attacked.is_empty() {
        None
    } else {
        Some(attacked.iter().sum::<f64>() / attacked.len() as f64)
    };
    let ratio = match mean_attacked {
        Some(a) if mean_original > 0.0 => Some(round2(a / mean_original)),
        _ => None,
    };
    Ok(LengthSummary {
        mean_original_tokens: mean_original,
        mean_attacked_tokens: mean_attacked,
        ratio,
    })
}

/// Per-item ratio histogram over attack-success records: ratio = adversarial
/// tokens / baseline tokens, binned left-closed right-open with overflow
/// pooled at the top edge.
pub fn ratio_histogram(trace: &CampaignTrace, edges: &[f64]) -> Result<RatioHistogram> {
    if edges.len() < 2 {
        return Err(Error::Metrics("need at least two histogram edges".into()));
    }
    if edges[0] < 0.0 {
        return Err(Error::Metrics("first edge must be >= 0".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Metrics("edges must be strictly increasing".into()));
    }
    // counts: one per interior bin plus the overflow bin.
    let mut counts = vec![0u64; edges.len()];
    let mut excluded = 0u64;
    for r in &trace.records {
        if r.status != AttackStatus::AttackSuccess {
            continue;
        }
        let (Some(baseline), Some(adv)) = (&r.baseline, &r.adversarial) else {
            continue;
        };
        if baseline.tokens == 0 {
            excluded += 1;
            continue;
        }
        let ratio = adv.tokens as f64 / baseline.tokens as f64;
        if ratio < edges[0] {
            excluded += 1;
            continue;
        }
        let mut bin = edges.len() - 1; // overflow by default
        for i in 0..edges.len() - 1 {
            if ratio >= edges[i] && ratio < edges[i + 1] {
                bin = i;
                break;
            }
        }
        counts[bin] += 1;
    }
    Ok(RatioHistogram {
        edges: edges.to_vec(),
        counts,
        excluded,
    })
}

fn merge_histograms(mut acc: RatioHistogram, other: &RatioHistogram) -> RatioHistogram {
    for (a, b) in acc.counts.iter_mut().zip(&other.counts) {
        *a += b;
    }
    acc.excluded += other.excluded;
    acc
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    MarkdownTable,
    Csv,
    PlotFiles,
}

/// One (model, dataset) group: the per-run rows plus aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub model: String,
    pub dataset: String,
    pub kind: String,
    pub accuracy: AccuracySummary,
    /// Pooled over all runs.
    pub length: LengthSummary,
    /// Per-run length summaries, aligned with `accuracy.per_run`.
    pub per_run_length: Vec<LengthSummary>,
    pub histogram: RatioHistogram,
}

/// Group traces by (endpoint, dataset, kind) and compute all summaries.
/// Groups come out sorted for deterministic reports.
pub fn build_group_reports(
    traces: &[CampaignTrace],
    scope: LengthScope,
    edges: &[f64],
) -> Result<Vec<GroupReport>> {
    let mut groups: BTreeMap<(String, String, String), Vec<&CampaignTrace>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((
                t.meta.endpoint.clone(),
                t.meta.dataset_id.clone(),
                t.meta.kind.clone(),
            ))
            .or_default()
            .push(t);
    }
    let mut out = Vec::new();
    for ((model, dataset, kind), mut group) in groups {
        group.sort_by_key(|t| t.meta.run_index);
        let accuracy = accuracy_summary(&group, AccuracyConvention::default())?;
        let length = length_summary(&group, scope)?;
        let per_run_length = group
            .iter()
            .map(|t| length_summary(std::slice::from_ref(t), scope))
            .collect::<Result<Vec<_>>>()?;
        let histogram = group
            .iter()
            .map(|t| ratio_histogram(t, edges))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(
                RatioHistogram {
                    edges: edges.to_vec(),
                    counts: vec![0; edges.len()],
                    excluded: 0,
                },
                |acc, h| merge_histograms(acc, &h),
            );
        out.push(GroupReport {
            model,
            dataset,
            kind,
            accuracy,
            length,
            per_run_length,
            histogram,
        });
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

fn render_markdown(groups: &[GroupReport]) -> String {
    let mut md = String::new();
    md.push_str("# Robustness report\n\n## Accuracy (%)\n\n");
    md.push_str("| Model | Dataset | Kind | Original | Attack | Decrease |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for g in groups {
        if g.kind == "baseline" {
            md.push_str(&format!(
                "| {} | {} | {} | {} | — | — |\n",
                g.model,
                g.dataset,
                g.kind,
                format_mean_std(g.accuracy.original_pct, g.accuracy.original_std),
            ));
        } else {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                g.model,
                g.dataset,
                g.kind,
                format_mean_std(g.accuracy.original_pct, g.accuracy.original_std),
                format_mean_std(g.accuracy.attacked_pct, g.accuracy.attacked_std),
                format_mean_std(g.accuracy.decrease_pct, g.accuracy.decrease_std),
            ));
        }
    }
    md.push_str("\n## Response length (tokens)\n\n");
    md.push_str("| Model | Dataset | Kind | Original | Attack | Ratio |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for g in groups {
        let attack = g
            .length
            .mean_attacked_tokens
            .map(|v| format!("{v:.1}"))
            .unwrap_or_else(|| "—".into());
        let ratio = g
            .length
            .ratio
            .map(|v| format!("{v:.2} ×"))
            .unwrap_or_else(|| "—".into());
        md.push_str(&format!(
            "| {} | {} | {} | {:.1} | {} | {} |\n",
            g.model, g.dataset, g.kind, g.length.mean_original_tokens, attack, ratio
        ));
    }
    md.push('\n');
    md
}

fn render_csv(groups: &[GroupReport]) -> String {
    let mut csv = String::from(
        "model,dataset,run,original_pct,attacked_pct,decrease_pct,mean_orig_tokens,mean_attack_tokens,ratio\n",
    );
    for g in groups {
        for (run, len) in g.accuracy.per_run.iter().zip(&g.per_run_length) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                g.model,
                g.dataset,
                run.run_index,
                run.original_pct,
                run.attacked_pct,
                run.decrease_pct,
                len.mean_original_tokens,
                fmt_opt(len.mean_attacked_tokens),
                fmt_opt(len.ratio),
            ));
        }
    }
    csv
}

/// Minimal deterministic SVG bar chart for one ratio histogram.
fn render_histogram_svg(g: &GroupReport) -> String {
    let h = &g.histogram;
    let width = 640.0;
    let height = 360.0;
    let margin = 50.0;
    let n = h.counts.len();
    let max_count = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (width - 2.0 * margin) / n as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{} / {}: response-length ratio distribution</text>\n",
        width / 2.0,
        xml_escape(&g.model),
        xml_escape(&g.dataset)
    ));
    for (i, &count) in h.counts.iter().enumerate() {
        let bar_h = (count as f64 / max_count) * (height - 2.0 * margin);
        let x = margin + i as f64 * bar_w;
        let y = height - margin - bar_h;
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4878a8\" stroke=\"white\"/>\n",
            x,
            y,
            bar_w,
            bar_h
        ));
        let label = if i + 1 < h.edges.len() {
            format!("[{},{})", trim_float(h.edges[i]), trim_float(h.edges[i + 1]))
        } else {
            format!("≥{}", trim_float(h.edges[i]))
        };
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{label}</text>\n",
            x + bar_w / 2.0,
            height - margin + 14.0
        ));
        if count > 0 {
            svg.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{count}</text>\n",
                x + bar_w / 2.0,
                y - 4.0
            ));
        }
    }
    svg.push_str(&format!(
        "<line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        height - margin,
        width - margin,
        height - margin
    ));
    svg.push_str("</svg>\n");
    svg
}

fn trim_float(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

/// Write the requested artifact files into `out_dir` with deterministic
/// names and contents; returns the paths written.
pub fn render_report(
    groups: &[GroupReport],
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Metrics(format!("cannot create report dir {}: {e}", out_dir.display()))
    })?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::MarkdownTable => {
                let path = out_dir.join("report.md");
                std::fs::write(&path, render_markdown(groups))?;
                written.push(path);
            }
            ReportFormat::Csv => {
                let path = out_dir.join("report.csv");
                std::fs::write(&path, render_csv(groups))?;
                written.push(path);
            }
            ReportFormat::PlotFiles => {
                for g in groups {
                    if g.kind == "baseline" {
                        continue;
                    }
                    let path = out_dir.join(format!(
                        "hist_{}_{}.svg",
                        sanitize(&g.model),
                        sanitize(&g.dataset)
                    ));
                    std::fs::write(&path, render_histogram_svg(g))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}
