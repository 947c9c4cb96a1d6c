//! Command-line entry points binding config, datasets, and endpoints to the
//! attack engine and metrics.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 partial failure (aborted
//! records in a campaign), 3 transport exhaustion.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mathbreak::candidates::{EmbeddingSpace, WordNet};
use mathbreak::config::HarnessConfig;
use mathbreak::corpus::load_dataset;
use mathbreak::engine::{
    load_transfer_samples, run_campaign, trace_files_in, transfer_eval, AttackContext,
    AttackSettings, AttackStatus, CampaignKind, CampaignOptions, CampaignTrace, TransferContext,
};
use mathbreak::error::Error;
use mathbreak::gateway::{Gateway, GatewayOptions};
use mathbreak::metrics::{build_group_reports, render_report, ReportFormat};

#[derive(Parser)]
#[command(
    name = "mathbreak",
    about = "Single-word perturbation robustness harness for math-reasoning LLMs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every dataset item without perturbation; write baseline traces.
    Baseline(RunArgs),
    /// Run the word-substitution attack campaign against the target(s).
    Attack(RunArgs),
    /// Re-evaluate adversarial samples from prior traces on a new target.
    Transfer(TransferArgs),
    /// Render accuracy/length tables and histograms from trace files.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Harness configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Serve all model calls from the cache; never touch the network.
    #[arg(long)]
    replay: bool,
    /// Skip the judge stage; attack success is the preliminary check alone.
    #[arg(long)]
    no_judge: bool,
    /// Override the configured number of independent runs.
    #[arg(long)]
    runs: Option<u32>,
    /// Override the configured base sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Only run against this named target endpoint (default: all).
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trace file(s) holding the adversarial samples to transfer.
    #[arg(long, required = true, num_args = 1..)]
    samples: Vec<PathBuf>,
    /// Named target endpoint to evaluate on (default: first configured).
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replay: bool,
    #[arg(long)]
    no_judge: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of trace files.
    #[arg(long)]
    traces: PathBuf,
    /// Output directory (default: the trace directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated formats: markdown, csv, plots (default: all three).
    #[arg(long, value_delimiter = ',')]
    format: Vec<String>,
    /// Optional config supplying histogram edges and length-mean scope.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap routes --help/--version through the error path; those are
            // not usage errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Baseline(args) => cmd_campaign(args, CampaignKind::Baseline),
        Command::Attack(args) => cmd_campaign(args, CampaignKind::Attack),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn apply_overrides(config: &mut HarnessConfig, args: &RunArgs) {
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    if args.replay {
        config.replay = true;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
}

fn settings_from(config: &HarnessConfig, no_judge: bool) -> AttackSettings {
    AttackSettings {
        temperature: config.temperature,
        seed: config.seed,
        candidate_params: config.thresholds.candidate_params(),
        comparison: config.preliminary_comparison,
        use_judge: !no_judge,
        judge_prompt: config.judge_prompt.clone(),
    }
}

/// 0 clean, 2 when any record aborted, 3 when an abort came from transport
/// exhaustion (retries or a replay miss).
fn campaign_exit_code(traces: &[CampaignTrace]) -> ExitCode {
    let mut aborted = false;
    let mut exhausted = false;
    for trace in traces {
        for r in &trace.records {
            if r.status == AttackStatus::Aborted {
                aborted = true;
                let cause = r.abort_cause.as_deref().unwrap_or("");
                if cause.contains("retries exhausted") || cause.contains("replay miss") {
                    exhausted = true;
                }
            }
        }
    }
    if exhausted {
        ExitCode::from(3)
    } else if aborted {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn print_run_summaries(traces: &[CampaignTrace]) {
    for trace in traces {
        let mut success = 0u32;
        let mut exhausted = 0u32;
        let mut not_attacked = 0u32;
        let mut baseline_only = 0u32;
        let mut baseline_correct = 0u32;
        let mut aborted = 0u32;
        let mut queries = 0u64;
        for r in &trace.records {
            queries += r.queries_used;
            if r.baseline.as_ref().is_some_and(|b| b.correct) {
                baseline_correct += 1;
            }
            match r.status {
                AttackStatus::AttackSuccess => success += 1,
                AttackStatus::AttackFailedExhausted => exhausted += 1,
                AttackStatus::NotAttacked => not_attacked += 1,
                AttackStatus::BaselineOnly => baseline_only += 1,
                AttackStatus::Aborted => aborted += 1,
            }
        }
        let n = trace.records.len();
        match trace.meta.kind.as_str() {
            "baseline" => println!(
                "[{} run {}] {} items: {} correct ({:.2}%), {} aborted",
                trace.meta.endpoint,
                trace.meta.run_index,
                n,
                baseline_correct,
                if n > 0 {
                    100.0 * f64::from(baseline_correct) / n as f64
                } else {
                    0.0
                },
                aborted
            ),
            _ => println!(
                "[{} run {}] {} items: {} attacked ok, {} exhausted, {} not attacked, \
                 {} baseline-only, {} aborted, {} target queries",
                trace.meta.endpoint,
                trace.meta.run_index,
                n,
                success,
                exhausted,
                not_attacked,
                baseline_only,
                aborted,
                queries
            ),
        }
    }
}

fn sanitize(s: &str) -> String {
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

fn cmd_campaign(args: RunArgs, kind: CampaignKind) -> Result<ExitCode, Error> {
    let mut config = HarnessConfig::load(&args.config)?;
    apply_overrides(&mut config, &args);
    match kind {
        CampaignKind::Attack => config.validate_for_attack(!args.no_judge)?,
        CampaignKind::Baseline => config.validate()?,
    }

    let items = load_dataset(&config.dataset.path, config.dataset.task_kind)?;
    let dataset_id = config.dataset.id();
    let settings = settings_from(&config, args.no_judge);

    let (space, lexicon) = match kind {
        CampaignKind::Attack => {
            let space = EmbeddingSpace::load(config.embedding.as_ref().expect("validated"))?;
            let lexicon = WordNet::load(config.wordnet.as_ref().expect("validated"))?;
            (Some(space), Some(lexicon))
        }
        CampaignKind::Baseline => (None, None),
    };

    let targets: Vec<&mathbreak::gateway::ModelEndpoint> = match &args.target {
        Some(name) => vec![config.find_target(Some(name))?],
        None => config.target_endpoints.iter().collect(),
    };

    let mut all_traces = Vec::new();
    for target in targets {
        std::fs::create_dir_all(&config.output_dir)?;
        let gateway = Gateway::new(GatewayOptions {
            cache_dir: config.cache_dir.clone(),
            audit_path: Some(config.output_dir.join(format!(
                "{}.{}.audit.jsonl",
                sanitize(&dataset_id),
                sanitize(&target.name)
            ))),
            replay: config.replay,
            mask_top_n: Some(config.thresholds.mlm_top_n),
        })?;
        let ctx = AttackContext {
            gateway: &gateway,
            target,
            judge: config.judge_endpoint.as_ref(),
            masked: config.masked_endpoint.as_ref(),
            space: space.as_ref(),
            lexicon: lexicon.as_ref(),
            settings: settings.clone(),
        };
        let opts = CampaignOptions {
            runs: config.runs,
            workers: config.workers,
            out_dir: config.output_dir.clone(),
            dataset_id: dataset_id.clone(),
            kind,
            config_snapshot: config.snapshot(),
        };
        let traces = run_campaign(&ctx, &items, &opts)?;
        print_run_summaries(&traces);
        all_traces.extend(traces);
    }
    Ok(campaign_exit_code(&all_traces))
}

fn cmd_transfer(args: TransferArgs) -> Result<ExitCode, Error> {
    let mut config = HarnessConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if args.replay {
        config.replay = true;
    }
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    config.validate()?;
    if !args.no_judge && config.judge_endpoint.is_none() {
        return Err(Error::Config(
            "transfer requires \"judge_endpoint\" (or pass --no-judge)".into(),
        ));
    }
    for path in &args.samples {
        if !path.exists() {
            return Err(Error::Config(format!(
                "samples file {} does not exist",
                path.display()
            )));
        }
    }

    let samples = load_transfer_samples(&args.samples, config.dataset.task_kind)?;
    let target = config.find_target(args.target.as_deref())?;
    let dataset_id = format!("{}-transfer", config.dataset.id());

    std::fs::create_dir_all(&config.output_dir)?;
    let gateway = Gateway::new(GatewayOptions {
        cache_dir: config.cache_dir.clone(),
        audit_path: Some(config.output_dir.join(format!(
            "{}.{}.audit.jsonl",
            sanitize(&dataset_id),
            sanitize(&target.name)
        ))),
        replay: config.replay,
        mask_top_n: Some(config.thresholds.mlm_top_n),
    })?;
    let ctx = TransferContext {
        gateway: &gateway,
        target,
        judge: config.judge_endpoint.as_ref(),
        settings: settings_from(&config, args.no_judge),
    };
    let trace = transfer_eval(
        &ctx,
        &samples,
        &config.output_dir,
        &dataset_id,
        config.snapshot(),
    )?;
    println!("{} samples transferred to {}", samples.len(), target.name);
    print_run_summaries(std::slice::from_ref(&trace));
    Ok(campaign_exit_code(std::slice::from_ref(&trace)))
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, Error> {
    let (edges, scope) = match &args.config {
        Some(path) => {
            let config = HarnessConfig::load(path)?;
            (config.histogram_edges.clone(), config.length_mean_scope)
        }
        None => (
            mathbreak::metrics::DEFAULT_HISTOGRAM_EDGES.to_vec(),
            Default::default(),
        ),
    };
    let formats: Vec<ReportFormat> = if args.format.is_empty() {
        vec![
            ReportFormat::MarkdownTable,
            ReportFormat::Csv,
            ReportFormat::PlotFiles,
        ]
    } else {
        args.format
            .iter()
            .map(|f| match f.as_str() {
                "markdown" => Ok(ReportFormat::MarkdownTable),
                "csv" => Ok(ReportFormat::Csv),
                "plots" => Ok(ReportFormat::PlotFiles),
                other => Err(Error::Config(format!(
                    "unknown format {other:?} (expected markdown, csv, or plots)"
                ))),
            })
            .collect::<Result<_, _>>()?
    };

    let paths = trace_files_in(&args.traces)?;
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no trace files found in {}",
            args.traces.display()
        )));
    }
    let traces = paths
        .iter()
        .map(|p| mathbreak::engine::read_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let groups = build_group_reports(&traces, scope, &edges)?;
    let out_dir = args.out.unwrap_or_else(|| args.traces.clone());
    let written = render_report(&groups, &out_dir, &formats)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
