use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use harmscope::extraction::BackendKind;
use harmscope::metrics::PairScope;
use harmscope::pipeline::{self, PipelineError, RunConfig, SynthRequest};
use harmscope::rubric::IdentityCategory;
use harmscope::synth::{PlantedValue, RandomSpec, SynthSpec};

#[derive(Parser)]
#[command(
    name = "harmscope",
    version,
    about = "Identity-harm analysis over AI incident reports"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory shared by all stages.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Shared {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Grouping-rule overrides layered on the bundled rules.
    #[arg(long)]
    grouping_rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run structured extraction over a corpus.
    Extract {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_parser = parse_backend)]
        backend: Option<BackendKind>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        max_parallel: Option<usize>,
        /// Exit 0 even when incidents were quarantined.
        #[arg(long)]
        allow_quarantine: bool,
        /// Print the prompt for one incident and exit.
        #[arg(long, value_name = "INCIDENT_ID")]
        dump_prompt: Option<u64>,
    },
    /// Keep only causally relevant markers.
    Filter,
    /// Compute metrics and write tables, plots and run metadata.
    Metrics {
        #[arg(long)]
        grouping_rules: Option<PathBuf>,
        #[arg(long, value_parser = parse_scope)]
        pair_scope: Option<PairScope>,
        #[arg(long)]
        min_support: Option<u64>,
        #[arg(long, conflicts_with = "all_categories")]
        top_categories: Option<usize>,
        /// Keep every category in the pair matrix and edge list.
        #[arg(long)]
        all_categories: bool,
    },
    /// Score the extraction export against gold annotations.
    Validate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Generate a synthetic corpus with known counts.
    Synth(SynthArgs),
    /// Rubric operations.
    Rubric {
        #[command(subcommand)]
        action: RubricAction,
    },
}

#[derive(Subcommand)]
enum RubricAction {
    /// Print the rubric as JSON.
    Export,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Draw unconstrained random extractions instead of planting values.
    #[arg(long)]
    random: bool,
    #[arg(long = "incidents", default_value_t = 100)]
    n_incidents: u64,
    /// First planted value, as CATEGORY=marker.
    #[arg(long, value_parser = parse_planted, default_value = "Nationality=US")]
    value_a: PlantedValue,
    #[arg(long, value_parser = parse_planted, default_value = "PoliticalIdentity=right-wing")]
    value_b: PlantedValue,
    #[arg(long, default_value_t = 10)]
    n_a: u64,
    #[arg(long, default_value_t = 20)]
    n_b: u64,
    #[arg(long, default_value_t = 4)]
    joint: u64,
    /// Add irrelevant markers and duplicate subjects that leave counts unchanged.
    #[arg(long)]
    noise: bool,
    #[arg(long)]
    model: Option<String>,
}

fn parse_backend(raw: &str) -> Result<BackendKind, String> {
    match raw {
        "replay" => Ok(BackendKind::Replay),
        "http" => Ok(BackendKind::Http),
        other => Err(format!("unknown backend {other:?} (expected replay or http)")),
    }
}

fn parse_scope(raw: &str) -> Result<PairScope, String> {
    match raw {
        "incident" => Ok(PairScope::Incident),
        "same-subject" => Ok(PairScope::SameSubject),
        other => Err(format!(
            "unknown pair scope {other:?} (expected incident or same-subject)"
        )),
    }
}

fn parse_planted(raw: &str) -> Result<PlantedValue, String> {
    let (category, marker) = raw.split_once('=').ok_or("expected CATEGORY=marker")?;
    let category = IdentityCategory::parse(category).ok_or_else(|| format!("unknown category {category:?}"))?;
    Ok(PlantedValue::new(category, marker))
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn generated_at() -> String {
    let epoch = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok());
    let time = epoch
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0))
        .unwrap_or_else(chrono::Utc::now);
    time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn apply_shared(config: &mut RunConfig, shared: Shared) {
    if shared.corpus.is_some() {
        config.corpus_path = shared.corpus;
    }
    if shared.grouping_rules.is_some() {
        config.grouping_rules_path = shared.grouping_rules;
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(output) = cli.output {
        config.output_dir = output;
    }
    match cli.command {
        Command::Extract {
            shared,
            backend,
            model,
            endpoint,
            cache_dir,
            max_parallel,
            allow_quarantine,
            dump_prompt,
        } => {
            apply_shared(&mut config, shared);
            let b = &mut config.backend;
            if let Some(kind) = backend {
                b.kind = kind;
            }
            if let Some(model) = model {
                b.model_name = model;
            }
            if endpoint.is_some() {
                b.endpoint_url = endpoint;
            }
            if let Some(dir) = cache_dir {
                b.cache_dir = dir;
            }
            if let Some(n) = max_parallel {
                b.max_parallel = n;
            }
            config.allow_quarantine |= allow_quarantine;
            if let Some(id) = dump_prompt {
                emit(pipeline::dump_prompt(&config, id)?);
                return Ok(());
            }
            let config = config.resolve()?;
            emit(pipeline::cmd_extract(&config)?);
        }
        Command::Filter => {
            emit(pipeline::cmd_filter(&config.resolve()?)?);
        }
        Command::Metrics {
            grouping_rules,
            pair_scope,
            min_support,
            top_categories,
            all_categories,
        } => {
            if grouping_rules.is_some() {
                config.grouping_rules_path = grouping_rules;
            }
            if let Some(scope) = pair_scope {
                config.pair_scope = scope;
            }
            if let Some(n) = min_support {
                config.min_support = n;
            }
            if all_categories {
                config.top_categories = None;
            } else if top_categories.is_some() {
                config.top_categories = top_categories;
            }
            emit(pipeline::cmd_metrics(&config.resolve()?, &generated_at())?);
        }
        Command::Validate { shared, gold } => {
            apply_shared(&mut config, shared);
            let report = pipeline::cmd_validate(&config.resolve()?, &gold)?;
            emit(pipeline::format_validation(&report).trim_end());
        }
        Command::Synth(args) => {
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            if let Some(model) = args.model {
                config.backend.model_name = model;
            }
            let request = if args.random {
                SynthRequest::Random(RandomSpec::default())
            } else {
                SynthRequest::Planted(SynthSpec {
                    seed: config.seed,
                    n_incidents: args.n_incidents,
                    value_a: args.value_a,
                    value_b: args.value_b,
                    n_a: args.n_a,
                    n_b: args.n_b,
                    joint: args.joint,
                    noise: args.noise,
                })
            };
            let summary = pipeline::cmd_synth(&config.resolve()?, &request)?;
            emit(format_args!(
                "incidents: {}, cache entries: {}",
                summary.incidents, summary.cache_entries
            ));
        }
        Command::Rubric {
            action: RubricAction::Export,
        } => emit(pipeline::rubric_export().trim_end()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
