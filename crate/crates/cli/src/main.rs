use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cultprobe::ontology::{NationalityOrder, OntologyRegistry};
use cultprobe::par::Execution;
use cultprobe::pipeline::{run, Metric, RunConfig, RunOptions, RunRecord, RunStatus, Stage};
use cultprobe::prompt::{ModelConfig, TemplateKind};

mod optimize;

#[derive(Parser)]
#[command(
    name = "cultprobe",
    version,
    about = "Cultural evaluation of text-to-image models"
)]
struct Cli {
    /// Registry JSON to use instead of the bundled one.
    #[arg(long, global = true, env = "CULTPROBE_REGISTRY")]
    registry: Option<PathBuf>,
    /// Validate inputs without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run config JSON; flags given here override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct Filter {
    /// Only these image models.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Only these prompt templates.
    #[arg(long = "template")]
    templates: Vec<TemplateKind>,
    /// Only these languages.
    #[arg(long = "language")]
    languages: Vec<String>,
}

#[derive(Args, Clone, Default)]
struct Archives {
    /// Embedding archive directory; repeat for several.
    #[arg(long = "archive")]
    archives: Vec<PathBuf>,
    #[command(flatten)]
    filter: Filter,
}

#[derive(Args, Clone, Default)]
struct Answers {
    /// Answer JSONL file; repeat for several.
    #[arg(long = "answers")]
    answers: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generation manifest for a model.
    Prompts {
        #[command(flatten)]
        common: Common,
        /// Model config JSON.
        #[arg(long)]
        model_config: Option<PathBuf>,
        /// Model id, when no model config is given.
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "language")]
        languages: Vec<String>,
        #[arg(long = "template")]
        templates: Vec<TemplateKind>,
        #[arg(long = "concept")]
        concepts: Vec<String>,
        #[arg(long)]
        images_per_set: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Read and validate archives, answers and annotations.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
        #[command(flatten)]
        answers: Answers,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// National association, confusion matrices and accuracy.
    Na {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
    },
    /// Extrinsic national association from VQA answers.
    Xna {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        answers: Answers,
        /// Which nationalities count as correct.
        #[arg(long)]
        order: Option<NationalityOrder>,
    },
    /// Dimension projection and the culture map.
    Dp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
    },
    /// Extrinsic dimension scores and radar data.
    Xdp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        answers: Answers,
        /// Only this dimension; repeat for several.
        #[arg(long = "dimension")]
        dimensions: Vec<String>,
    },
    /// Cultural distance from the English reference.
    Cd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
    },
    /// Cross-cultural similarity matrices.
    Ccs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
        /// Skip the min-max normalized grids.
        #[arg(long)]
        raw_only: bool,
    },
    /// Conceptual coverage of VQA descriptions.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        archives: Archives,
        /// Report raw per-template means without range normalization.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Fleiss kappa and agreement with automatic labels.
    Humaneval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        auto_labels: Option<PathBuf>,
        /// Require exactly this many labels per item.
        #[arg(long)]
        annotators: Option<usize>,
    },
    /// Search alphabet-constrained gibberish that matches an objective.
    Optimize(optimize::OptimizeArgs),
    /// Run every configured stage and write all reports.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Registry utilities.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Serve the toy encoder over the stdio gradient protocol.
    #[command(hide = true)]
    ToyServer(optimize::ToyServerArgs),
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Print the registry JSON, or write it to a file.
    Export {
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
}

fn base_config(cli: &Cli, common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::new("cultprobe-out"),
    };
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(reg) = &cli.registry {
        cfg.registry = Some(reg.clone());
    }
    Ok(cfg)
}

fn apply_archives(cfg: &mut RunConfig, a: &Archives) {
    if !a.archives.is_empty() {
        cfg.archives = a.archives.clone();
    }
    let f = &a.filter;
    if !f.models.is_empty() {
        cfg.selection.models = f.models.clone();
    }
    if !f.templates.is_empty() {
        cfg.selection.templates = f.templates.clone();
    }
    if !f.languages.is_empty() {
        cfg.selection.languages = f.languages.clone();
    }
}

fn apply_answers(cfg: &mut RunConfig, a: &Answers) {
    if !a.answers.is_empty() {
        cfg.answers = a.answers.clone();
    }
}

fn metric_config(cfg: &mut RunConfig, metric: Metric) {
    cfg.stages = vec![Stage::Reports];
    cfg.metrics = vec![metric];
}

fn load_registry(cli: &Cli) -> Result<OntologyRegistry> {
    match &cli.registry {
        Some(p) => OntologyRegistry::from_path(p)
            .with_context(|| format!("loading registry {}", p.display())),
        None => Ok(OntologyRegistry::bundled()),
    }
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match &cli.command {
        Command::Prompts {
            common,
            model_config,
            model,
            languages,
            templates,
            concepts,
            images_per_set,
            seed,
        } => {
            let mut cfg = base_config(cli, common)?;
            cfg.stages = vec![Stage::Prompts];
            let mut m = match (model_config, model) {
                (Some(p), _) => {
                    ModelConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?
                }
                (None, Some(id)) => ModelConfig::new(id.clone()),
                (None, None) if !cfg.models.is_empty() => return Ok(cfg),
                (None, None) => bail!("give --model or --model-config"),
            };
            if !languages.is_empty() {
                m.languages = languages.clone();
            }
            if !templates.is_empty() {
                m.templates = templates.clone();
            }
            if !concepts.is_empty() {
                m.concepts = concepts.clone();
            }
            if let Some(k) = images_per_set {
                m.images_per_set = *k;
            }
            if let Some(s) = seed {
                m.base_seed = *s;
            }
            cfg.models = vec![m];
            cfg
        }
        Command::Ingest {
            common,
            archives,
            answers,
            annotations,
        } => {
            let mut cfg = base_config(cli, common)?;
            cfg.stages = vec![Stage::Ingest];
            apply_archives(&mut cfg, archives);
            apply_answers(&mut cfg, answers);
            if annotations.is_some() {
                cfg.annotations = annotations.clone();
            }
            cfg
        }
        Command::Na { common, archives }
        | Command::Dp { common, archives }
        | Command::Cd { common, archives } => {
            let metric = match &cli.command {
                Command::Na { .. } => Metric::Na,
                Command::Dp { .. } => Metric::Dp,
                _ => Metric::Cd,
            };
            let mut cfg = base_config(cli, common)?;
            apply_archives(&mut cfg, archives);
            metric_config(&mut cfg, metric);
            cfg
        }
        Command::Ccs {
            common,
            archives,
            raw_only,
        } => {
            let mut cfg = base_config(cli, common)?;
            apply_archives(&mut cfg, archives);
            if *raw_only {
                cfg.normalization.ccs = false;
            }
            metric_config(&mut cfg, Metric::Ccs);
            cfg
        }
        Command::Coverage {
            common,
            archives,
            no_normalize,
        } => {
            let mut cfg = base_config(cli, common)?;
            apply_archives(&mut cfg, archives);
            if *no_normalize {
                cfg.normalization.coverage = false;
            }
            metric_config(&mut cfg, Metric::Coverage);
            cfg
        }
        Command::Xna {
            common,
            answers,
            order,
        } => {
            let mut cfg = base_config(cli, common)?;
            apply_answers(&mut cfg, answers);
            if let Some(o) = order {
                cfg.order = *o;
            }
            metric_config(&mut cfg, Metric::Xna);
            cfg
        }
        Command::Xdp {
            common,
            answers,
            dimensions,
        } => {
            let mut cfg = base_config(cli, common)?;
            apply_answers(&mut cfg, answers);
            if !dimensions.is_empty() {
                cfg.dimensions = dimensions.clone();
            }
            metric_config(&mut cfg, Metric::Xdp);
            cfg
        }
        Command::Humaneval {
            common,
            annotations,
            auto_labels,
            annotators,
        } => {
            let mut cfg = base_config(cli, common)?;
            if annotations.is_some() {
                cfg.annotations = annotations.clone();
            }
            if auto_labels.is_some() {
                cfg.auto_labels = auto_labels.clone();
            }
            if annotators.is_some() {
                cfg.annotators_per_item = *annotators;
            }
            metric_config(&mut cfg, Metric::HumanEval);
            cfg
        }
        Command::Report { common } => {
            let cfg = base_config(cli, common)?;
            if common.config.is_none() {
                bail!("report needs --config");
            }
            cfg
        }
        Command::Optimize(_) | Command::Registry { .. } | Command::ToyServer(_) => {
            unreachable!("not a pipeline command")
        }
    };
    Ok(cfg)
}

/// Writes to stdout, surfacing a closed pipe as an error instead of a panic.
pub(crate) fn out(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn print_record(rec: &RunRecord) -> Result<()> {
    let verb = match rec.status {
        RunStatus::DryRun => "validated",
        _ => "completed",
    };
    let stages: Vec<&str> = rec.stages.iter().map(|s| s.as_str()).collect();
    eprintln!(
        "{verb} stages: {} ({:.2?})",
        stages.join(", "),
        rec.wall_time
    );
    let mut listing = String::new();
    for file in rec.files() {
        listing.push_str(file);
        listing.push('\n');
    }
    out(&listing)?;
    for s in &rec.skipped {
        eprintln!("skipped {}: {}", s.metric, s.reason);
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Registry {
            command: RegistryCommand::Export { output },
        } => {
            let json = load_registry(&cli)?.to_json();
            match output {
                Some(p) if !cli.dry_run => {
                    std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
                }
                Some(_) => {}
                None => out(&json)?,
            }
            Ok(())
        }
        Command::Optimize(args) => {
            optimize::run(args, &load_registry(&cli)?, cli.dry_run, execution(&cli))
        }
        Command::ToyServer(args) => optimize::toy_server(args, &load_registry(&cli)?),
        _ => {
            let cfg = build_config(&cli)?;
            let rec = run(
                &cfg,
                RunOptions {
                    dry_run: cli.dry_run,
                    exec: execution(&cli),
                },
            )?;
            print_record(&rec)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
