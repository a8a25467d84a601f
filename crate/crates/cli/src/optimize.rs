use std::collections::{BTreeSet, HashSet};
use std::io::{stdin, stdout, BufWriter};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use cultprobe::embedding::{set_mean, EmbeddingStore, EmbeddingVector};
use cultprobe::ontology::OntologyRegistry;
use cultprobe::optimizer::{
    filter_vocab, optimize_all, ExternalEncoder, ObjectiveFeatures, ObjectiveKind,
    OptimizationConfig, OptimizationJob, OptimizationResult, Projection, SlotMode, TextEncoder,
    TokenRow, TokenVocabulary, ToyEncoder, DEFAULT_LEARNING_RATE, DEFAULT_LENGTHS, DEFAULT_STEPS,
};
use cultprobe::par::Execution;
use cultprobe::prompt::TemplateKind;
use serde::{Deserialize, Serialize};

const TOY_TOKEN_DIM: usize = 16;
const TOY_DIM: usize = 64;

#[derive(Args)]
pub struct OptimizeArgs {
    /// `text:<prompt>`, `images:<model>:<concept>:<template>:<lang>` or a JSON objective file.
    #[arg(long)]
    objective: String,
    /// Archive holding image embeddings for an `images:` objective.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Language whose alphabet constrains the gibberish.
    #[arg(long, default_value = "EN")]
    lang: String,
    /// Gibberish length; repeat for several.
    #[arg(short = 'T', long = "length")]
    lengths: Vec<usize>,
    #[arg(long, default_value = "letters")]
    mode: SlotMode,
    #[arg(long, value_enum, default_value = "toy")]
    encoder: EncoderKind,
    /// Shell command that speaks the gradient protocol on stdio.
    #[arg(long)]
    encoder_cmd: Option<String>,
    /// Token vocabulary JSON; defaults to the toy alphabet vocabulary.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_projection, default_value = "euclidean")]
    projection: Projection,
    #[command(flatten)]
    toy: ToyArgs,
    /// Results JSON; printed to stdout when absent.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct ToyArgs {
    /// Output dimension of the toy encoder; defaults to the objective's.
    #[arg(long)]
    toy_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    toy_seed: u64,
}

#[derive(Args)]
pub struct ToyServerArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    toy: ToyArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EncoderKind {
    Toy,
    External,
}

fn parse_projection(s: &str) -> Result<Projection, String> {
    match s {
        "euclidean" => Ok(Projection::Euclidean),
        "cosine" => Ok(Projection::Cosine),
        other => Err(format!("unknown projection `{other}`")),
    }
}

#[derive(Deserialize)]
struct ObjectiveFile {
    kind: ObjectiveKind,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct Outcome<'a> {
    label: &'a str,
    length: usize,
    lang: &'a str,
    gibberish: String,
    cosine: f64,
    #[serde(flatten)]
    result: &'a OptimizationResult,
}

/// Every character of every registry alphabet, in code point order.
fn toy_vocab(reg: &OntologyRegistry) -> Result<TokenVocabulary> {
    let chars: BTreeSet<char> = reg
        .languages()
        .iter()
        .flat_map(|l| l.alphabet_chars())
        .collect();
    let surfaces: Vec<String> = chars.into_iter().map(String::from).collect();
    Ok(TokenVocabulary::toy(&surfaces, TOY_TOKEN_DIM, 0)?)
}

fn load_vocab(path: Option<&Path>, reg: &OntologyRegistry) -> Result<TokenVocabulary> {
    match path {
        Some(p) => TokenVocabulary::from_path(p)
            .with_context(|| format!("reading vocabulary {}", p.display())),
        None => toy_vocab(reg),
    }
}

fn embed_text(
    enc: &mut dyn TextEncoder,
    vocab: &TokenVocabulary,
    prompt: &str,
) -> Result<Vec<f64>> {
    let mut rows = Vec::new();
    let mut missing = BTreeSet::new();
    for c in prompt.chars().filter(|c| !c.is_whitespace()) {
        match vocab.position_of_text(&c.to_string()) {
            Some(i) => rows.push(TokenRow {
                id: vocab.tokens()[i].id,
                values: vocab.row(i),
            }),
            None => {
                missing.insert(c);
            }
        }
    }
    if rows.is_empty() {
        bail!("no character of `{prompt}` is in the vocabulary");
    }
    if !missing.is_empty() {
        eprintln!(
            "ignoring characters outside the vocabulary: {}",
            missing.into_iter().collect::<String>()
        );
    }
    Ok(enc.embed(&rows)?)
}

fn image_objective(spec: &str, archive: Option<&Path>) -> Result<ObjectiveFeatures> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [model, concept, pt, lang] = parts[..] else {
        bail!("expected images:<model>:<concept>:<template>:<lang>");
    };
    let pt: TemplateKind = pt.parse().map_err(|e: String| anyhow!(e))?;
    let dir = archive.context("an images objective needs --archive")?;
    let store = EmbeddingStore::ingest_archive(dir)
        .with_context(|| format!("reading archive {}", dir.display()))?;
    let keys = store.image_set(model, concept, pt, lang);
    if keys.is_empty() {
        bail!("archive has no images for ({model}, {concept}, {pt}, {lang})");
    }
    Ok(ObjectiveFeatures {
        kind: ObjectiveKind::Visual,
        vector: set_mean(&keys, &store)?,
    })
}

fn file_objective(path: &Path) -> Result<ObjectiveFeatures> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading objective {}", path.display()))?;
    let f: ObjectiveFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(ObjectiveFeatures {
        kind: f.kind,
        vector: EmbeddingVector::from_f64(&f.vector)?,
    })
}

fn toy_encoder(toy: &ToyArgs, vocab: &TokenVocabulary, dim: usize) -> Result<ToyEncoder> {
    Ok(ToyEncoder::new(
        vocab.token_dim(),
        toy.toy_dim.unwrap_or(dim),
        toy.toy_seed,
    )?)
}

fn spawn(cmd: &str) -> Result<ExternalEncoder> {
    ExternalEncoder::spawn(Command::new("sh").arg("-c").arg(cmd))
        .with_context(|| format!("starting `{cmd}`"))
}

pub fn run(
    args: &OptimizeArgs,
    reg: &OntologyRegistry,
    dry_run: bool,
    exec: Execution,
) -> Result<()> {
    let started = Instant::now();
    let lang = reg.language(&args.lang)?;
    let vocab = load_vocab(args.vocab.as_deref(), reg)?;
    let alphabet: HashSet<char> = lang.alphabet_chars().into_iter().collect();
    let candidates = filter_vocab(&vocab, &alphabet)?;
    if args.encoder == EncoderKind::External && args.encoder_cmd.is_none() {
        bail!("--encoder external needs --encoder-cmd");
    }

    let objective = if let Some(prompt) = args.objective.strip_prefix("text:") {
        let vector = match args.encoder {
            EncoderKind::Toy => {
                let mut enc = toy_encoder(&args.toy, &vocab, TOY_DIM)?;
                embed_text(&mut enc, &vocab, prompt)?
            }
            EncoderKind::External => {
                let mut enc = spawn(args.encoder_cmd.as_deref().unwrap_or_default())?;
                embed_text(&mut enc, &vocab, prompt)?
            }
        };
        ObjectiveFeatures {
            kind: ObjectiveKind::Textual,
            vector: EmbeddingVector::from_f64(&vector)?,
        }
    } else if let Some(spec) = args.objective.strip_prefix("images:") {
        image_objective(spec, args.archive.as_deref())?
    } else {
        file_objective(Path::new(&args.objective))?
    };
    let dim = objective.vector.dim();

    let lengths = if args.lengths.is_empty() {
        DEFAULT_LENGTHS.to_vec()
    } else {
        args.lengths.clone()
    };
    let jobs: Vec<OptimizationJob> = lengths
        .iter()
        .map(|&length| {
            let mut config = OptimizationConfig::new(length, args.seed);
            config.steps = args.steps;
            config.learning_rate = args.lr;
            config.mode = args.mode;
            config.projection = args.projection;
            config.validate()?;
            Ok(OptimizationJob {
                label: format!("{}_T{length}", args.lang),
                objective: objective.clone(),
                candidates: candidates.clone(),
                config,
            })
        })
        .collect::<Result<_>>()?;
    if dry_run {
        eprintln!("validated {} optimization jobs", jobs.len());
        return Ok(());
    }

    let results = match args.encoder {
        EncoderKind::Toy => optimize_all(
            &jobs,
            &vocab,
            |_| {
                ToyEncoder::new(
                    vocab.token_dim(),
                    args.toy.toy_dim.unwrap_or(dim),
                    args.toy.toy_seed,
                )
            },
            exec,
        ),
        EncoderKind::External => {
            let cmd = args.encoder_cmd.clone().unwrap_or_default();
            optimize_all(
                &jobs,
                &vocab,
                |_| ExternalEncoder::spawn(Command::new("sh").arg("-c").arg(&cmd)),
                exec,
            )
        }
    };

    let mut results_ok = Vec::with_capacity(results.len());
    for (job, r) in jobs.iter().zip(results) {
        results_ok.push(r.with_context(|| format!("optimizing {}", job.label))?);
    }
    let outcomes: Vec<Outcome> = jobs
        .iter()
        .zip(&results_ok)
        .map(|(job, r)| Outcome {
            label: &job.label,
            length: job.config.length,
            lang: &args.lang,
            gibberish: r.gibberish(),
            cosine: r.final_cosine(),
            result: r,
        })
        .collect();
    let json = serde_json::to_string_pretty(&outcomes)? + "\n";
    match &args.output {
        Some(p) => {
            std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?;
            let mut summary = String::new();
            for o in &outcomes {
                summary += &format!("T={}\t{:.4}\t{}\n", o.length, o.cosine, o.gibberish);
            }
            summary += &format!("{}\n", p.display());
            crate::out(&summary)?;
        }
        None => crate::out(&json)?,
    }
    eprintln!(
        "optimized {} lengths ({:.2?})",
        outcomes.len(),
        started.elapsed()
    );
    Ok(())
}

/// Serves the toy encoder over stdio, for exercising external-encoder runs.
pub fn toy_server(args: &ToyServerArgs, reg: &OntologyRegistry) -> Result<()> {
    let vocab = load_vocab(args.vocab.as_deref(), reg)?;
    let mut enc = toy_encoder(&args.toy, &vocab, TOY_DIM)?;
    serve(&mut enc, &vocab)
}

fn serve(enc: &mut dyn TextEncoder, vocab: &TokenVocabulary) -> Result<()> {
    cultprobe::optimizer::serve(enc, vocab, stdin().lock(), BufWriter::new(stdout().lock()))?;
    Ok(())
}
