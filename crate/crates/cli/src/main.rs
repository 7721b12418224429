use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use varattn::checkpoint::{write_atomic, Checkpoint};
use varattn::data::{format_tsv, read_tsv, tokenize, Provenance};
use varattn::experiment::{self, ExperimentConfig};
use varattn::gradcheck::{model_grad_check, GradCheckConfig};
use varattn::inference::{self, DecodeOptions, Generation};
use varattn::metrics::MetricsReport;
use varattn::{Error, ModelConfig, ParallelCorpus, SyntheticTaskSpec, Task, TrainConfig, Trainer, Variant, Vocabulary};

#[derive(Parser, Debug)]
#[command(name = "varattn", version, about = "Variational encoder-decoders with variational attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one variant and write a checkpoint plus per-epoch log
    Train(TrainArgs),
    /// Decode sources from a file with a trained checkpoint
    Generate(GenerateArgs),
    /// Score a generations file against references
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every variant's gradients
    Gradcheck(GradcheckArgs),
    /// Compare VED variants on the synthetic one-to-many task
    BypassExperiment(BypassArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelFlags {
    /// Model variant
    #[arg(long, value_parser = parse_variant, default_value = "ved-vattn-hbar")]
    variant: Variant,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    /// Weight of the attention KL term
    #[arg(long)]
    gamma_a: Option<f64>,
    /// Steepness of the logistic KL annealing schedule
    #[arg(long)]
    kl_k: Option<f64>,
    /// Step at which the KL weight reaches 0.5
    #[arg(long)]
    kl_s0: Option<f64>,
    #[arg(long)]
    word_dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-epoch learning-rate multiplier
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum decode length (default: twice the source length plus 5)
    #[arg(long)]
    max_len: Option<usize>,
}

impl ModelFlags {
    fn apply_model(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.embed {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden_dim = v;
        }
        if let Some(v) = self.latent {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.gamma_a {
            cfg.gamma_a = v;
        }
        if let Some(v) = self.kl_k {
            cfg.anneal.steepness = v;
        }
        if let Some(v) = self.kl_s0 {
            cfg.anneal.midpoint = v;
        }
        if let Some(v) = self.word_dropout {
            cfg.word_dropout = v;
        }
        if self.max_len.is_some() {
            cfg.max_decode_len = self.max_len;
        }
    }

    fn apply_train(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lr_decay {
            cfg.lr_decay = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Reverse,
    OneToMany,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Synthetic task to generate (ignored when --corpus is given)
    #[arg(long, value_enum, default_value = "one-to-many")]
    task: TaskArg,
    /// Training corpus, one `source<TAB>target` pair per line
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Content tokens in the synthetic vocabulary
    #[arg(long, default_value_t = 30)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    min_src_len: usize,
    #[arg(long, default_value_t = 8)]
    max_src_len: usize,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    /// Valid targets per source for the one-to-many task
    #[arg(long, default_value_t = 3)]
    templates: usize,
    /// Vocabulary size cap for corpus files, specials included
    #[arg(long, default_value_t = 10_000)]
    max_vocab: usize,
    /// Checkpoint path; the log goes to `<out>.log`
    #[arg(long, short, default_value = "model.ckpt")]
    out: PathBuf,
    /// Also write the training pairs as TSV (with a `.spec` file for synthetic data)
    #[arg(long)]
    save_corpus: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Map,
    Sample,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One source per line; for TSV input the source column is used
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "map")]
    mode: ModeArg,
    /// Samples per source in sample mode
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    generations: PathBuf,
    /// One reference per line; for TSV input the target column is used
    #[arg(long)]
    references: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check a single variant instead of all eight
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Negate this parameter's analytic gradient before comparing
    #[arg(long)]
    inject_fault: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct BypassArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 30)]
    vocab_size: usize,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 3)]
    templates: usize,
    /// Held-out sources used for evaluation
    #[arg(long, default_value_t = 100)]
    heldout: usize,
    /// Samples per held-out source
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Record validation curves every this many epochs (0 disables)
    #[arg(long, default_value_t = 1)]
    curve_every: usize,
    /// Comma-separated attention-KL weights; one report per value
    #[arg(long, value_delimiter = ',')]
    gamma_sweep: Option<Vec<f64>>,
    /// Directory for report and curve files
    #[arg(long, default_value = "bypass-report")]
    out_dir: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

/// Errors that should exit with a usage status rather than a failure.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::BypassExperiment(a) => cmd_bypass(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let (text_pairs, provenance, src_vocab, tgt_vocab) = match &a.corpus {
        Some(path) => {
            let pairs = read_tsv(path)?;
            let srcs: Vec<Vec<String>> = pairs.iter().map(|p| p.0.clone()).collect();
            let tgts: Vec<Vec<String>> = pairs.iter().map(|p| p.1.clone()).collect();
            let sv = Vocabulary::build(&srcs, a.max_vocab)?;
            let tv = Vocabulary::build(&tgts, a.max_vocab)?;
            (pairs, Provenance::File(path.display().to_string()), sv, tv)
        }
        None => {
            let mut spec = match a.task {
                TaskArg::Reverse => SyntheticTaskSpec::reverse(a.vocab_size, a.min_src_len, a.max_src_len, a.pairs, a.model.seed),
                TaskArg::OneToMany => SyntheticTaskSpec::one_to_many(
                    a.vocab_size,
                    a.min_src_len,
                    a.max_src_len,
                    a.pairs,
                    a.templates,
                    a.model.seed,
                ),
            };
            if spec.task == Task::OneToMany && spec.unique_sources == 0 {
                spec.unique_sources = 1;
            }
            let pairs = spec.generate()?;
            let vocab = Vocabulary::from_tokens((0..spec.vocab_size).map(|i| spec.token_name(i)))?;
            (pairs, Provenance::Synthetic(spec), vocab.clone(), vocab)
        }
    };
    if text_pairs.is_empty() {
        bail!("training corpus is empty");
    }
    if let Some(path) = &a.save_corpus {
        write_atomic(path, format_tsv(&text_pairs).as_bytes())?;
        if let Provenance::Synthetic(spec) = &provenance {
            write_atomic(&with_suffix(path, ".spec"), spec.to_kv().as_bytes())?;
        }
    }
    let corpus = ParallelCorpus::from_text(&text_pairs, &src_vocab, &tgt_vocab, provenance)?;

    let mut model_cfg = ModelConfig::new(a.model.variant, src_vocab.len(), tgt_vocab.len());
    model_cfg.seed = a.model.seed;
    a.model.apply_model(&mut model_cfg);
    let mut train_cfg = TrainConfig::default();
    a.model.apply_train(&mut train_cfg);

    let mut trainer = Trainer::new(varattn::Model::new(model_cfg)?, train_cfg.clone())?;
    let mut log = String::new();
    trainer.fit(&corpus.pairs, |_, entry| {
        eprintln!("{entry}");
        log.push_str(&format!("{entry}\n"));
        Ok(true)
    })?;
    let step = trainer.step();
    let ck = Checkpoint {
        model: trainer.into_model(),
        train: train_cfg,
        src_vocab,
        tgt_vocab,
        step,
    };
    ck.save(&a.out)?;
    write_atomic(&with_suffix(&a.out, ".log"), log.as_bytes())?;
    eprintln!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Source or target column of a one-per-line or TSV file.
fn read_column(path: &Path, target: bool) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let field = match line.split_once('\t') {
            Some((s, t)) => {
                if target {
                    t
                } else {
                    s
                }
            }
            None => line,
        };
        out.push(tokenize(field));
    }
    Ok(out)
}

fn format_generations(blocks: &[Vec<Generation>], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        out.push_str(&format!("#source {i}\n"));
        for g in block {
            let tag = g.subseed.map_or_else(|| "map".to_string(), |s| s.to_string());
            out.push_str(&format!("{tag}\t{}\n", vocab.decode(g.content())));
        }
    }
    out
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = &ck.model;
    if a.mode == ModeArg::Sample && !model.variant().is_variational() {
        return Err(UsageError(format!(
            "sampling needs a variational model; {} has no latent variables",
            model.variant()
        ))
        .into());
    }
    let sources: Vec<Vec<usize>> = read_column(&a.input, false)?
        .iter()
        .map(|toks| ck.src_vocab.encode_tokens(toks))
        .collect();
    if sources.iter().any(Vec::is_empty) || sources.is_empty() {
        bail!("input contains no sources");
    }
    let opts = DecodeOptions {
        max_len: a.max_len,
        ..DecodeOptions::default()
    };
    let blocks: Vec<Vec<Generation>> = match a.mode {
        ModeArg::Map => inference::decode_map_batch(model, &sources, opts)?
            .into_iter()
            .map(|tokens| vec![Generation { subseed: None, tokens }])
            .collect(),
        ModeArg::Sample => inference::decode_samples_batch(model, &sources, a.n, a.seed, opts)?,
    };
    write_output(a.out.as_deref(), &format_generations(&blocks, &ck.tgt_vocab))?;
    Ok(ExitCode::SUCCESS)
}

/// Parsed generations file: per-source hypotheses and whether they were sampled.
fn parse_generations(text: &str) -> Result<(Vec<Vec<Vec<String>>>, bool)> {
    let mut blocks: Vec<Vec<Vec<String>>> = Vec::new();
    let mut sampled = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if line.starts_with("#source") {
            blocks.push(Vec::new());
            continue;
        }
        let (tag, hyp) = line.split_once('\t').unwrap_or((line, ""));
        let block = blocks
            .last_mut()
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "generation before any `#source` header".into(),
            })?;
        if tag != "map" {
            tag.parse::<u64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("expected `map` or a subseed, got {tag:?}"),
            })?;
            sampled = true;
        }
        block.push(tokenize(hyp));
    }
    Ok((blocks, sampled))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.generations).map_err(|e| Error::Io {
        path: a.generations.clone(),
        source: e,
    })?;
    let (blocks, sampled) = parse_generations(&text)?;
    let refs = read_column(&a.references, true)?;
    if blocks.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} generation blocks but {} references",
            blocks.len(),
            refs.len()
        ))
        .into());
    }
    let report = MetricsReport::evaluate(&blocks, &refs, sampled)?;
    write_output(a.out.as_deref(), &report.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let cfg = GradCheckConfig {
        tolerance: a.tolerance,
        flip_sign_of: a.inject_fault.clone(),
        ..GradCheckConfig::default()
    };
    let variants = a.variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
    let mut all_ok = true;
    for v in variants {
        let report = model_grad_check(v, &cfg)?;
        for p in &report.params {
            println!(
                "{v} {} max_rel_error={:.3e} {}",
                p.name,
                p.max_rel_error,
                if p.passed { "ok" } else { "FAIL" }
            );
        }
        let status = if report.passed() { "PASS" } else { "FAIL" };
        println!("{v} {status} max_rel_error={:.3e}", report.max_rel_error());
        all_ok &= report.passed();
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_bypass(a: BypassArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::desk(a.model.seed);
    cfg.task = SyntheticTaskSpec {
        vocab_size: a.vocab_size,
        pairs: a.pairs,
        templates_per_source: a.templates,
        unique_sources: (a.pairs / 5).max(1),
        ..cfg.task
    };
    cfg.heldout = a.heldout;
    cfg.samples = a.samples;
    cfg.curve_every = a.curve_every;
    a.model.apply_model(&mut cfg.model);
    a.model.apply_train(&mut cfg.train);
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let reports = match &a.gamma_sweep {
        Some(gammas) => experiment::gamma_sweep(&cfg, gammas)?,
        None => vec![experiment::bypass_experiment(&cfg)?],
    };
    write_atomic(&a.out_dir.join("task.spec"), cfg.task.to_kv().as_bytes())?;
    for r in &reports {
        let stem = match a.gamma_sweep {
            Some(_) => format!("gamma-{}", r.gamma_a),
            None => "bypass".to_string(),
        };
        write_atomic(&a.out_dir.join(format!("{stem}.report")), r.to_string().as_bytes())?;
        write_atomic(&a.out_dir.join(format!("{stem}.curves")), r.curves().as_bytes())?;
        print!("{r}");
    }
    Ok(ExitCode::SUCCESS)
}
