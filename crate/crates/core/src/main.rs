use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use morphtag::checkpoint;
use morphtag::config::{configs_from_pairs, parse_pairs, to_pairs};
use morphtag::data::{coverage_report, load_corpus, load_embeddings, synthetic, write_tokens, Coverage, PretrainedMode, Tagset, Vocabularies};
use morphtag::encoders::{EncoderKind, PretrainedWords};
use morphtag::evaluation::{error_rate, report_table};
use morphtag::gradcheck::GradCheckOptions;
use morphtag::model::Tagger;
use morphtag::training::{evaluate, fit, gradcheck_model, init_rng, toy_batch, toy_model_config, StopReason};
use morphtag::{Error, Result};

#[derive(Parser)]
#[command(name = "morphtag", version, about = "Character-based neural morphological tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Random seed. Tagging, evaluation and coverage are deterministic and
    /// do not draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger with early stopping on a development set.
    Train(TrainArgs),
    /// Tag raw text (one sentence per line, space-separated tokens).
    Tag(TagArgs),
    /// Report tag error rates of a trained model on a gold corpus.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients on a toy batch.
    Gradcheck(GradcheckArgs),
    /// Share of test tokens by training frequency (0, 1-4, 5+).
    Coverage(CoverageArgs),
    /// Write a synthetic morphological corpus and matching embeddings.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value = "POSMORPH")]
    tagset: String,
    /// lut, dnn, cnn, cnnhighway, lstm or blstm.
    #[arg(long)]
    encoder: Option<String>,
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV (default: <out>/metrics.csv).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    conv_layers: Option<usize>,
    #[arg(long)]
    skip_connections: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Pre-trained word vectors (word2vec text format).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EmbeddingMode::Fixed)]
    embedding_mode: EmbeddingMode,
    /// Extra key=value settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingMode {
    Fixed,
    Finetuned,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input text; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output TSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model; required unless --pred is given.
    #[arg(long, required_unless_present = "pred")]
    model: Option<PathBuf>,
    /// Gold corpus.
    #[arg(long)]
    test: PathBuf,
    /// Must match the tag set the model was trained on.
    #[arg(long)]
    tagset: Option<String>,
    /// Score an existing tagging (`tag` output or a corpus file) instead of
    /// running the model.
    #[arg(long)]
    pred: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One encoder kind, or "all".
    #[arg(long, default_value = "all")]
    encoder: String,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Failure threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    train_sentences: usize,
    /// Dimension of the generated embeddings.
    #[arg(long, default_value_t = 50)]
    embedding_dim: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn train(args: TrainArgs, seed: Option<u64>) -> Result<ExitCode> {
    let mut pairs = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            parse_pairs(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };
    let mut set = |k: &str, v: String| pairs.push((k.to_string(), v));
    set("tagset", args.tagset.clone());
    if let Some(e) = &args.encoder {
        set("encoder", e.clone());
    }
    if let Some(s) = seed {
        set("seed", s.to_string());
    }
    if let Some(n) = args.conv_layers {
        set("conv_layers", n.to_string());
    }
    if args.skip_connections {
        set("skip_connections", "true".into());
    }
    if let Some(n) = args.max_epochs {
        set("max_epochs", n.to_string());
    }
    if args.embeddings.is_some() {
        let mode = match args.embedding_mode {
            EmbeddingMode::Fixed => PretrainedMode::Fixed,
            EmbeddingMode::Finetuned => PretrainedMode::Finetuned,
        };
        set("pretrained", mode.to_string());
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set(k.trim(), v.trim().to_string());
    }
    let (model_cfg, train_cfg) = configs_from_pairs(&pairs)?;

    let train = load_corpus(&args.train, model_cfg.tagset)?;
    let dev = load_corpus(&args.dev, model_cfg.tagset)?;
    let vocab = Vocabularies::build(&train)?;
    let pretrained = match &args.embeddings {
        Some(path) if model_cfg.encoder.pretrained != PretrainedMode::None => {
            let table = load_embeddings(path, model_cfg.encoder.pretrained)?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            Some(PretrainedWords::from(&table))
        }
        _ => None,
    };
    let (tagger, mut params) =
        Tagger::new::<f32>(model_cfg, vocab, pretrained.as_ref(), &mut init_rng(train_cfg.seed))?;
    eprintln!(
        "{} encoder, {} tags, {} parameters, {} training sentences",
        tagger.config.encoder.kind,
        tagger.num_tags(),
        params.num_values(),
        train.len()
    );

    let metrics_path = args.metrics.clone().unwrap_or_else(|| args.out.join("metrics.csv"));
    let mut log = create(&metrics_path)?;
    for (k, v) in to_pairs(&tagger.config, &train_cfg) {
        writeln!(log, "# {k}={v}").map_err(io_err(&metrics_path))?;
    }
    let outcome = fit(&tagger, &mut params, &train, &dev, &train_cfg, &mut log)?;
    log.flush().map_err(io_err(&metrics_path))?;
    checkpoint::save(&args.out, &tagger, &outcome.best, &train_cfg)?;
    match outcome.stop {
        StopReason::Diverged(msg) => {
            eprintln!(
                "error: training diverged ({msg}); last good checkpoint (epoch {}) written to {}",
                outcome.best_epoch.map_or("none".into(), |e| e.to_string()),
                args.out.display()
            );
            Ok(ExitCode::FAILURE)
        }
        stop => {
            eprintln!(
                "stopped ({}) after {} epochs; best dev error {:.2}% at epoch {}",
                if stop == StopReason::Patience { "patience" } else { "max epochs" },
                outcome.metrics.len(),
                outcome.best_dev_error.unwrap_or(f64::NAN),
                outcome.best_epoch.map_or("none".into(), |e| e.to_string()),
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn tag(args: TagArgs) -> Result<ExitCode> {
    let ck = checkpoint::load(&args.model)?;
    let input: Box<dyn BufRead> = match &args.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(io_err(p))?)),
        None => Box::new(BufReader::new(io::stdin())),
    };
    let mut sentences: Vec<Vec<String>> = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io(args.input.clone().unwrap_or_else(|| "<stdin>".into()), e))?;
        let tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    let lowered: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.iter().map(|w| w.to_lowercase()).collect())
        .collect();
    let refs: Vec<&[String]> = lowered.iter().map(|s| s.as_slice()).collect();
    let tags = ck.tagger.tag(&ck.params, &refs, args.batch_size)?;

    let out_path = args.output.clone().unwrap_or_else(|| "<stdout>".into());
    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let mut write = || -> io::Result<()> {
        for (words, tags) in sentences.iter().zip(&tags) {
            for (w, t) in words.iter().zip(tags) {
                writeln!(out, "{w}\t{t}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write().map_err(io_err(&out_path))?;
    Ok(ExitCode::SUCCESS)
}

/// Reads predicted tags from `form<TAB>tag` lines or three-column corpus lines.
fn read_predictions(path: &Path, tagset: Tagset) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        match fields.as_slice() {
            [""] => {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
            [_, tag] => current.push(tag.to_string()),
            [_, pos, morph] => current.push(tagset.project(pos, morph)),
            _ => {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 1,
                    "expected form<TAB>tag or form<TAB>pos<TAB>morph",
                ))
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    Ok(out)
}

fn eval(args: EvalArgs) -> Result<ExitCode> {
    let requested: Option<Tagset> = args.tagset.as_deref().map(str::parse).transpose()?;
    let ck = args.model.as_deref().map(checkpoint::load).transpose()?;
    let tagset = match (&ck, requested) {
        (Some(ck), Some(t)) if ck.tagger.config.tagset != t => {
            return Err(Error::config(format!(
                "model was trained on {}, cannot evaluate {t}",
                ck.tagger.config.tagset
            )))
        }
        (Some(ck), _) => ck.tagger.config.tagset,
        (None, t) => t.unwrap_or(Tagset::PosMorph),
    };
    let test = load_corpus(&args.test, tagset)?;
    let report = match (&args.pred, &ck) {
        (Some(pred), _) => {
            // without a model the gold file defines the inventory
            let inventory = match &ck {
                Some(ck) => ck.tagger.vocab.tags.clone(),
                None => Vocabularies::build(&test)?.tags,
            };
            let ids: Vec<Vec<usize>> = read_predictions(pred, tagset)?
                .iter()
                .map(|s| s.iter().map(|t| inventory.id(t).unwrap_or(inventory.len())).collect())
                .collect();
            let gold: Vec<Vec<String>> = test.iter().map(|s| s.tags.clone()).collect();
            error_rate(tagset, &inventory, &ids, &gold)?
        }
        (None, Some(ck)) => evaluate(&ck.tagger, &ck.params, &test)?,
        (None, None) => unreachable!("clap requires --model or --pred"),
    };
    let (text, csv) = report_table(&[report]);
    print!("{text}\n{csv}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: GradcheckArgs, seed: u64) -> Result<ExitCode> {
    let kinds: Vec<EncoderKind> = if args.encoder.eq_ignore_ascii_case("all") {
        EncoderKind::ALL.to_vec()
    } else {
        vec![args.encoder.parse()?]
    };
    let opts = GradCheckOptions {
        eps: args.eps,
        seed,
        ..GradCheckOptions::default()
    };
    let batch = toy_batch();
    let mut ok = true;
    println!("encoder,skip,max_rel_err,worst_param,checked,status");
    for kind in kinds {
        for skip in [false, true] {
            let r = gradcheck_model(&toy_model_config(kind, skip), &batch, None, &opts)?;
            let pass = r.max_rel_err < args.tolerance;
            ok &= pass;
            println!(
                "{kind},{skip},{:e},{}[{}],{},{}",
                r.max_rel_err,
                r.worst_param,
                r.worst_index,
                r.checked,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn coverage(args: CoverageArgs) -> Result<ExitCode> {
    // the tag set is irrelevant here; POS needs no MORPH column
    let train = load_corpus(&args.train, Tagset::Pos)?;
    let test = load_corpus(&args.test, Tagset::Pos)?;
    let c = coverage_report(&train, &test);
    println!(
        "{} test tokens: {:.1}% unseen, {:.1}% seen 1-4 times, {:.1}% seen 5+ times",
        c.tokens,
        100.0 * c.unseen,
        100.0 * c.rare,
        100.0 * c.frequent
    );
    println!("{}\n{}", Coverage::CSV_HEADER, c.csv_row());
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs, seed: u64) -> Result<ExitCode> {
    let cfg = synthetic::SyntheticConfig {
        train_sentences: args.train_sentences,
        seed,
        ..Default::default()
    };
    let corpus = synthetic::generate(&cfg);
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = args.out.join(format!("{name}.tsv"));
        let mut w = create(&path)?;
        write_tokens(&mut w, split).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
    }
    let all: Vec<&[_]> = corpus
        .train
        .iter()
        .chain(&corpus.dev)
        .chain(&corpus.test)
        .map(|s| s.as_slice())
        .collect();
    let table = synthetic::embeddings(&all, args.embedding_dim, 0.1, seed);
    let path = args.out.join("embeddings.txt");
    let mut w = create(&path)?;
    let mut write = || -> io::Result<()> {
        writeln!(w, "{} {}", table.len(), table.dim())?;
        for word in table.words() {
            let v: Vec<String> = table.vector(word).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{word} {}", v.join(" "))?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;
    eprintln!("wrote train/dev/test.tsv and embeddings.txt to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a, cli.seed),
        Command::Tag(a) => tag(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, cli.seed.unwrap_or(0)),
        Command::Coverage(a) => coverage(a),
        Command::Synth(a) => synth(a, cli.seed.unwrap_or(1)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
