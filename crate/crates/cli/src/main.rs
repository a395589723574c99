use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use storyline_core::data::{read_story_records, Corpus, SequenceFeatures, Split, Story, StoryRecord, StoryStyle, Vocabulary, EOS};
use storyline_core::export::{
    calibration_records, generation_record, isa_records, oia_records, to_jsonl, write_jsonl, RepetitionRecord,
};
use storyline_core::history::StoryFrequencyTable;
use storyline_core::metrics::corpus_report;
use storyline_core::model::{generate_story, Ablation, ModelDims, ModelParams};
use storyline_core::training::gradcheck::gradient_check;
use storyline_core::training::{apply_pretrained_embeddings, model_dims, Checkpoint, ToySpec, TrainConfig, TrainState, Trainer};

#[derive(Parser, Debug)]
#[command(name = "storyline", version, about = "Train, decode and inspect visual storytelling models")]
struct Cli {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with training configuration fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Component to disable (no-oia, no-isa, no-direction, no-prior, no-penalty, no-count-norm).
    #[arg(long = "ablate", global = true)]
    ablate: Vec<Ablation>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Computes the story frequency table of the training split.
    Stats(CorpusArgs),
    /// Trains a model and writes checkpoints and per-epoch metrics.
    Train(TrainArgs),
    /// Decodes stories and exports attention maps and calibration scalars.
    Generate(GenerateArgs),
    /// Measures text and sentence repetition of a stories file.
    EvalRep(EvalRepArgs),
    /// Compares analytic gradients with central differences on a random model.
    GradCheck(GradCheckArgs),
    /// Writes a synthetic corpus with its features and vocabulary.
    MakeToy(MakeToyArgs),
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus file with one story record per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary file; built from the training split when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: CorpusArgs,
    /// Pretrained word vectors, one `word v1 .. ve` line per word.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// A single feature file to describe.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    features: Option<PathBuf>,
    /// A corpus whose stories of `--split` are described.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Includes the gate value of every generated word.
    #[arg(long)]
    betas: bool,
}

#[derive(Args, Debug)]
struct EvalRepArgs {
    /// JSON lines with a `sentences` field of strings or token lists.
    #[arg(long)]
    stories: PathBuf,
    /// Name recorded with the report.
    #[arg(long, default_value = "stories")]
    label: String,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 20)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    gamma: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StyleArg {
    Standard,
    Repetitive,
}

#[derive(Args, Debug)]
struct MakeToyArgs {
    #[arg(long, default_value_t = 8)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Requested number of non-reserved words.
    #[arg(long, default_value_t = 46)]
    vocab_size: usize,
    #[arg(long, value_enum, default_value = "standard")]
    style: StyleArg,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Stats(args) => stats(&cli, args),
        Command::Train(args) => train(&cli, args),
        Command::Generate(args) => generate(&cli, args),
        Command::EvalRep(args) => eval_rep(&cli, args),
        Command::GradCheck(args) => grad_check(&cli, args),
        Command::MakeToy(args) => make_toy(&cli, args),
    }
}

/// Configuration file (or `base`) with the global seed and ablation flags applied.
fn resolve_config(cli: &Cli, base: TrainConfig) -> Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => base,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    for &a in &cli.ablate {
        config.ablations = config.ablations.with(a);
    }
    config.validate()?;
    Ok(config)
}

fn load_corpus(args: &CorpusArgs, min_count: usize) -> Result<(Corpus, Vocabulary)> {
    let records = read_story_records(&args.corpus).with_context(|| format!("reading {}", args.corpus.display()))?;
    if records.is_empty() {
        bail!("corpus {} holds no stories", args.corpus.display());
    }
    let vocab = match &args.vocab {
        Some(path) => Vocabulary::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let train: Vec<&Vec<Vec<String>>> = records.iter().filter(|r| r.split == Split::Train).map(|r| &r.sentences).collect();
            Vocabulary::build(&train, min_count).context("building the vocabulary from the training split")?
        }
    };
    let base = args.corpus.parent().map(Path::to_path_buf).unwrap_or_default();
    let corpus = Corpus::from_records(&records, &vocab, &base)?;
    Ok((corpus, vocab))
}

fn frequency_table(corpus: &Corpus, vocab: &Vocabulary) -> Result<StoryFrequencyTable> {
    if corpus.split(Split::Train).next().is_none() {
        bail!("corpus has no training stories");
    }
    Ok(StoryFrequencyTable::from_stories(vocab.len(), corpus.split(Split::Train).map(|e| &e.story))?)
}

fn stats(cli: &Cli, args: &CorpusArgs) -> Result<()> {
    let config = resolve_config(cli, TrainConfig::desk())?;
    let (corpus, vocab) = load_corpus(args, config.min_count)?;
    let table = frequency_table(&corpus, &vocab)?;
    let path = cli.out.join("story_frequency.txt");
    table.save(&path, &vocab)?;
    println!("wrote {} ({} tokens)", path.display(), vocab.len());
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let resumed = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let base = resumed.as_ref().map(|c| c.config.clone()).unwrap_or_else(TrainConfig::desk);
    let mut config = resolve_config(cli, base)?;
    let (corpus, vocab) = load_corpus(&args.data, config.min_count)?;
    let first = &corpus.entries()[0].features;
    config.n = first.n();
    config.k = first.k();
    if !config.fuse_boxes {
        config.d = first.d();
    }
    let table = frequency_table(&corpus, &vocab)?;

    let state = match &resumed {
        Some(ckpt) => {
            ckpt.check_vocab(&vocab)?;
            ckpt.state()?
        }
        None => {
            let mut state = TrainState::new(&config, model_dims(&config, &corpus, vocab.len())?);
            if let Some(path) = &args.embeddings {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let found = apply_pretrained_embeddings(&text, &vocab, &mut state.params.decoder)?;
                println!("initialized {found} word embeddings from {}", path.display());
            }
            state
        }
    };

    vocab.save(&cli.out.join("vocab.txt"))?;
    table.save(&cli.out.join("story_frequency.txt"), &vocab)?;
    fs::write(cli.out.join("config.toml"), config.to_toml_string())?;

    let best_path = cli.out.join("checkpoint.json");
    let last_path = cli.out.join("last.json");
    let mut metrics = String::new();
    let mut trainer = Trainer::resume(config.clone(), &corpus, state)?;
    trainer.run(|record, state| {
        metrics.push_str(&to_jsonl(std::slice::from_ref(record))?);
        let ckpt = Checkpoint::new(&config, &vocab, state, Some(&table));
        if record.improved {
            ckpt.save(&best_path)?;
        }
        ckpt.save(&last_path)
    })?;
    fs::write(cli.out.join("metrics.jsonl"), metrics)?;

    let state = trainer.into_state();
    if !best_path.exists() {
        Checkpoint::new(&config, &vocab, &state, Some(&table)).save(&best_path)?;
    }
    match state.history.last() {
        Some(last) => println!(
            "epoch {}: train loss {:.4}, validation loss {:.4}, learning rate {}",
            last.epoch, last.train_loss, last.val_loss, last.learning_rate
        ),
        None => println!("no epochs run"),
    }
    Ok(())
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let vocab = Vocabulary::load(&args.vocab)?;
    ckpt.check_vocab(&vocab)?;
    let params = ckpt.params()?;
    let table = ckpt.story_frequency();

    let mut config = ckpt.config.clone();
    for &a in &cli.ablate {
        config.ablations = config.ablations.with(a);
    }
    if let Some(width) = args.beam_width {
        config.beam_width = width;
    }
    config.validate()?;
    let settings = config.decode_settings();

    let inputs: Vec<(String, SequenceFeatures)> = match (&args.features, &args.corpus) {
        (Some(path), _) => {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "story".into());
            vec![(id, SequenceFeatures::load(path)?)]
        }
        (None, Some(path)) => {
            let corpus = Corpus::load(path, &vocab)?;
            corpus
                .split(args.split)
                .map(|e| (e.story_id.clone(), (*e.features).clone()))
                .collect()
        }
        (None, None) => bail!("either --features or --corpus is required"),
    };
    if inputs.is_empty() {
        bail!("no stories in the `{}` split", args.split);
    }

    let maps_dir = cli.out.join("maps");
    fs::create_dir_all(&maps_dir)?;
    let mut stories = Vec::with_capacity(inputs.len());
    for (id, features) in &inputs {
        let generated = generate_story(&params, features, &table, &settings, &config.ablations)?;
        let maps_file = format!("maps/{id}.oia.jsonl");
        let isa_file = format!("maps/{id}.isa.jsonl");
        write_jsonl(&cli.out.join(&maps_file), &oia_records(id, &generated))?;
        write_jsonl(&cli.out.join(&isa_file), &isa_records(id, &generated))?;
        stories.push(generation_record(id, &generated, &vocab, &maps_file, &isa_file, args.betas));
    }
    write_jsonl(&cli.out.join("stories.jsonl"), &stories)?;
    write_jsonl(&cli.out.join("calibration.jsonl"), &calibration_records(&params))?;
    for s in &stories {
        println!("{}: {}", s.story_id, s.sentences.join(" | "));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Sentences {
    Text(Vec<String>),
    Tokens(Vec<Vec<String>>),
}

#[derive(Deserialize)]
struct StoryLine {
    sentences: Sentences,
}

/// Token ids assigned in order of first appearance. Repetition only depends
/// on token identity, so no vocabulary file is needed.
fn intern(stories: &[Vec<Vec<String>>]) -> Vec<Vec<Vec<usize>>> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    stories
        .iter()
        .map(|story| {
            story
                .iter()
                .map(|sentence| {
                    sentence
                        .iter()
                        .filter(|t| !matches!(t.as_str(), "<bos>" | "<eos>" | "<pad>"))
                        .map(|t| {
                            let next = ids.len() + EOS + 1;
                            *ids.entry(t.as_str()).or_insert(next)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn eval_rep(cli: &Cli, args: &EvalRepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.stories).with_context(|| format!("reading {}", args.stories.display()))?;
    let mut stories = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: StoryLine = serde_json::from_str(line)
            .with_context(|| format!("{} line {}: expected an object with `sentences`", args.stories.display(), i + 1))?;
        stories.push(match parsed.sentences {
            Sentences::Text(s) => s.iter().map(|s| storyline_core::data::tokenize(s)).collect(),
            Sentences::Tokens(t) => t,
        });
    }
    if stories.is_empty() {
        bail!("{} holds no stories", args.stories.display());
    }
    let report = corpus_report(&intern(&stories));
    let record = RepetitionRecord::new(&args.label, &report);
    write_jsonl(&cli.out.join("repetition.jsonl"), &[record])?;
    println!(
        "{}: text repetition {:.4}, sentence repetition {:.4} over {} stories",
        args.label, report.text_repetition, report.sentence_repetition, report.stories
    );
    Ok(())
}

fn grad_check(cli: &Cli, args: &GradCheckArgs) -> Result<()> {
    let config = resolve_config(cli, TrainConfig::desk())?;
    if args.vocab_size <= EOS + 1 {
        bail!("vocab-size must exceed the {} reserved tokens", EOS + 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = ModelDims { n: args.n, d: args.d, vocab: args.vocab_size, embed: args.d, gamma: args.gamma, box_input: None };
    let params = ModelParams::random(dims, config.ablations.no_direction, &mut rng);
    let regions = ndarray::Array3::from_shape_fn((args.n, args.k, args.d), |_| rng.gen_range(-1.0..1.0));
    let features = SequenceFeatures::new(regions, None)?;
    let sentences = (0..args.n)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            let mut s: Vec<usize> = (0..len).map(|_| rng.gen_range(EOS + 1..args.vocab_size)).collect();
            s.push(EOS);
            s
        })
        .collect();
    let story = Story::new((0..args.n).map(|i| format!("img{i}")).collect(), sentences)?;
    let report = gradient_check(&params, &features, &story, &config.ablations, args.step, args.tolerance)?;
    fs::write(cli.out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
    for t in &report.tensors {
        println!("{:<28} {:>5} coordinates  max relative error {:.3e}", t.name, t.checked, t.max_rel_error);
    }
    if !report.passed() {
        bail!("max relative error {:.3e} exceeds tolerance {:.1e}", report.max_rel_error(), args.tolerance);
    }
    println!("gradient check passed: max relative error {:.3e}", report.max_rel_error());
    Ok(())
}

fn make_toy(cli: &Cli, args: &MakeToyArgs) -> Result<()> {
    let spec = ToySpec {
        seed: cli.seed.unwrap_or(0),
        train_stories: args.train,
        val_stories: args.val,
        test_stories: args.test,
        n: args.n,
        k: args.k,
        dim: args.dim,
        vocab_size: args.vocab_size,
        style: match args.style {
            StyleArg::Standard => StoryStyle::Standard,
            StyleArg::Repetitive => StoryStyle::Repetitive,
        },
    };
    let toy = spec.generate()?;
    toy.write(&cli.out)?;
    let records: &[StoryRecord] = &toy.records;
    println!("wrote {} stories and a {}-token vocabulary to {}", records.len(), toy.vocab.len(), cli.out.display());
    Ok(())
}
