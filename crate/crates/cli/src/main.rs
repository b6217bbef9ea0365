//! Command-line front end: train and apply segmentation models, score
//! output, pretrain embeddings, and drive the teacher-student pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use charseg::corpus::{read_raw, write_lines, SegmentedCorpus};
use charseg::encoder::{ModelConfig, Nonlinearity, PretrainedEmbeddings};
use charseg::features::{FeatureConfig, Vocab, PAD_TOKEN, UNK_TOKEN};
use charseg::model::Model;
use charseg::pipeline::{
    build_vocabs, evaluate_prf, segment, split_train_dev, teacher_student, train, EpochRecord,
    Progress, SemiSupSpec, StageStatus, TrainSpec,
};
use charseg::pretrain::{
    average_init_bigrams, bigram_sentences, char_sentences, sgns_train, EmbeddingTable, SgnsConfig,
};
use charseg::tensor::AdamConfig;
use charseg::{Error, Result};

#[derive(Parser)]
#[command(name = "charseg", version, about = "Character sequence segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a segmentation model on a labeled corpus
    Train(TrainCmd),
    /// Segment raw text with a trained model
    Segment(SegmentCmd),
    /// Score predicted segmentation against gold
    Eval(EvalCmd),
    /// Pretrain embeddings with skip-gram negative sampling
    Pretrain(PretrainCmd),
    /// Run the five-stage teacher-student pipeline
    TeacherStudent(TeacherStudentCmd),
    /// Train one model per stack depth and tabulate dev F
    SweepDepth(SweepDepthCmd),
}

#[derive(Args)]
struct ArchArgs {
    /// Number of convolution layers
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Channels per convolution layer
    #[arg(long, default_value_t = 200)]
    channels: usize,
    /// Convolution kernel width (odd)
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Dropout rate in [0, 1)
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sentences per minibatch
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Maximum training epochs
    #[arg(long, default_value_t = 100)]
    epochs: usize,
}

impl LoopArgs {
    fn spec(&self, checkpoint: Option<PathBuf>) -> TrainSpec {
        TrainSpec {
            batch_size: self.batch,
            max_epochs: self.epochs,
            seed: self.seed,
            adam: AdamConfig::default(),
            checkpoint,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BigramMode {
    /// No bigram features
    None,
    /// Bigram features, embeddings initialized by averaging character vectors
    Avg,
    /// Bigram features, embeddings loaded from --bigram-emb
    Pretrained,
}

#[derive(Args)]
struct TrainCmd {
    /// Labeled corpus: one sentence per line, words space-separated
    corpus: PathBuf,
    /// Where to write the trained model
    #[arg(short, long, default_value = "charseg.model")]
    output: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: LoopArgs,
    /// Bigram feature handling
    #[arg(long, value_enum, default_value_t = BigramMode::None)]
    bigram: BigramMode,
    /// Pretrained bigram embedding file (with --bigram pretrained)
    #[arg(long)]
    bigram_emb: Option<PathBuf>,
    /// Pretrained character embedding file
    #[arg(long)]
    char_emb: Option<PathBuf>,
    /// Pretrained word embedding file; enables word features, and its
    /// tokens become the word vocabulary
    #[arg(long)]
    word_emb: Option<PathBuf>,
    /// Character embedding dimension
    #[arg(long, default_value_t = 200)]
    d_char: usize,
    /// Bigram embedding dimension
    #[arg(long, default_value_t = 50)]
    d_bigram: usize,
    /// Word embedding dimension
    #[arg(long, default_value_t = 50)]
    d_word: usize,
}

#[derive(Args)]
struct SegmentCmd {
    /// Trained model file
    model: PathBuf,
    /// Raw text, one sentence per line
    input: PathBuf,
    /// Output file; stdout when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    /// Gold segmented corpus
    gold: PathBuf,
    /// Predicted segmented corpus
    predicted: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PretrainUnit {
    /// One vector per character; input is raw text
    Char,
    /// One vector per adjacent character pair; input is raw text
    Bigram,
    /// One vector per word; input is segmented text
    Word,
}

#[derive(Args)]
struct PretrainCmd {
    /// Corpus file (raw text for char/bigram, segmented for word)
    corpus: PathBuf,
    #[arg(long, value_enum)]
    unit: PretrainUnit,
    /// Where to write the embedding table
    #[arg(short, long, default_value = "vectors.emb")]
    output: PathBuf,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Tokens rarer than this are dropped
    #[arg(long, default_value_t = 5)]
    min_count: u32,
    #[arg(long, default_value_t = 0.025)]
    learning_rate: f64,
    /// Frequent-token subsampling threshold; 0 disables
    #[arg(long, default_value_t = 1e-3)]
    subsample: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TeacherStudentCmd {
    /// Labeled corpus (segmented)
    labeled: PathBuf,
    /// Unlabeled corpus (raw text)
    unlabeled: PathBuf,
    /// Directory for stage artifacts; reused on rerun to resume
    #[arg(long, default_value = "ts-work")]
    workdir: PathBuf,
    /// Also copy the student model here
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: LoopArgs,
    /// Give teacher and student bigram features (trained from scratch)
    #[arg(long)]
    use_bigram: bool,
    /// Words rarer than this in the auto-segmented text fall to UNK
    #[arg(long, default_value_t = 5)]
    word_min_count: u32,
    /// Keep the word vocabulary but skip embedding pretraining
    #[arg(long)]
    no_pretrained_word_emb: bool,
    #[arg(long, default_value_t = 200)]
    d_char: usize,
    #[arg(long, default_value_t = 50)]
    d_bigram: usize,
    #[arg(long, default_value_t = 50)]
    d_word: usize,
}

#[derive(Args)]
struct SweepDepthCmd {
    /// Labeled corpus (segmented)
    corpus: PathBuf,
    /// Depths to try
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5, 7, 11, 15])]
    depths: Vec<usize>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    train: LoopArgs,
    #[arg(long, default_value_t = 200)]
    d_char: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Stage { source, .. } => exit_code_for(source),
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(cmd) => cmd_train(cmd),
        Command::Segment(cmd) => cmd_segment(cmd),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Pretrain(cmd) => cmd_pretrain(cmd),
        Command::TeacherStudent(cmd) => cmd_teacher_student(cmd),
        Command::SweepDepth(cmd) => cmd_sweep_depth(cmd),
    }
}

fn read_corpus(path: &Path) -> Result<SegmentedCorpus> {
    let corpus = SegmentedCorpus::read(path)?;
    if corpus.blank_lines_skipped() > 0 {
        eprintln!(
            "note: skipped {} blank line(s) in {}",
            corpus.blank_lines_skipped(),
            path.display()
        );
    }
    Ok(corpus)
}

fn print_epoch(record: &EpochRecord) {
    println!(
        "epoch {} loss {:.6} dev P={:.4} R={:.4} F={:.4}",
        record.epoch, record.train_loss, record.dev.precision, record.dev.recall, record.dev.f1
    );
}

fn cmd_train(cmd: TrainCmd) -> Result<()> {
    let corpus = read_corpus(&cmd.corpus)?;
    let (train_split, dev_split) = split_train_dev(&corpus)?;

    let features = FeatureConfig {
        use_bigram: cmd.bigram != BigramMode::None,
        use_word: cmd.word_emb.is_some(),
        d_char: cmd.d_char,
        d_bigram: cmd.d_bigram,
        d_word: cmd.d_word,
    };
    let config = ModelConfig {
        features,
        depth: cmd.arch.depth,
        channels: cmd.arch.channels,
        kernel: cmd.arch.kernel,
        dropout: cmd.arch.dropout,
        nonlinearity: Nonlinearity::Glu,
    };

    let char_table = cmd.char_emb.as_deref().map(EmbeddingTable::load).transpose()?;
    let word_table = cmd.word_emb.as_deref().map(EmbeddingTable::load).transpose()?;
    let word_vocab = word_table
        .as_ref()
        .map(|t| {
            let tokens: Vec<&String> = t
                .tokens()
                .iter()
                .filter(|s| s.as_str() != PAD_TOKEN && s.as_str() != UNK_TOKEN)
                .collect();
            Vocab::from_token_list(tokens, 1)
        })
        .transpose()?;

    let vocabs = build_vocabs(&train_split, &features, word_vocab)?;
    let bigram_table = match cmd.bigram {
        BigramMode::None => None,
        BigramMode::Avg => {
            let chars = char_table.as_ref().ok_or_else(|| {
                Error::config("--bigram avg needs --char-emb to average from")
            })?;
            Some(average_init_bigrams(
                chars,
                vocabs.bigrams.as_ref().expect("bigram vocab just built"),
                cmd.d_bigram,
            )?)
        }
        BigramMode::Pretrained => {
            let path = cmd.bigram_emb.as_deref().ok_or_else(|| {
                Error::config("--bigram pretrained needs --bigram-emb FILE")
            })?;
            Some(EmbeddingTable::load(path)?)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cmd.train.seed);
    let model = Model::init(
        config,
        vocabs,
        PretrainedEmbeddings {
            chars: char_table.as_ref(),
            bigrams: bigram_table.as_ref(),
            words: word_table.as_ref(),
        },
        &mut rng,
    )?;

    let spec = cmd.train.spec(Some(cmd.output.clone()));
    let outcome = train(model, &train_split, &dev_split, &spec, print_epoch)?;
    match outcome.best_dev_f {
        Some(f) => println!(
            "best epoch {} dev F={:.4}; model written to {}",
            outcome.best_epoch,
            f,
            cmd.output.display()
        ),
        None => println!(
            "no epochs run; initial model written to {}",
            cmd.output.display()
        ),
    }
    Ok(())
}

fn cmd_segment(cmd: SegmentCmd) -> Result<()> {
    let model = Model::load(&cmd.model)?;
    let lines = read_raw(&cmd.input)?;
    let segmented = segment(&model, &lines)?;
    match &cmd.output {
        Some(path) => write_lines(path, &segmented)?,
        None => {
            for line in &segmented {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn cmd_eval(cmd: EvalCmd) -> Result<()> {
    let gold = read_corpus(&cmd.gold)?;
    let predicted = read_corpus(&cmd.predicted)?;
    let prf = evaluate_prf(&gold, &predicted)?;
    println!(
        "P={:.3} R={:.3} F={:.3} (gold {}, predicted {}, correct {})",
        prf.precision,
        prf.recall,
        prf.f1,
        prf.gold_words,
        prf.predicted_words,
        prf.correct_words
    );
    Ok(())
}

fn cmd_pretrain(cmd: PretrainCmd) -> Result<()> {
    let sentences: Vec<Vec<String>> = match cmd.unit {
        PretrainUnit::Char => char_sentences(&read_raw(&cmd.corpus)?),
        PretrainUnit::Bigram => bigram_sentences(&read_raw(&cmd.corpus)?),
        PretrainUnit::Word => read_corpus(&cmd.corpus)?.sentences().to_vec(),
    };
    let config = SgnsConfig {
        dim: cmd.dim,
        window: cmd.window,
        negatives: cmd.negatives,
        epochs: cmd.epochs,
        learning_rate: cmd.learning_rate,
        min_count: cmd.min_count,
        subsample: cmd.subsample,
    };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cmd.seed);
    let table = sgns_train(&sentences, &config, &mut rng)?;
    table.save(&cmd.output)?;
    println!(
        "{} vectors of dim {} written to {}",
        table.len(),
        table.dim(),
        cmd.output.display()
    );
    Ok(())
}

fn cmd_teacher_student(cmd: TeacherStudentCmd) -> Result<()> {
    let labeled = read_corpus(&cmd.labeled)?;
    let unlabeled = read_raw(&cmd.unlabeled)?;

    let features = FeatureConfig {
        use_bigram: cmd.use_bigram,
        use_word: false,
        d_char: cmd.d_char,
        d_bigram: cmd.d_bigram,
        d_word: cmd.d_word,
    };
    let arch = |features: FeatureConfig| ModelConfig {
        features,
        depth: cmd.arch.depth,
        channels: cmd.arch.channels,
        kernel: cmd.arch.kernel,
        dropout: cmd.arch.dropout,
        nonlinearity: Nonlinearity::Glu,
    };
    let spec = SemiSupSpec {
        teacher_config: arch(features),
        student_config: arch(FeatureConfig {
            use_word: true,
            ..features
        }),
        word_min_count: cmd.word_min_count,
        sgns: SgnsConfig::default(),
        train: cmd.train.spec(None),
        pretrained_word_emb: !cmd.no_pretrained_word_emb,
        workdir: cmd.workdir.clone(),
    };

    let outcome = teacher_student(&labeled, &unlabeled, &spec, |p| match p {
        Progress::Stage { name, status } => {
            let label = match status {
                StageStatus::Computed => "computing",
                StageStatus::Resumed => "resumed from artifact",
                StageStatus::Skipped => "skipped",
            };
            println!("stage {name}: {label}");
        }
        Progress::Epoch { record, .. } => {
            print!("  ");
            print_epoch(record);
        }
    })?;

    let student_path = cmd.workdir.join("student.model");
    if let Some(f) = outcome.teacher_dev_f {
        println!("teacher dev F={f:.4}");
    }
    if let Some(f) = outcome.student_dev_f {
        println!("student dev F={f:.4}");
    }
    if let Some(out) = &cmd.output {
        fs::copy(&student_path, out)?;
        println!("student model copied to {}", out.display());
    } else {
        println!("student model: {}", student_path.display());
    }
    Ok(())
}

fn cmd_sweep_depth(cmd: SweepDepthCmd) -> Result<()> {
    let corpus = read_corpus(&cmd.corpus)?;
    let (train_split, dev_split) = split_train_dev(&corpus)?;
    let features = FeatureConfig {
        use_bigram: false,
        use_word: false,
        d_char: cmd.d_char,
        ..FeatureConfig::default()
    };

    println!("depth\tdev-F\tbest-epoch");
    for &depth in &cmd.depths {
        let config = ModelConfig {
            features,
            depth,
            channels: cmd.arch.channels,
            kernel: cmd.arch.kernel,
            dropout: cmd.arch.dropout,
            nonlinearity: Nonlinearity::Glu,
        };
        let vocabs = build_vocabs(&train_split, &features, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cmd.train.seed);
        let model = Model::init(config, vocabs, PretrainedEmbeddings::default(), &mut rng)?;
        let spec = cmd.train.spec(None);
        let outcome = train(model, &train_split, &dev_split, &spec, |_| {})?;
        println!(
            "{depth}\t{:.4}\t{}",
            outcome.best_dev_f.unwrap_or(0.0),
            outcome.best_epoch
        );
    }
    Ok(())
}
