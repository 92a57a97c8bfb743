use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nmt_core::bench::{self, BenchRun};
use nmt_core::engine::{Engine, EngineConfig, ShortlistConfig};
use nmt_core::model::{self, ModelConfig, Vocabulary};
use nmt_core::search::DecodeOptions;
use nmt_core::shortlist::{DEFAULT_K, DEFAULT_K_PRIME};
use nmt_core::{eval, subword};

#[derive(Parser)]
#[command(name = "nmt", version, about = "Beam-search decoder and toolkit for GRU encoder-decoder translation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate text, one sentence per line.
    Translate(TranslateArgs),
    /// Average model checkpoints element-wise into a single model.
    Average(AverageArgs),
    /// Learn BPE merge rules from a text corpus.
    BpeLearn(BpeLearnArgs),
    /// Segment text into subword units.
    BpeApply(BpeApplyArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu(BleuArgs),
    /// Measure throughput, latency, or a beam-size sweep.
    Bench(BenchArgs),
    /// Write a model with seeded random weights.
    InitRandom(InitRandomArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Model file; repeat to decode with an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    trg_vocab: PathBuf,
    /// BPE merge rules applied to the source side.
    #[arg(long)]
    bpe: Option<PathBuf>,
    /// Lexical table with P(target | source) entries: "source target prob".
    #[arg(long, requires = "trg_freq")]
    lex_table: Option<PathBuf>,
    /// Target tokens by descending frequency, one per line.
    #[arg(long, requires = "lex_table")]
    trg_freq: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    shortlist_k: usize,
    #[arg(long, default_value_t = DEFAULT_K_PRIME)]
    shortlist_kprime: usize,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Rank hypotheses by score per token.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 2)]
    max_len_factor: usize,
    #[arg(long, default_value_t = 10)]
    max_len_offset: usize,
    #[arg(long, default_value_t = 1)]
    n_best: usize,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Keep input casing.
    #[arg(long)]
    no_lowercase: bool,
}

impl EngineArgs {
    fn threads(&self) -> usize {
        self.threads.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        })
    }

    fn config(&self) -> EngineConfig {
        EngineConfig {
            models: self.models.clone(),
            src_vocab: self.src_vocab.clone(),
            trg_vocab: self.trg_vocab.clone(),
            bpe: self.bpe.clone(),
            shortlist: self.lex_table.as_ref().zip(self.trg_freq.as_ref()).map(|(l, f)| {
                ShortlistConfig {
                    lex_table: l.clone(),
                    freq_list: f.clone(),
                    k: self.shortlist_k,
                    k_prime: self.shortlist_kprime,
                }
            }),
            decode: DecodeOptions {
                beam_size: self.beam,
                max_len_factor: self.max_len_factor,
                max_len_offset: self.max_len_offset,
                length_normalize: self.normalize,
                n_best: self.n_best,
            },
            threads: self.threads(),
            lowercase: !self.no_lowercase,
        }
    }
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Input file (default: stdin).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Decode sentences one at a time on the calling thread.
    #[arg(long)]
    latency_mode: bool,
}

#[derive(Args)]
struct AverageArgs {
    #[arg(long)]
    output: PathBuf,
    /// Checkpoints to average.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct BpeLearnArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of merge operations.
    #[arg(long, default_value_t = 30_000)]
    merges: usize,
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args)]
struct BpeApplyArgs {
    #[arg(long)]
    bpe: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args)]
struct BleuArgs {
    hypotheses: PathBuf,
    references: PathBuf,
    /// Compare with original casing.
    #[arg(long)]
    case_sensitive: bool,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Benchmark corpus, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the report (JSON) or sweep (CSV); default stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Serial decoding; reports milliseconds per sentence.
    #[arg(long)]
    latency_mode: bool,
    /// Comma-separated beam sizes for a sweep, e.g. 1,3,5,7,9.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// References for the sweep's BLEU column.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Run one untimed pass first.
    #[arg(long)]
    warmup: bool,
    /// Timed runs per configuration; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Args)]
struct InitRandomArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 500)]
    d_emb: usize,
    #[arg(long, default_value_t = 1024)]
    d_h: usize,
    /// Attention width (default: same as --d-h).
    #[arg(long)]
    d_att: Option<usize>,
    /// Source and target vocabulary size, reserved tokens included.
    #[arg(long, default_value_t = 30_000)]
    vocab_size: usize,
    /// Target vocabulary size if different from --vocab-size.
    #[arg(long)]
    trg_vocab_size: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write a matching source vocabulary (tokens s2, s3, ...).
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    /// Also write a matching target vocabulary (tokens t2, t3, ...).
    #[arg(long)]
    trg_vocab: Option<PathBuf>,
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load_engine(args: &EngineArgs) -> Result<Engine> {
    let engine = Engine::load(&args.config())?;
    log::info!("engine loaded in {:.3}s", engine.startup_seconds());
    Ok(engine)
}

fn report_oov(engine: &Engine) {
    let n = engine.oov_count();
    if n > 0 {
        eprintln!("{n} source tokens mapped to <unk>");
    }
}

fn translate(args: TranslateArgs) -> Result<()> {
    let engine = load_engine(&args.engine)?;
    let text = read_input(args.input.as_deref())?;
    let lines: Vec<&str> = text.lines().collect();
    let outputs = if args.latency_mode {
        lines
            .iter()
            .map(|l| engine.translate_line(l))
            .collect::<nmt_core::Result<Vec<_>>>()?
    } else {
        bench::translate_parallel(&engine, &lines, &engine.decode, args.engine.threads())?
    };
    let n_best = args.engine.n_best;
    let rendered: String = outputs
        .iter()
        .enumerate()
        .map(|(i, t)| t.render(i, n_best))
        .collect();
    write_output(args.output.as_deref(), &rendered)?;
    report_oov(&engine);
    Ok(())
}

fn average(args: AverageArgs) -> Result<()> {
    let avg = model::average_checkpoints(&args.inputs)?;
    model::save_model(&avg, &args.output)?;
    eprintln!(
        "averaged {} checkpoints into {}",
        args.inputs.len(),
        args.output.display()
    );
    Ok(())
}

fn bpe_learn(args: BpeLearnArgs) -> Result<()> {
    let text = read_input(args.input.as_deref())?;
    let lines: Vec<String> = text
        .lines()
        .map(|l| subword::preprocess(l, !args.no_lowercase).join(" "))
        .collect();
    let m = subword::bpe_learn(&lines, args.merges);
    if m.len() < args.merges {
        eprintln!("learned {} merges (requested {})", m.len(), args.merges);
    }
    write_output(args.output.as_deref(), &m.to_rules_text())
}

fn bpe_apply(args: BpeApplyArgs) -> Result<()> {
    let m = subword::load_bpe(&args.bpe)?;
    let text = read_input(args.input.as_deref())?;
    let mut out = String::with_capacity(text.len() * 2);
    for line in text.lines() {
        out.push_str(&m.apply(&subword::preprocess(line, !args.no_lowercase)).join(" "));
        out.push('\n');
    }
    write_output(args.output.as_deref(), &out)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(String::from).collect())
}

fn bleu(args: BleuArgs) -> Result<()> {
    let hyps = read_lines(&args.hypotheses)?;
    let refs = read_lines(&args.references)?;
    let r = eval::bleu(&hyps, &refs, !args.case_sensitive)?;
    if args.json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!("{r}");
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let engine = load_engine(&args.engine)?;
    let corpus = read_lines(&args.input)?;
    let threads = args.engine.threads();
    if args.warmup {
        bench::translate_parallel(&engine, &corpus, &engine.decode, threads)?;
    }
    let text = if let Some(beams) = &args.sweep {
        let refs = args.reference.as_deref().map(read_lines).transpose()?;
        let rows = bench::beam_sweep(&engine, &corpus, beams, refs.as_deref(), threads, args.repeats)?;
        bench::sweep_csv(&rows)
    } else {
        let mut best: Option<BenchRun> = None;
        for _ in 0..args.repeats.max(1) {
            let run = if args.latency_mode {
                bench::latency_bench(&engine, &corpus)?
            } else {
                bench::throughput_bench(&engine, &corpus, threads)?
            };
            if best
                .as_ref()
                .is_none_or(|b| run.report.wall_seconds < b.report.wall_seconds)
            {
                best = Some(run);
            }
        }
        let run = best.expect("at least one run");
        format!("{}\n", serde_json::to_string_pretty(&run.report)?)
    };
    write_output(args.output.as_deref(), &text)?;
    report_oov(&engine);
    Ok(())
}

fn init_random(args: InitRandomArgs) -> Result<()> {
    let v_trg = args.trg_vocab_size.unwrap_or(args.vocab_size);
    let cfg = ModelConfig::new(args.vocab_size, v_trg).with_dims(
        args.d_emb,
        args.d_h,
        args.d_att.unwrap_or(args.d_h),
    );
    let m = model::random_model(cfg, args.seed)?;
    model::save_model(&m, &args.output)?;
    for (path, prefix, size) in [
        (&args.src_vocab, "s", cfg.v_src),
        (&args.trg_vocab, "t", cfg.v_trg),
    ] {
        if let Some(p) = path {
            let v = Vocabulary::from_tokens((2..size).map(|i| format!("{prefix}{i}")))?;
            model::save_vocab(&v, p)?;
        }
    }
    eprintln!(
        "wrote {} ({} parameters)",
        args.output.display(),
        m.parameter_count()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Translate(a) => translate(a),
        Command::Average(a) => average(a),
        Command::BpeLearn(a) => bpe_learn(a),
        Command::BpeApply(a) => bpe_apply(a),
        Command::Bleu(a) => bleu(a),
        Command::Bench(a) => bench_cmd(a),
        Command::InitRandom(a) => init_random(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
