use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ehrtok_core::compute::{param_counts, token_stats, DEFAULT_BACKBONE_PARAMS, DEFAULT_HIDDEN};
use ehrtok_core::events::{read_dataset_dir, split_patients, write_dataset_dir, Dataset};
use ehrtok_core::packer::pack;
use ehrtok_core::reproduce::{reproduce, ReproId};
use ehrtok_core::stats::{factorial_report, read_auroc_csv, Formula};
use ehrtok_core::synth::{generate_cohort, SynthConfig};
use ehrtok_core::tokenizer::{tokenize_timeline, TokenizedSequence, TokenizerConfig};
use ehrtok_core::transfer::oov_report;
use ehrtok_core::vocab::{build_vocab, load_vocab, save_vocab, Vocabulary};
use ehrtok_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ehrtok", version, about = "Clinical event tokenization and experiment accounting")]
struct Cli {
    /// Root seed; every random stream is derived from it by labeled hashing.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort as patients.jsonl and events.jsonl.
    GenSynth {
        #[arg(long, default_value_t = 100)]
        patients: usize,
        /// Mean number of clinical actions per patient.
        #[arg(long)]
        mean_events: Option<f64>,
        /// JSON file with a full generator configuration; flags override it.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into training and validation patients.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        val_out: PathBuf,
    },
    /// Build a vocabulary for one condition from a training dataset.
    BuildVocab {
        /// Condition file (tokenizer settings, optional dataset path).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; overrides the condition file.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize a dataset into JSONL sequences.
    Tokenize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack tokenized sequences into fixed-budget batches.
    Pack {
        #[arg(long, default_value_t = 32_768)]
        budget: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter counts and 6ND training FLOPs.
    Flops {
        #[arg(long)]
        vocab_size: u64,
        #[arg(long)]
        tokens_seen: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_BACKBONE_PARAMS)]
        backbone: u64,
        #[arg(long, default_value_t = DEFAULT_HIDDEN)]
        hidden: u64,
    },
    /// Total and per-patient token counts without context truncation.
    TokenStats {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Out-of-vocabulary rates of a target dataset under a source vocabulary.
    Oov {
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the mixed model to an AUROC table. JSON goes to stdout, the
    /// effect table to stderr.
    Lmm {
        #[arg(long, value_enum, default_value_t = FormulaArg::Main)]
        formula: FormulaArg,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Rerun a reference table from vendored fixtures and check it.
    Reproduce {
        #[arg(value_parser = parse_repro_id)]
        target: ReproId,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulaArg {
    Main,
    Shots,
}

fn parse_repro_id(s: &str) -> Result<ReproId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Tokenizer settings plus optional input paths. Relative paths resolve
/// against the file's directory.
#[derive(Debug, Serialize, Deserialize)]
struct ConditionFile {
    #[serde(flatten)]
    tokenizer: TokenizerConfig,
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(default)]
    vocab: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Core(Error),
    Io(PathBuf, io::Error),
    ChecksFailed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidArgument(_)) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::ChecksFailed => 3,
            CliError::Core(_) | CliError::Io(..) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::ChecksFailed => f.write_str("one or more reproduction checks failed"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(())
}

fn load_condition(path: &Path) -> CliResult<ConditionFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut cond: ConditionFile = serde_json::from_str(&text).map_err(Error::from)?;
    cond.tokenizer.validate()?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cond.dataset, &mut cond.vocab].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cond)
}

fn pick(flag: Option<PathBuf>, file: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("no {what} given on the command line or in the condition file")))
}

fn load_inputs(
    config: &Path,
    input: Option<PathBuf>,
    vocab: Option<PathBuf>,
) -> CliResult<(TokenizerConfig, Dataset, Vocabulary)> {
    let cond = load_condition(config)?;
    let data_dir = pick(input, cond.dataset, "dataset")?;
    let vocab_path = pick(vocab, cond.vocab, "vocabulary")?;
    let vocab = load_vocab(&vocab_path, Some(cond.tokenizer.event_encoding))?;
    vocab.check_compatible(&cond.tokenizer)?;
    let dataset = read_dataset_dir(&data_dir)?;
    Ok((cond.tokenizer, dataset, vocab))
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be > 0".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed;

    match cli.command {
        Command::GenSynth {
            patients,
            mean_events,
            synth_config,
            out,
        } => {
            let mut cfg = match synth_config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
                    serde_json::from_str(&text).map_err(Error::from)?
                }
                None => SynthConfig::default(),
            };
            cfg.seed = seed;
            cfg.n_patients = patients;
            if let Some(m) = mean_events {
                cfg.mean_events_per_patient = m;
            }
            let ds = generate_cohort(&cfg)?;
            write_dataset_dir(&ds, &out)?;
            log::info!("wrote {} patients, {} events to {}", ds.len(), ds.event_count(), out.display());
        }
        Command::Split {
            input,
            train_fraction,
            train_out,
            val_out,
        } => {
            let ds = read_dataset_dir(&input)?;
            let ids: Vec<&str> = ds.patient_ids().collect();
            let (train, val) = split_patients(&ids, train_fraction, seed)?;
            write_dataset_dir(&ds.subset(train.iter().map(String::as_str)), &train_out)?;
            write_dataset_dir(&ds.subset(val.iter().map(String::as_str)), &val_out)?;
            print_json(&serde_json::json!({ "train": train.len(), "validation": val.len() }))?;
        }
        Command::BuildVocab { config, input, out } => {
            let cond = load_condition(&config)?;
            let data_dir = pick(input, cond.dataset, "dataset")?;
            let ds = read_dataset_dir(&data_dir)?;
            let vocab = build_vocab(&ds, &cond.tokenizer)?;
            save_vocab(&vocab, &out)?;
            print_json(&serde_json::json!({
                "mode": vocab.mode(),
                "vocab_size": vocab.len(),
                "binned_concepts": vocab.bins().len(),
            }))?;
        }
        Command::Tokenize {
            config,
            vocab,
            input,
            out,
        } => {
            let (cfg, ds, vocab) = load_inputs(&config, input, vocab)?;
            let timelines: Vec<_> = ds.timelines().collect();
            let seqs = timelines
                .par_iter()
                .map(|tl| tokenize_timeline(tl, &cfg, &vocab))
                .collect::<Result<Vec<_>, _>>()?;
            let mut w = create(&out)?;
            for s in &seqs {
                serde_json::to_writer(&mut w, s).map_err(Error::from)?;
                w.write_all(b"\n").map_err(io_err(&out))?;
            }
            w.flush().map_err(io_err(&out))?;
        }
        Command::Pack { budget, input, out } => {
            let reader = BufReader::new(File::open(&input).map_err(io_err(&input))?);
            let mut read_error: Option<CliError> = None;
            let source = input.display().to_string();
            let seqs = reader.lines().enumerate().map_while(|(i, line)| {
                let parsed = line.map_err(io_err(&input)).and_then(|l| {
                    if l.trim().is_empty() {
                        return Ok(None);
                    }
                    serde_json::from_str::<TokenizedSequence>(&l).map(Some).map_err(|e| {
                        CliError::Core(Error::Parse {
                            source_name: source.clone(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    })
                });
                match parsed {
                    Ok(s) => Some(s),
                    Err(e) => {
                        read_error = Some(e);
                        None
                    }
                }
            });
            let packer = pack(seqs.flatten(), budget)?;
            let mut w = create(&out)?;
            let mut n_batches = 0usize;
            let mut n_tokens = 0usize;
            for batch in packer {
                let batch = batch?;
                n_batches += 1;
                n_tokens += batch.len();
                serde_json::to_writer(&mut w, &batch).map_err(Error::from)?;
                w.write_all(b"\n").map_err(io_err(&out))?;
            }
            if let Some(e) = read_error {
                return Err(e);
            }
            w.flush().map_err(io_err(&out))?;
            print_json(&serde_json::json!({ "batches": n_batches, "tokens": n_tokens }))?;
        }
        Command::Flops {
            vocab_size,
            tokens_seen,
            backbone,
            hidden,
        } => {
            let mut profile = param_counts(vocab_size, hidden, backbone)?;
            if let Some(d) = tokens_seen {
                profile = profile.with_tokens_seen(d);
            }
            print_json(&profile)?;
        }
        Command::TokenStats { config, vocab, input } => {
            let (cfg, ds, vocab) = load_inputs(&config, input, vocab)?;
            print_json(&token_stats(&ds, &cfg, &vocab)?)?;
        }
        Command::Oov { vocab, input, config } => {
            let (cfg, ds, vocab) = load_inputs(&config, input, vocab)?;
            print_json(&oov_report(&ds, &vocab, &cfg)?)?;
        }
        Command::Lmm { formula, input } => {
            let rows = read_auroc_csv(&input)?;
            let formula = match formula {
                FormulaArg::Main => Formula::MainEffects,
                FormulaArg::Shots => Formula::ShotInteraction,
            };
            let report = factorial_report(&rows, formula)?;
            print_json(&report)?;
            eprint!("{}", report.render());
        }
        Command::Reproduce { target, json } => {
            let report = reproduce(target)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", report.render());
            }
            if !report.all_pass() {
                return Err(CliError::ChecksFailed);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
