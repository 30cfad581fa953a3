use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protchat_core::config::{RunConfig, SplitChoice, CONFIG_ENV};
use protchat_core::corpus::serialize_instruction_lines;
use protchat_core::corpus::synthetic::{toy_corpus, ToyCorpusConfig};
use protchat_core::pipeline::{
    precompute, run_align, run_eval, run_pretrain, run_tune, write_atomic, ChatSession, PrecomputeInput, RunOptions,
    StageReport,
};
use protchat_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "protchat", version, about = "Protein-language alignment and chat at desk scale")]
struct Cli {
    /// Run config (TOML).
    #[arg(long, short, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pretrain.steps=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct TrainArgs {
    /// Continue from the stage checkpoint if present.
    #[arg(long)]
    resume: bool,
    /// Stop after this many total steps.
    #[arg(long)]
    max_steps: Option<u64>,
}

impl From<TrainArgs> for RunOptions {
    fn from(a: TrainArgs) -> RunOptions {
        RunOptions {
            resume: a.resume,
            stop_after: a.max_steps,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic instruction file.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Question-answer pairs per protein (1 to 3).
        #[arg(long, default_value_t = 1)]
        qa: usize,
    },
    /// Encode FASTA/PDB inputs into embedding files plus a manifest.
    Precompute {
        #[arg(long)]
        out: PathBuf,
        /// Chain for PDB inputs.
        #[arg(long)]
        chain: Option<char>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Stage 1: pretrain the query-token model.
    Pretrain(TrainArgs),
    /// Stage 2: train context gating and the tertiary projector.
    Align(TrainArgs),
    /// Stage 3: train the prompt adapter (and optionally the decoder).
    Tune(TrainArgs),
    /// Generate answers for a split, score them and write the report.
    Eval {
        #[arg(long)]
        split: Option<SplitChoice>,
    },
    /// Ask questions about a protein.
    Chat {
        /// FASTA or PDB file; asked for on stdin when absent.
        #[arg(long)]
        protein: Option<PathBuf>,
        #[arg(long)]
        chain: Option<char>,
        /// Answer one question and exit.
        #[arg(long)]
        once: Option<String>,
    },
}

fn exit_for(e: &Error) -> u8 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INVALID
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(format!("no config given (use --config or set {CONFIG_ENV})")))?;
    RunConfig::load(path, &cli.overrides)
}

fn print_stage(r: &StageReport) {
    println!("{}: {} steps", r.stage.name(), r.steps_done);
    if let Some(l) = r.last_loss {
        println!("  last loss {l:.6}");
    }
    if r.skipped_records > 0 {
        println!("  skipped {} records", r.skipped_records);
    }
    for c in &r.frozen {
        println!("  frozen  {:<8} {}", c.module, if c.unchanged() { "unchanged" } else { "CHANGED" });
    }
    for c in &r.trained {
        println!("  trained {:<8} {}", c.module, c.after);
    }
    println!("  checkpoint {}", r.checkpoint.display());
    println!("  loss log   {}", r.loss_log.display());
}

fn chat(cfg: &RunConfig, protein: Option<PathBuf>, chain: Option<char>, once: Option<String>) -> Result<(), Error> {
    let mut session = ChatSession::new(cfg)?;
    if let Some(q) = once {
        let path = protein.ok_or_else(|| Error::Config("--once needs --protein".into()))?;
        session.load_file(&path, chain)?;
        println!("{}", session.ask(&q)?);
        return Ok(());
    }
    if let Some(path) = protein {
        match session.load_file(&path, chain) {
            Ok(id) => eprintln!("loaded {id}"),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        let prompt = if session.protein_id().is_some() { "question> " } else { "protein file> " };
        eprint!("{prompt}");
        std::io::stderr().flush()?;
        let Some(line) = lines.next() else { break };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let load = |s: &mut ChatSession, p: &str| match s.load_file(std::path::Path::new(p), chain) {
            Ok(id) => eprintln!("loaded {id}"),
            Err(e) => eprintln!("error: {e}"),
        };
        if session.protein_id().is_none() {
            load(&mut session, line);
        } else if let Some(p) = line.strip_prefix(":protein ") {
            load(&mut session, p.trim());
        } else {
            match session.ask(line) {
                Ok(a) => println!("{a}"),
                Err(e) => eprintln!("error: {e}"),
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::ToyData { out, n, seed, qa } = &cli.command {
        let recs = toy_corpus(&ToyCorpusConfig {
            n: *n,
            seed: *seed,
            qa_per_protein: *qa,
            ..Default::default()
        })?;
        write_atomic(out, serialize_instruction_lines(&recs).as_bytes())?;
        println!("wrote {} records to {}", recs.len(), out.display());
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::ToyData { .. } => unreachable!("handled above"),
        Command::Precompute { out, chain, inputs } => {
            let inputs: Vec<PrecomputeInput> = inputs.into_iter().map(|path| PrecomputeInput { path, chain }).collect();
            let m = precompute(&cfg, &inputs, &out)?;
            println!("wrote {} embedding files and {}", m.len(), out.join("manifest.tsv").display());
        }
        Command::Pretrain(a) => print_stage(&run_pretrain(&cfg, a.into())?),
        Command::Align(a) => print_stage(&run_align(&cfg, a.into())?),
        Command::Tune(a) => print_stage(&run_tune(&cfg, a.into())?),
        Command::Eval { split } => {
            let r = run_eval(&cfg, split.unwrap_or(cfg.eval.split))?;
            let a = &r.aggregate;
            println!(
                "examples {}  bleu1 {:.4}  bleu4 {:.4}  rougeL {:.4}  meteor {:.4}  cider {:.4}  exact_match {:.4}",
                r.examples.len(),
                a.bleu1,
                a.bleu4,
                a.rouge_l,
                a.meteor,
                a.cider,
                a.exact_match
            );
            if let Some(ret) = &r.retrieval {
                println!(
                    "retrieval ({} items, k={}): protein→text acc {:.4} R@20 {:.4}; text→protein acc {:.4} R@20 {:.4}",
                    ret.queries,
                    ret.k_rank,
                    ret.protein_to_text.acc,
                    ret.protein_to_text.r_at_20,
                    ret.text_to_protein.acc,
                    ret.text_to_protein.r_at_20
                );
            }
            if let Some(c) = &r.cross_level {
                println!("cross-level retrieval: acc {:.4} R@20 {:.4}", c.acc, c.r_at_20);
            }
        }
        Command::Chat { protein, chain, once } => chat(&cfg, protein, chain, once)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
