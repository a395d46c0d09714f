use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use advae_cli::commands::{self, Editor, Run};
use advae_cli::config::resolve_run_dir;
use advae_cli::report;

/// Attention-driven VAE: training, disentanglement evaluation and latent
/// manipulation.
#[derive(Parser)]
#[command(name = "advae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run directory; relative paths are resolved against $ADVAE_RUN_ROOT when set.
    #[arg(long, short = 'r', default_value = ".")]
    run_dir: PathBuf,
    /// Config file (default: <run-dir>/config.toml).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SeedArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Only this seed (default: every seed in the config).
    #[arg(long, short = 's')]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test corpus and its oracle parses.
    GenCorpus(RunArgs),
    /// Train one model per seed.
    Train(SeedArgs),
    /// Generate perturbation pairs from prior samples.
    Perturb(SeedArgs),
    /// Parse perturbation pairs with the synthetic-grammar annotator.
    Annotate(SeedArgs),
    /// Decoder influence from parsed pairs.
    EvalDec(SeedArgs),
    /// Encoder influence from test-set attention.
    EvalEnc(SeedArgs),
    /// Role appearance/disappearance matrix from parsed pairs.
    EvalStruct(SeedArgs),
    /// Position baseline over the training parses.
    Pb(RunArgs),
    /// Importance-sampled perplexity bound on the test corpus.
    Ppl(SeedArgs),
    /// Mean(std) table over seeds, one row per run directory.
    Report {
        /// Run directories to aggregate (default: --run-dir).
        runs: Vec<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for report.txt/report.json (default: first run).
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
    },
    /// Redraw the variable bound to a role and decode.
    Resample {
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        role: String,
        #[arg(long)]
        sentence: String,
        /// Seed of the fresh prior draw.
        #[arg(long, default_value_t = 0)]
        draw: u64,
    },
    /// Exchange the variable bound to a role between two sentences.
    Swap {
        #[command(flatten)]
        seed: SeedArgs,
        #[arg(long)]
        role: String,
        #[arg(long)]
        first: String,
        #[arg(long)]
        second: String,
    },
    /// Interactive resample/swap loop on stdin.
    Repl(SeedArgs),
}

fn open(args: &RunArgs) -> Result<Run> {
    Run::open(resolve_run_dir(&args.run_dir), args.config.as_deref())
}

/// The single seed a manipulation command works on.
fn one_seed(run: &Run, args: &SeedArgs) -> u64 {
    args.seed.unwrap_or(run.cfg.seeds[0])
}

fn per_seed<T>(args: &SeedArgs, f: impl Fn(&Run, u64) -> Result<T>, show: impl Fn(u64, T)) -> Result<()> {
    let run = open(&args.run)?;
    for seed in run.seeds(args.seed) {
        let out = f(&run, seed).with_context(|| format!("seed {seed}"))?;
        show(seed, out);
    }
    Ok(())
}

fn summary(what: &str, r: advae::eval::DisentanglementReport) {
    let roles: Vec<String> = r.per_role.iter().map(|d| format!("{}={:.2}@{}", d.role, d.delta, d.m1)).collect();
    println!("{what}: D_{} {:.2} N {} [{}]", r.kind, r.total, r.n_distinct, roles.join(" "));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&open(&a)?),
        Command::Train(a) => per_seed(&a, commands::train_seed, |s, i| {
            println!("seed {s}: {} steps, recon {:.4}, kl {:.4}", i.steps, i.final_recon, i.final_kl)
        }),
        Command::Perturb(a) => per_seed(&a, commands::perturb, |s, n| println!("seed {s}: {n} sentences")),
        Command::Annotate(a) => per_seed(&a, commands::annotate, |s, n| println!("seed {s}: {n} parses")),
        Command::EvalDec(a) => per_seed(&a, commands::eval_dec, |s, r| summary(&format!("seed {s}"), r)),
        Command::EvalEnc(a) => per_seed(&a, commands::eval_enc, |s, r| summary(&format!("seed {s}"), r)),
        Command::EvalStruct(a) => per_seed(&a, commands::eval_struct, |s, m| {
            println!("seed {s}: {} roles x {} variables", m.n_roles(), m.n_vars())
        }),
        Command::Pb(a) => {
            summary("position baseline", commands::pb(&open(&a)?)?);
            Ok(())
        }
        Command::Ppl(a) => per_seed(&a, commands::ppl, |s, p| {
            println!("seed {s}: K={} nll {:.4} ppl {:.3} over {} sentences", p.k, p.mean_nll, p.ppl, p.sentences)
        }),
        Command::Report { runs, run, out } => {
            let dirs = if runs.is_empty() { vec![run.run_dir.clone()] } else { runs };
            let runs = dirs
                .iter()
                .map(|d| Run::open(resolve_run_dir(d), run.config.as_deref()))
                .collect::<Result<Vec<_>>>()?;
            let rep = report::collect(&runs)?;
            let out = out.map(|o| resolve_run_dir(&o)).unwrap_or_else(|| runs[0].dir.clone());
            report::write(&rep, &out)?;
            print!("{}", rep.table());
            Ok(())
        }
        Command::Resample { seed, role, sentence, draw } => {
            let run = open(&seed.run)?;
            let ed = Editor::open(&run, one_seed(&run, &seed))?;
            println!("{}", ed.resample(&sentence, &role, draw)?);
            Ok(())
        }
        Command::Swap { seed, role, first, second } => {
            let run = open(&seed.run)?;
            let ed = Editor::open(&run, one_seed(&run, &seed))?;
            let (a, b) = ed.swap(&first, &second, &role)?;
            println!("{a}\n{b}");
            Ok(())
        }
        Command::Repl(a) => {
            let run = open(&a.run)?;
            let ed = Editor::open(&run, one_seed(&run, &a))?;
            commands::repl(&ed, std::io::stdin().lock(), std::io::stdout().lock(), run.cfg.eval.seed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
