//! `clincot`: region proposal, preference-data generation, margin-aware
//! preference training and the iterative loop over fixture-backed models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clincot::commands::{cmd_iterate, cmd_pipeline, cmd_regions, cmd_train, cmd_verify};
use clincot::config::RunConfig;
use clincot::orchestrator::RunOptions;
use clincot::Error;

#[derive(Parser)]
#[command(name = "clincot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Train without the score margin.
    #[arg(long)]
    naive_dpo: bool,
    /// Single round over all inputs.
    #[arg(long)]
    no_iteration: bool,
    /// Score without lookahead.
    #[arg(long)]
    gamma_zero: bool,
    /// Use only the first evaluator.
    #[arg(long)]
    single_evaluator: bool,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output {
            cfg.paths.output = o.clone();
        }
        let a = &mut cfg.ablation;
        a.naive_dpo |= self.naive_dpo;
        a.no_iteration |= self.no_iteration;
        a.gamma_zero |= self.gamma_zero;
        a.single_evaluator |= self.single_evaluator;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract one region mask per hypothesis heatmap.
    Regions {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        image: PathBuf,
        /// `HYPOTHESIS=PATH`, repeatable.
        #[arg(long = "heatmap", value_parser = parse_binding, required = true)]
        heatmaps: Vec<(String, PathBuf)>,
        /// Directory for `<hypothesis>.mask` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one round of preference data over every configured input.
    Pipeline {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the policy on a preference dataset.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint_in: Option<PathBuf>,
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Two-column `epoch mean_loss` file.
        #[arg(long)]
        loss_out: PathBuf,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Run every round of iterative preference learning.
    Iterate {
        #[command(flatten)]
        overrides: Overrides,
        /// Continue after this completed round.
        #[arg(long)]
        resume_from: Option<usize>,
        /// Stop after this round.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run the property checks against the configured fixtures.
    Verify {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the effective configuration in canonical form.
    Config {
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn parse_binding(s: &str) -> Result<(String, PathBuf), String> {
    let (id, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected HYPOTHESIS=PATH, got `{s}`"))?;
    if id.is_empty() {
        return Err("empty hypothesis id".into());
    }
    Ok((id.to_string(), PathBuf::from(path)))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Regions {
            overrides,
            image,
            heatmaps,
            out,
        } => {
            let cfg = overrides.load()?;
            print!("{}", cmd_regions(&cfg, &image, &heatmaps, &out)?.render());
        }
        Command::Pipeline { overrides } => {
            let cfg = overrides.load()?;
            let s = cmd_pipeline(&cfg)?;
            println!("records: {}", s.records);
            println!("skipped hypotheses: {}", s.skipped);
            println!("dataset: {}", s.dataset.display());
            println!("scores: {}", s.ledger.display());
            println!("chains: {}", s.chains.display());
        }
        Command::Train {
            overrides,
            dataset,
            checkpoint_in,
            checkpoint_out,
            loss_out,
            learning_rate,
        } => {
            let mut cfg = overrides.load()?;
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let losses = cmd_train(&cfg, &dataset, checkpoint_in.as_deref(), &checkpoint_out, &loss_out)?;
            for (i, l) in losses.iter().enumerate() {
                println!("epoch {} mean_loss {l:.6}", i + 1);
            }
        }
        Command::Iterate {
            overrides,
            resume_from,
            stop_after,
        } => {
            let cfg = overrides.load()?;
            let report = cmd_iterate(
                &cfg,
                RunOptions {
                    resume_from,
                    stop_after,
                },
            )?;
            print_file(&report.run_dir.join("report.txt"))?;
        }
        Command::Verify { overrides } => {
            let cfg = overrides.load()?;
            let checks = cmd_verify(&cfg)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Invariant(format!("{failed} of {} checks failed", checks.len())));
            }
        }
        Command::Config { overrides } => print!("{}", overrides.load()?.to_canonical_string()),
    }
    Ok(())
}

fn print_file(path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
