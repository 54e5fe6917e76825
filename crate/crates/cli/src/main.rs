//! `alcd`: batch driver for the extraction experiments.
//!
//! Settings resolve in this order, later winning: built-in defaults, the
//! JSON config, `ALCD_OUT_DIR` / `ALCD_THREADS`, then command-line flags.

use std::path::PathBuf;
use std::process::ExitCode;

use alcd::bench::Split;
use alcd::harness::{self, ExperimentConfig, RunManifest, SplitSizes};
use alcd::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "alcd", version, about = "Alternate contrastive decoding experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(short, long, env = "ALCD_CONFIG", global = true, default_value = "configs/rigged.json")]
    config: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Output directory (overrides config and ALCD_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads (overrides config and ALCD_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/valid/test corpora.
    Gen {
        /// Use 4600/400/400 split sizes.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        valid: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Fine-tune the normal, classification and identification models.
    Train {
        /// Steps for all three models.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Decode one split with one strategy.
    Decode {
        #[arg(short, long)]
        strategy: String,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        ab: AlphaBeta,
    },
    /// Decode and score; runs the configured strategy list when none given.
    Eval {
        #[arg(short, long)]
        strategy: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        ab: AlphaBeta,
    },
    /// Validation grid over alpha and beta, then a test run at the best point.
    Grid {
        /// Also write marginal curves under plots/.
        #[arg(long)]
        plot_data: bool,
    },
    /// ALCD, no-constraint, alternate-sum and weighted-sum on the test split.
    Ablate,
    /// ALCD with specialists from each saved checkpoint step.
    SweepSteps {
        #[arg(long)]
        plot_data: bool,
    },
}

#[derive(Args, Debug)]
struct AlphaBeta {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    cfg.apply_env()?;
    let o = &cli.overrides;
    if let Some(d) = &o.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(t) = o.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Gen {
            full,
            train,
            valid,
            test,
        } => {
            if *full {
                cfg.splits = SplitSizes::FULL;
            }
            cfg.splits.train = train.unwrap_or(cfg.splits.train);
            cfg.splits.valid = valid.unwrap_or(cfg.splits.valid);
            cfg.splits.test = test.unwrap_or(cfg.splits.test);
        }
        Command::Train { steps: Some(n) } => {
            cfg.train.normal.steps = *n;
            cfg.train.classification.steps = *n;
            cfg.train.identification.steps = *n;
        }
        Command::Decode { ab, .. } | Command::Eval { ab, .. } => {
            if let Some(a) = ab.alpha {
                cfg.decode.params.alpha = a;
            }
            if let Some(b) = ab.beta {
                cfg.decode.params.beta = b;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn report(m: &RunManifest) {
    println!("{} artifacts recorded in manifests/{}.json", m.artifacts.len(), m.command);
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::Gen { .. } => report(&harness::cmd_gen(&cfg)?),
        Command::Train { .. } => report(&harness::cmd_train(&cfg)?),
        Command::Decode { strategy, split, .. } => report(&harness::cmd_decode(&cfg, strategy, (*split).into())?),
        Command::Eval { strategy, split, .. } => {
            let (m, rows) = harness::cmd_eval(&cfg, strategy, (*split).into())?;
            println!("{:<14} {:>8} {:>8} {:>8}", "strategy", "P", "R", "F1");
            for r in &rows {
                println!(
                    "{:<14} {:>8.2} {:>8.2} {:>8.2}",
                    r.strategy.id(),
                    100.0 * r.eval.precision,
                    100.0 * r.eval.recall,
                    100.0 * r.eval.f1
                );
            }
            report(&m);
        }
        Command::Grid { plot_data } => {
            let (m, g) = harness::cmd_grid(&cfg, *plot_data)?;
            println!(
                "best alpha={} beta={} valid F1={:.2} test F1={:.2}",
                g.best.alpha,
                g.best.beta,
                100.0 * g.best.f1,
                100.0 * g.test.eval.f1
            );
            report(&m);
        }
        Command::Ablate => {
            let (m, rows) = harness::cmd_ablate(&cfg)?;
            for r in &rows {
                println!("{:<14} F1={:.2}", r.strategy.id(), 100.0 * r.eval.f1);
            }
            report(&m);
        }
        Command::SweepSteps { plot_data } => {
            let (m, pts) = harness::cmd_sweep_steps(&cfg, *plot_data)?;
            for p in &pts {
                println!("step {:>6} F1={:.2}", p.step, 100.0 * p.f1);
            }
            report(&m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
