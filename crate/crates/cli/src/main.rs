use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rocfair::config::RunConfig;
use rocfair::construct::{Mechanism, Recipe};
use rocfair::eval::report_table;
use rocfair::pipeline;
use rocfair::Error;

#[derive(Parser)]
#[command(name = "rocfair", version, about = "Fairness post-processing over group-wise ROC hulls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    /// Anti-diagonal mixing with a biased coin
    Ad,
    /// Outcome-dependent label flipping
    Lf,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Ad => Mechanism::AntiDiagonal,
            MechanismArg::Lf => Mechanism::LabelFlipping,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every unset value takes its default
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    score_col: Option<String>,
    #[arg(long)]
    group_col: Option<String>,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Split, post-process, construct the randomized classifier and evaluate it on the test split
    Run {
        #[command(flatten)]
        common: Common,
        /// Repeat over this many consecutive seeds and write a mean ± sd summary
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Write the ROC hulls of the post-processing split
    Hull {
        #[command(flatten)]
        common: Common,
    },
    /// Run the region search on the test split itself
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Draw the synthetic population described by the [synth] section
    Synth {
        #[command(flatten)]
        common: Common,
        /// Destination CSV (defaults to <out-dir>/synth.csv)
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Evaluate a saved recipe on the test split
    EvalRecipe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recipe: PathBuf,
    },
}

struct Resolved {
    cfg: RunConfig,
    seed: u64,
    dir: PathBuf,
}

fn resolve(c: Common) -> Result<Resolved, Error> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.score_col {
        cfg.data.score_col = v;
    }
    if let Some(v) = c.group_col {
        cfg.data.group_col = v;
    }
    if let Some(v) = c.label_col {
        cfg.data.label_col = v;
    }
    if let Some(m) = c.mechanism {
        cfg = cfg.with_mechanism(m.into());
    }
    if let Some(dir) = c.out_dir {
        cfg.output.dir = dir;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(Resolved {
        seed: cfg.seed,
        dir: cfg.output.dir.clone(),
        cfg,
    })
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { common, seeds } => {
            let r = resolve(common)?;
            if seeds == 0 {
                return Err(Error::Input("--seeds must be at least 1".into()));
            }
            if seeds > 1 {
                let summary = pipeline::run_seeds(&r.cfg, r.seed, seeds, &r.dir)?;
                print!("{}", pipeline::summary_text(&summary));
            } else {
                let out = pipeline::run(&r.cfg, r.seed)?;
                pipeline::write_run(&out, &r.cfg, &r.dir)?;
                print!("{}", pipeline::report_text(&out.report, &out.recipe));
            }
            log::info!("wrote {}", r.dir.display());
        }
        Command::Hull { common } => {
            let r = resolve(common)?;
            let hulls = pipeline::hulls(&r.cfg, r.seed, &r.dir)?;
            for h in &hulls {
                println!("group {}: {} supports", h.group(), h.supports().len());
            }
        }
        Command::Oracle { common } => {
            let r = resolve(common)?;
            let report = pipeline::oracle(&r.cfg, r.seed, &r.dir)?;
            println!(
                "oracle accuracy {:.4}  alpha {:.4}  triggered {}",
                report.accuracy, report.guard.alpha, report.guard.triggered
            );
        }
        Command::Synth { common, output } => {
            let r = resolve(common)?;
            let path = output.unwrap_or_else(|| r.dir.join("synth.csv"));
            let data = pipeline::synth(&r.cfg, r.seed, &path)?;
            println!("{} samples written to {}", data.len(), path.display());
        }
        Command::EvalRecipe { common, recipe } => {
            let r = resolve(common)?;
            let recipe = Recipe::load(&recipe)?;
            let report = pipeline::eval_recipe(&r.cfg, &recipe, r.seed, &r.dir)?;
            print!("{}", report_table(&[("test".to_string(), report)]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
