use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ymeasure::pipeline::check::{format_table, self_check};
use ymeasure::pipeline::{analyze, run, Metrics, RunConfig, CONFIG_FILE};
use ymeasure::problems::Case;
use ymeasure::Error;

/// Learn gradient Young measures of non-convex variational problems.
#[derive(Parser, Debug)]
#[command(name = "ymeasure", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train, analyze and export one run.
    Run(RunArgs),
    /// Analyze a stored training checkpoint.
    Analyze(AnalyzeArgs),
    /// Gradient and quadrature self-tests.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// bolza-1d, quasi-1d, four-well or two-well-affine.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch_initial: Option<usize>,
    /// literal-block or lifted-trunk.
    #[arg(long)]
    trunk_mode: Option<String>,
    /// weighted-uniform or importance-normal.
    #[arg(long)]
    latent_sampling: Option<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    checkpoint: PathBuf,
    /// Config file whose [analysis] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to `analysis` next to the checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(case) = &args.case {
        let case: Case = case.parse()?;
        if args.config.is_none() || args.out.is_none() {
            c.run.out = RunConfig::new(case).run.out;
        }
        c.run.case = case;
    }
    if let Some(v) = args.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = args.seed {
        c.run.seed = v;
    }
    if let Some(v) = &args.out {
        c.run.out = v.clone();
    }
    if let Some(v) = args.lambda1 {
        c.loss.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        c.loss.lambda2 = v;
    }
    if let Some(v) = args.lambda3 {
        c.loss.lambda3 = v;
    }
    if let Some(v) = args.alpha {
        c.loss.alpha = v;
    }
    if let Some(v) = args.batch_initial {
        c.train.batch_initial = v;
    }
    if let Some(v) = &args.trunk_mode {
        c.network.trunk_mode = v.parse()?;
    }
    if let Some(v) = &args.latent_sampling {
        c.train.latent_sampling = v.parse()?;
    }
    c.validate()?;
    Ok(c)
}

fn summary(m: &Metrics, out: &Path) {
    println!("case {} after {} epochs -> {}", m.case.as_str(), m.epochs, out.display());
    if let Some(l) = &m.final_loss {
        println!("final loss {:.4e} (energy {:.4e})", l.total, l.energy_term);
    }
    println!("probe energy {:.4e}, max |u| {:.3e}", m.energy, m.max_abs_u);
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run(args) => {
            let config = resolve(&args)?;
            let m = run(&config)?;
            summary(&m, &config.run.out);
        }
        Command::Analyze(args) => {
            let cfg = match &args.config {
                Some(p) => RunConfig::load(p)?.analysis,
                None => {
                    let sibling = args.checkpoint.parent().and_then(Path::parent).map(|d| d.join(CONFIG_FILE));
                    match sibling.filter(|p| p.is_file()) {
                        Some(p) => RunConfig::load(&p)?.analysis,
                        None => RunConfig::default().analysis,
                    }
                }
            };
            let out = args.out.clone().unwrap_or_else(|| {
                args.checkpoint
                    .parent()
                    .and_then(Path::parent)
                    .unwrap_or(Path::new("."))
                    .join("analysis")
            });
            let m = analyze(&args.checkpoint, &cfg, &out)?;
            summary(&m, &out);
        }
        Command::Check { seed } => {
            let rows = self_check(seed);
            print!("{}", format_table(&rows));
            if rows.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
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
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
