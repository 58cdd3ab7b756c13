use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqmap::harness::{self, ExperimentConfig};
use seqmap::tasks::Dataset;
use seqmap::{Error, Result};

/// Continual learning by sequential MAP inference.
#[derive(Parser)]
#[command(name = "seqmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method once.
    Run(Common),
    /// Grid-search the configured methods on validation FAA.
    Tune(Common),
    /// Train the configured method on a 2-D sequence and write its probability grid.
    Viz(Common),
    /// Summarize persisted results as a table of test FAA.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and SEQMAP_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Config whose output directory to read.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accepted for symmetry with the other subcommands; reports cover all seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory to read.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<(ExperimentConfig, u64, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common.out.clone().unwrap_or_else(|| cfg.resolved_out_dir());
    Ok((cfg, seed, out))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.4}", 100.0 * v))
}

fn run(common: &Common) -> Result<()> {
    let (cfg, seed, out) = load(common)?;
    let o = harness::run_experiment(&cfg, seed, &out)?;
    println!(
        "{} {} seed {}: val FAA {}  test FAA {}",
        o.method.name(),
        o.method.hparams(),
        seed,
        pct(o.val_faa),
        pct(o.test_faa)
    );
    Ok(())
}

fn tune(common: &Common) -> Result<()> {
    let (cfg, seed, out) = load(common)?;
    for t in harness::tune(&cfg, seed, &out)? {
        let w = t.winner();
        println!(
            "{:<8} best {:<24} val FAA {}  test FAA {}  ({} cells)",
            t.method,
            w.method.hparams(),
            pct(w.val_faa),
            pct(w.test_faa),
            t.cells.len()
        );
    }
    Ok(())
}

fn viz(common: &Common) -> Result<()> {
    let (cfg, seed, out) = load(common)?;
    let method = cfg
        .method
        .ok_or_else(|| Error::Config("viz needs a [method] section".into()))?;
    let (seq, problem) = harness::run::prepare(&cfg, &[method], seed)?;
    if seq.input_dim() != 2 {
        return Err(Error::Dimension(format!(
            "viz needs 2-D inputs, the sequence has {} features",
            seq.input_dim()
        )));
    }
    let outcome = harness::execute(&problem, &seq, method, seed);
    if let Some(e) = outcome.failure {
        return Err(e);
    }
    let learner = outcome.learner.expect("successful run has a learner");
    let train: Vec<&Dataset> = seq.train();
    let all = Dataset::concat(&train)?;
    let bounds = match cfg.viz.bounds {
        Some(b) => b,
        None => harness::padded_bounds(all.x())?,
    };
    let grid = harness::export_prob_grid(&problem.spec, &learner.theta, bounds, cfg.viz.resolution)?;
    let path = out
        .join(&cfg.name)
        .join(format!("{}_seed{seed}_grid.csv", method.name()));
    grid.write_csv(&path)?;
    println!("wrote {} ({} rows)", path.display(), grid.len());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let out = match (&args.out, &args.config) {
        (Some(out), _) => out.clone(),
        (None, Some(c)) => ExperimentConfig::load(c)?.resolved_out_dir(),
        (None, None) => match std::env::var_os(harness::OUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => Path::new("results").to_path_buf(),
        },
    };
    let (_, table) = harness::report(&out)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Tune(c) => tune(c),
        Command::Viz(c) => viz(c),
        Command::Report(r) => report(r),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
