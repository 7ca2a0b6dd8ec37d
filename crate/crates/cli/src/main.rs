use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use graphon_core::experiment::{self, ExperimentConfig, ExperimentKind, Preset, RunReport};
use graphon_core::graphgen::{sample_bernoulli, sample_by_evaluation, sample_by_integration, GraphMeta};
use graphon_core::graphon::{Graphon, Partition};

#[derive(Parser)]
#[command(name = "graphon", version, about = "Graphon signal processing and graphon-pooling GNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Source localization on graphs integrated from graphons.
    Sourceloc(RunArgs),
    /// Rating prediction on the MovieLens 100k user network.
    Movielens {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset directory containing u.data (overrides the config).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Graph-to-graphon Fourier convergence diagnostics.
    Spectra(RunArgs),
    /// Sample a graph from a graphon and write it as CSV plus a JSON sidecar.
    ExportGraph(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON overrides on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Paper)]
    preset: PresetArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Quick,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Evaluate,
    Integrate,
    Bernoulli,
}

#[derive(Args)]
struct ExportArgs {
    /// Graphon spec, e.g. `exp:beta=2.3`, `bilinear`, `poly`, `step:blocks.csv`.
    #[arg(long)]
    graphon: String,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Method::Integrate)]
    method: Method,
    /// Quadrature nodes per cell and axis (integrate).
    #[arg(long, default_value_t = 8)]
    quadrature: usize,
    /// Edge probability scale (bernoulli).
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Draw uniform latent points instead of midpoints (bernoulli).
    #[arg(long)]
    random_points: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let preset = match args.preset {
        PresetArg::Quick => Preset::Quick,
        PresetArg::Paper => Preset::Paper,
    };
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, Some(kind), Some(preset))
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::preset(kind, preset),
    };
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    Ok(cfg)
}

fn report(r: &RunReport, cfg: &ExperimentConfig) -> ExitCode {
    println!("config hash {}", r.config_hash);
    println!("{}", r.results.header.join("\t"));
    for row in &r.results.rows {
        println!("{}", row.join("\t"));
    }
    println!("wrote {} files to {}", r.outputs.len() + 1, cfg.out.display());
    if r.ok() {
        ExitCode::SUCCESS
    } else {
        for f in &r.failures {
            eprintln!("failed: {f}");
        }
        ExitCode::FAILURE
    }
}

fn export_graph(args: &ExportArgs) -> anyhow::Result<()> {
    let w = Graphon::parse_spec(&args.graphon)?;
    let grid = Partition::uniform(args.n)?;
    let g = match args.method {
        Method::Evaluate => sample_by_evaluation(&w, &grid)?,
        Method::Integrate => sample_by_integration(&w, &grid, args.quadrature)?,
        Method::Bernoulli => sample_bernoulli(&w, &grid, args.kappa, args.seed, args.random_points)?,
    };
    let meta = GraphMeta {
        kernel: Some(w.describe()),
        seed: matches!(args.method, Method::Bernoulli).then_some(args.seed),
    };
    g.export(&args.out, &meta)?;
    println!("wrote {}-node graph to {}", g.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    Ok(match cli.command {
        Command::Sourceloc(args) => {
            let cfg = load_config(ExperimentKind::Sourceloc, &args)?;
            report(&experiment::run_sourceloc(&cfg)?, &cfg)
        }
        Command::Movielens { run, data } => {
            let mut cfg = load_config(ExperimentKind::Movielens, &run)?;
            if data.is_some() {
                cfg.movielens.path = data;
            }
            if cfg.movielens.path.is_none() {
                bail!("no MovieLens dataset given; pass --data DIR (directory containing u.data)");
            }
            report(&experiment::run_movielens(&cfg)?, &cfg)
        }
        Command::Spectra(args) => {
            let cfg = load_config(ExperimentKind::Spectra, &args)?;
            report(&experiment::run_spectra(&cfg)?, &cfg)
        }
        Command::ExportGraph(args) => {
            export_graph(&args)?;
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
