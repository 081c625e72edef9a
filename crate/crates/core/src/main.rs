use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use urbanrom::config::ExperimentConfig;
use urbanrom::pipeline::Case;
use urbanrom::rom::SourcePath;

/// Offline/online pipeline for reduced-order urban pollutant transport.
#[derive(Parser)]
#[command(name = "urbanrom", version, about)]
struct Cli {
    /// Case directory holding every artifact of one experiment.
    #[arg(long, env = "URBANROM_CASE_ROOT", global = true, default_value = "case")]
    case: PathBuf,
    /// Re-run the stage even if the manifest says it is up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Projection,
    Deim,
}

impl From<PathArg> for SourcePath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Projection => SourcePath::Projection,
            PathArg::Deim => SourcePath::Deim,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a case directory from a TOML config (defaults built in).
    GenerateCase {
        /// Configuration file; omitted = built-in desk-scale defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the small smoke-test configuration instead.
        #[arg(long)]
        small: bool,
        /// Override the emission seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full-order solver for the given days.
    FomRun {
        /// Days to simulate, e.g. --days 0,1,2 (default: all).
        #[arg(long, value_delimiter = ',')]
        days: Option<Vec<usize>>,
    },
    /// Compute the concentration, flux and source bases.
    Pod,
    /// Select interpolation points and write the error curve.
    DeimBuild {
        #[arg(long)]
        n_deim: Option<usize>,
    },
    /// Train the wind-to-flux-coefficients network.
    TrainFluxNn,
    /// Assemble the reduced operators for one variant.
    RomBuild {
        #[arg(long)]
        n_rb: Option<usize>,
        #[arg(long)]
        n_deim: Option<usize>,
        #[arg(long)]
        n_phi: Option<usize>,
    },
    /// Run the reduced model online for the given days.
    RomRun {
        #[arg(long, value_delimiter = ',')]
        days: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "deim")]
        source_path: PathArg,
        #[arg(long)]
        n_rb: Option<usize>,
        #[arg(long)]
        n_deim: Option<usize>,
        #[arg(long)]
        n_phi: Option<usize>,
    },
    /// Compare reduced runs against the full-order snapshots.
    Evaluate {
        #[arg(long, value_delimiter = ',')]
        days: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "deim")]
        source_path: PathArg,
        #[arg(long)]
        n_rb: Option<usize>,
        #[arg(long)]
        n_deim: Option<usize>,
        #[arg(long)]
        n_phi: Option<usize>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }

    if let Cmd::GenerateCase { config, small, seed } = &cli.cmd {
        let mut cfg = match config {
            Some(p) => ExperimentConfig::load(p)?,
            None if *small => ExperimentConfig::small(),
            None => ExperimentConfig::default(),
        };
        if let Some(s) = seed {
            cfg.emission.seed = *s;
        }
        Case::create(&cli.case, cfg)?;
        println!("case ready at {}", cli.case.display());
        return Ok(());
    }

    let case = Case::open(&cli.case)?;
    let all_days = |days: &Option<Vec<usize>>| -> Vec<usize> {
        days.clone().unwrap_or_else(|| (0..case.cfg.n_days()).collect())
    };
    let red = case.cfg.reduction.clone();

    match cli.cmd {
        Cmd::GenerateCase { .. } => unreachable!("handled above"),
        Cmd::FomRun { days } => {
            case.fom_run(&all_days(&days), cli.force)?;
        }
        Cmd::Pod => {
            case.pod(cli.force)?;
        }
        Cmd::DeimBuild { n_deim } => {
            let n = case.deim_size(n_deim.unwrap_or(red.n_deim))?;
            case.deim_build(n, cli.force)?;
        }
        Cmd::TrainFluxNn => {
            case.train_net(cli.force)?;
        }
        Cmd::RomBuild { n_rb, n_deim, n_phi } => {
            case.rom_build(
                n_rb.unwrap_or(red.n_rb),
                case.deim_size(n_deim.unwrap_or(red.n_deim))?,
                n_phi.unwrap_or(red.n_phi),
                cli.force,
            )?;
        }
        Cmd::RomRun { days, source_path, n_rb, n_deim, n_phi } => {
            case.rom_run(
                &all_days(&days),
                source_path.into(),
                n_rb.unwrap_or(red.n_rb),
                case.deim_size(n_deim.unwrap_or(red.n_deim))?,
                n_phi.unwrap_or(red.n_phi),
                cli.force,
            )?;
        }
        Cmd::Evaluate { days, source_path, n_rb, n_deim, n_phi } => {
            let rows = case.evaluate(
                &all_days(&days),
                source_path.into(),
                n_rb.unwrap_or(red.n_rb),
                case.deim_size(n_deim.unwrap_or(red.n_deim))?,
                n_phi.unwrap_or(red.n_phi),
            )?;
            if rows.is_empty() {
                bail!("no days evaluated");
            }
            println!("day  err_rb        speedup");
            for (d, e, s) in &rows {
                println!("{d:<4} {e:<13.6e} {s:.2}");
            }
            println!("mean err_rb = {:.6e}", Case::mean_error(&rows));
        }
    }
    Ok(())
}
