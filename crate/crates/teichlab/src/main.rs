use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use teichlab::lab::{Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "teichlab", version, about = "Counting and measure experiments for convex cocompact groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Orbit-enumeration budget (search nodes).
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Decimal digits for dilatation enclosures and log-ratios.
    #[arg(long, global = true)]
    precision: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Ping-pong certificate of the configured group.
    VerifyGroup,
    /// e^{-hR} N(R) stabilization and the four-point product ratio.
    OrbitCount,
    /// Orbit, Poincaré and geodesic exponents, checked pairwise.
    Exponent,
    /// PS approximant arc masses and support diagnostics.
    PsMeasure,
    /// Conformal-density deviation along the s-ladder.
    Conformality,
    /// Bowen-Margulis grid and its consistency checks.
    BmGrid,
    /// Correlation decay of two flow boxes.
    Mixing,
    /// Closed-geodesic counts and the axis Gromov-product property.
    GeodesicCount,
    /// Equidistribution of orbit-point pairs on certificate arcs.
    Equidistribution,
    /// Translation length against the cross-ratio.
    CrossRatio,
    /// Perron root enclosure of a train-track action.
    TtDilatation,
    /// Multiplicative dependence of two dilatations up to a height.
    Nonarith,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::VerifyGroup => Experiment::VerifyGroup,
            Command::OrbitCount => Experiment::OrbitCount,
            Command::Exponent => Experiment::Exponent,
            Command::PsMeasure => Experiment::PsMeasure,
            Command::Conformality => Experiment::Conformality,
            Command::BmGrid => Experiment::BmGrid,
            Command::Mixing => Experiment::Mixing,
            Command::GeodesicCount => Experiment::GeodesicCount,
            Command::Equidistribution => Experiment::Equidistribution,
            Command::CrossRatio => Experiment::CrossRatio,
            Command::TtDilatation => Experiment::TtDilatation,
            Command::Nonarith => Experiment::Nonarith,
        }
    }
}

fn run(cli: &Cli) -> Result<i32, teichlab::lab::LabError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.budget {
        cfg.budget = b;
    }
    let exp = Experiment::from(cli.command);
    let start = Instant::now();
    let report = exp.run(&cfg, cli.precision)?;
    report.write(&cli.out)?;
    for c in &report.checks {
        println!("{c}");
    }
    for f in &report.flags {
        println!("note: {f}");
    }
    // wall-clock time stays out of report.json, which must be reproducible
    eprintln!("{} finished in {:.2?}", exp.name(), start.elapsed());
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
