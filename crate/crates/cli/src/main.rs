use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qpburst_core::materials::MaterialDb;
use qpburst_core::pipeline::{physics_table, run_pipeline, run_stage, PhysicsQuery, RunConfig, RunManifest, Stage};
use qpburst_core::{Error, Seed};

/// Simulate, detect and analyze radiation-induced quasiparticle bursts.
#[derive(Parser)]
#[command(name = "qpburst", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage (or one, with --stage).
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        stage: Option<String>,
    },
    /// Synthesize ground truth, MKID streams and qubit records.
    Simulate(RunArgs),
    /// Run the offline and live triggers over the MKID streams.
    Detect(RunArgs),
    /// Align, fit, and test TLS/radiation correlations.
    Analyze(RunArgs),
    /// Summarize a finished run.
    Report(RunArgs),
    /// Phonon lifetimes and gap consistency for the material database.
    Physics(PhysicsArgs),
    /// Print a config file with every default filled in.
    DefaultConfig {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 3600.0)]
        duration: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct PhysicsArgs {
    /// Material database (TOML); the bundled one by default.
    #[arg(long)]
    materials: Option<PathBuf>,
    /// Substrate height (µm).
    #[arg(long, default_value_t = 500.0)]
    height: f64,
    /// Mean phonon velocity (m/s) for the override column.
    #[arg(long)]
    v_override: Option<f64>,
    /// Substrate:plane pair, e.g. Si:Al; repeatable. All pairs by default.
    #[arg(long = "pair")]
    pairs: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = Seed(s);
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    Ok((cfg, out))
}

fn summarize(m: &RunManifest, dir: &Path) {
    for s in &m.stages {
        let outputs: Vec<&str> = s.outputs.iter().map(|o| o.path.as_str()).collect();
        println!("{:<9} {:?} {:>7.2} s  {}", s.stage.name(), s.status, s.wall_s, outputs.join(" "));
    }
    println!("results in {}", dir.display());
}

fn stage_run(args: &RunArgs, stage: Option<Stage>) -> Result<(), Error> {
    let (cfg, out) = load(args)?;
    let manifest = match stage {
        Some(s) => run_stage(&cfg, &out, s)?,
        None => run_pipeline(&cfg, &out)?,
    };
    summarize(&manifest, &out);
    Ok(())
}

fn physics(args: &PhysicsArgs) -> Result<(), Error> {
    let db = match &args.materials {
        Some(p) => MaterialDb::load(p)?,
        None => MaterialDb::defaults(),
    };
    let pairs = if args.pairs.is_empty() {
        None
    } else {
        let parsed = args
            .pairs
            .iter()
            .map(|p| {
                p.split_once(':')
                    .map(|(s, g)| (s.to_string(), g.to_string()))
                    .ok_or_else(|| Error::Config(format!("--pair {p}: expected SUBSTRATE:PLANE")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(parsed)
    };
    let q = PhysicsQuery { substrate_height_um: args.height, pairs, velocity_override: args.v_override };
    let table = physics_table(&db, &q)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        Format::Text => write!(out, "{table}")?,
        Format::Csv => table.write_csv(&mut out)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &table)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { run, stage } => stage_run(&run, stage.as_deref().map(str::parse).transpose()?),
        Command::Simulate(a) => stage_run(&a, Some(Stage::Simulate)),
        Command::Detect(a) => stage_run(&a, Some(Stage::Detect)),
        Command::Analyze(a) => stage_run(&a, Some(Stage::Analyze)),
        Command::Report(a) => stage_run(&a, Some(Stage::Report)),
        Command::Physics(a) => physics(&a),
        Command::DefaultConfig { seed, duration } => {
            print!("{}", RunConfig::new(Seed(seed), duration).to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QPBURST_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 2: bad input or configuration, 3: failure while running.
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 3 })
        }
    }
}
