//! `qbacktrack`: generate trees, run the estimation and search algorithms,
//! and check the corpus-wide invariants from the command line.
//!
//! Every subcommand is first turned into an [`ExperimentSpec`]; `--emit-spec`
//! prints that spec instead of running it, and `run <file>` replays one.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qbacktrack::algorithms::EstimateResConfig;
use qbacktrack::experiments::{
    run_experiment, Command, CorpusSpec, ExperimentSpec, Fault, OutputFormat, TreeSource,
    VerifyOptions,
};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\ncommit:  ",
    env!("QB_COMMIT"),
    "\ntarget:  ",
    env!("QB_TARGET"),
    "\nprofile: ",
    env!("QB_PROFILE"),
    "\nrustc:   ",
    env!("QB_RUSTC"),
);

#[derive(Parser)]
#[command(name = "qbacktrack", version, long_version = LONG_VERSION)]
#[command(about = "Exact simulation of quantum backtracking with multiple marked vertices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true, env = "QBACKTRACK_SEED", default_value_t = 0)]
    seed: u64,
    /// Repetitions (Monte Carlo trajectories for descent-sim).
    #[arg(long, global = true, env = "QBACKTRACK_TRIALS")]
    trials: Option<u64>,
    /// Failure probability δ₀ of the resistance estimator.
    #[arg(long, global = true, env = "QBACKTRACK_DELTA0")]
    delta0: Option<f64>,
    /// Repetition constant γ₁.
    #[arg(long, global = true, env = "QBACKTRACK_GAMMA1")]
    gamma1: Option<f64>,
    /// Amplitude-estimation precision γ₂.
    #[arg(long, global = true, env = "QBACKTRACK_GAMMA2")]
    gamma2: Option<f64>,
    /// Multiplier S of the η sweep.
    #[arg(long, global = true, env = "QBACKTRACK_STEP")]
    step: Option<f64>,
    /// Amplitude-estimation error parameter Δ.
    #[arg(long, global = true, env = "QBACKTRACK_BIG_DELTA")]
    big_delta: Option<f64>,
    /// Constant c_δ of the search precision.
    #[arg(long, global = true, env = "QBACKTRACK_DELTA_CONSTANT")]
    delta_constant: Option<f64>,
    /// Output format.
    #[arg(
        long,
        global = true,
        env = "QBACKTRACK_OUT",
        value_enum,
        default_value = "json"
    )]
    out: Format,
    /// Output file (stdout when absent).
    #[arg(long, global = true, env = "QBACKTRACK_OUTPUT")]
    output: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, env = "QBACKTRACK_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Print the experiment spec to stdout instead of running it.
    #[arg(long, global = true, env = "QBACKTRACK_EMIT_SPEC")]
    emit_spec: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct TreeArg {
    /// Tree JSON file, or `star:N:K`, `path:N[:unmarked]`, `random:SIZE:D:P:SEED`.
    #[arg(long, env = "QBACKTRACK_TREE", value_parser = parse_tree)]
    tree: TreeSource,
}

fn parse_tree(s: &str) -> Result<TreeSource, String> {
    TreeSource::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated tree as JSON.
    GenTree(TreeArg),
    /// Effective resistance per vertex, the κ assignment and the Laplacian cross-check.
    Resistance(TreeArg),
    /// Eigenphases of the walk operator and the root's spectral weights.
    Spectrum {
        #[command(flatten)]
        tree: TreeArg,
        /// Walk parameter η (default: the root resistance).
        #[arg(long, env = "QBACKTRACK_ETA")]
        eta: Option<f64>,
    },
    /// Estimate the effective resistance below a vertex.
    EstimateRes {
        #[command(flatten)]
        tree: TreeArg,
        #[arg(long, env = "QBACKTRACK_VERTEX", default_value_t = 0)]
        vertex: usize,
    },
    /// Search for one marked vertex.
    FindMarked(TreeArg),
    /// Search repeatedly, unmarking each vertex found.
    FindAll(TreeArg),
    /// Decide whether any vertex is marked.
    Detect(TreeArg),
    /// Exact and simulated hitting times of the descent chain against the log₂ bound.
    DescentSim(TreeArg),
    /// Walk queries of the doubling search on star(N, k) and the fitted slope in N.
    GroverScaling {
        #[arg(
            long,
            env = "QBACKTRACK_N_LIST",
            value_delimiter = ',',
            default_value = "64,128,256,512"
        )]
        n_list: Vec<usize>,
        #[arg(long, env = "QBACKTRACK_K", default_value_t = 4)]
        k: usize,
    },
    /// Run every invariant suite over a generated corpus; exits 1 on any failure.
    VerifyAll {
        #[arg(long, env = "QBACKTRACK_RANDOM_TREES", default_value_t = 500)]
        random_trees: usize,
        #[arg(long, env = "QBACKTRACK_MAX_SIZE", default_value_t = 500)]
        max_size: usize,
        /// Leave out the hand-built fixtures.
        #[arg(long, env = "QBACKTRACK_NO_FIXTURES")]
        no_fixtures: bool,
        #[arg(long, env = "QBACKTRACK_FAULT", value_enum)]
        fault: Option<FaultArg>,
    },
    /// Replay an experiment spec file.
    Run { spec: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    KappaPerturbation,
}

fn config(c: &Common) -> EstimateResConfig {
    let mut cfg = EstimateResConfig::default();
    if let Some(x) = c.delta0 {
        cfg.delta0 = x;
    }
    if let Some(x) = c.gamma1 {
        cfg.gamma1 = x;
    }
    if c.gamma2.is_some() {
        cfg.gamma2 = c.gamma2;
    }
    if let Some(x) = c.step {
        cfg.step = x;
    }
    if let Some(x) = c.big_delta {
        cfg.big_delta = x;
    }
    if let Some(x) = c.delta_constant {
        cfg.delta_constant = x;
    }
    cfg
}

fn build_spec(cli: Cli) -> Result<ExperimentSpec, Box<dyn std::error::Error>> {
    let c = &cli.common;
    let command = match cli.command {
        Cmd::Run { spec } => return Ok(serde_json::from_reader(File::open(spec)?)?),
        Cmd::GenTree(t) => Command::GenTree { tree: t.tree },
        Cmd::Resistance(t) => Command::Resistance { tree: t.tree },
        Cmd::Spectrum { tree, eta } => Command::Spectrum {
            tree: tree.tree,
            eta,
        },
        Cmd::EstimateRes { tree, vertex } => Command::EstimateRes {
            tree: tree.tree,
            vertex,
        },
        Cmd::FindMarked(t) => Command::FindMarked { tree: t.tree },
        Cmd::FindAll(t) => Command::FindAll { tree: t.tree },
        Cmd::Detect(t) => Command::Detect { tree: t.tree },
        Cmd::DescentSim(t) => Command::DescentSim { tree: t.tree },
        Cmd::GroverScaling { n_list, k } => Command::GroverScaling { n_list, k },
        Cmd::VerifyAll {
            random_trees,
            max_size,
            no_fixtures,
            fault,
        } => Command::VerifyAll {
            corpus: CorpusSpec {
                random_trees,
                max_size,
                fixtures: !no_fixtures,
                seed: c.seed,
                ..CorpusSpec::default()
            },
            options: VerifyOptions {
                fault: fault.map(|FaultArg::KappaPerturbation| Fault::KappaPerturbation),
                ..VerifyOptions::default()
            },
        },
    };
    let default_trials = match command {
        Command::DescentSim { .. } => 100_000,
        Command::GroverScaling { .. } => 20,
        _ => 1,
    };
    Ok(ExperimentSpec {
        command,
        config: config(c),
        seed: c.seed,
        trials: c.trials.unwrap_or(default_trials),
        format: match c.out {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        },
        output: c.output.clone(),
        jobs: c.jobs,
    })
}

fn sink(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    let emit = cli.common.emit_spec;
    let spec = build_spec(cli)?;
    if emit {
        let mut w = sink(&None)?;
        serde_json::to_writer_pretty(&mut w, &spec)?;
        writeln!(w)?;
        w.flush()?;
        return Ok(true);
    }
    let output = run_experiment(&spec)?;
    let mut w = sink(&spec.output)?;
    output.write(spec.format, &mut w)?;
    w.flush()?;
    Ok(output.passed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
