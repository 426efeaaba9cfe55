use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gaussmag_cli::{parse_config, run, Command};

#[derive(Parser)]
#[command(
    name = "gaussmag",
    version,
    about = "Gaussian-state filtering of a magnetic field measured by an atomic probe"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Probe segment duration (s).
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Length of the run (s).
    #[arg(long, global = true)]
    t_final: Option<f64>,
    /// Squeezing of the probe segments.
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Include spontaneous decay.
    #[arg(long, global = true, overrides_with = "no_decay")]
    decay: bool,
    #[arg(long, global = true)]
    no_decay: bool,
    /// Time of the terminal Stern-Gerlach readout (s).
    #[arg(long, global = true)]
    sg_time: Option<f64>,
    /// Trajectories in an ensemble.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Effective coupling kappa^2 (1/s).
    #[arg(long, global = true)]
    kappa_sq: Option<f64>,
    /// Effective coupling mu (1/(s T)).
    #[arg(long, global = true)]
    mu: Option<f64>,
    /// Decay rate eta (1/s).
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Worker threads for ensembles.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `ground-truth` or `innovation`.
    #[arg(long, global = true)]
    truth_mode: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Effective couplings from the physical parameters.
    DeriveParams,
    /// Deterministic field uncertainty as a function of time.
    Variance,
    /// One stochastic measurement record.
    Trajectory,
    /// Monte Carlo statistics over many records.
    Ensemble,
    /// Numerical checks against closed forms and reference computations.
    Verify,
}

impl Cli {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("tau", self.tau.map(|v| v.to_string()));
        put("t_final", self.t_final.map(|v| v.to_string()));
        put("r", self.r.map(|v| v.to_string()));
        put("sg_time", self.sg_time.map(|v| v.to_string()));
        put("n", self.n.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("kappa_sq", self.kappa_sq.map(|v| v.to_string()));
        put("mu", self.mu.map(|v| v.to_string()));
        put("eta", self.eta.map(|v| v.to_string()));
        put("threads", self.threads.map(|v| v.to_string()));
        put("truth_mode", self.truth_mode.clone());
        if self.decay {
            put("decay", Some("true".into()));
        } else if self.no_decay {
            put("decay", Some("false".into()));
        }
        o
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let config = parse_config(&text, &cli.overrides()).with_context(|| match &cli.config {
        Some(path) => format!("in {}", path.display()),
        None => "in command-line options".to_string(),
    })?;
    let command = match cli.command {
        Cmd::DeriveParams => Command::DeriveParams,
        Cmd::Variance => Command::Variance,
        Cmd::Trajectory => Command::Trajectory,
        Cmd::Ensemble => Command::Ensemble,
        Cmd::Verify => Command::Verify,
    };
    let mut out: Box<dyn Write> = match &config.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let outcome = run(command, &config, &mut out)?;
    out.flush()?;
    Ok(outcome.success)
}
