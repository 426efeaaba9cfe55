//! Command-line front end for the magnetometer filter: scenario parsing,
//! subcommand dispatch and CSV output.

pub mod config;

use std::io::{self, Write};

use gaussmag_core::model::constants::{BOHR_MAGNETON, HBAR, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};
use gaussmag_core::riccati::{analytic_sg_variance, analytic_variance};
use gaussmag_core::verify::{run_all, Check, VerifyOptions};
use gaussmag_core::{
    propagate_covariance, run_ensemble, run_trajectory, trajectory_rng, EffectiveCouplings, FilterError, ModelError,
    SgPoint, PICOTESLA,
};
use thiserror::Error;

pub use config::{parse_config, ConfigError, ParamSource, ScenarioConfig, TruthKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    DeriveParams,
    Variance,
    Trajectory,
    Ensemble,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::DeriveParams => "derive-params",
            Command::Variance => "variance",
            Command::Trajectory => "trajectory",
            Command::Ensemble => "ensemble",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

/// Result of a subcommand: whether every check held (always true outside
/// `verify`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub success: bool,
}

fn pt(tesla: f64) -> f64 {
    tesla / PICOTESLA
}

fn pt2(tesla_sq: f64) -> f64 {
    tesla_sq / (PICOTESLA * PICOTESLA)
}

fn write_header(
    out: &mut dyn Write,
    command: Command,
    config: &ScenarioConfig,
    c: &EffectiveCouplings,
) -> io::Result<()> {
    writeln!(out, "# gaussmag {VERSION}")?;
    writeln!(out, "# command: {}", command.name())?;
    writeln!(
        out,
        "# constants (CODATA 2018): hbar = {HBAR:e} J s, c = {SPEED_OF_LIGHT:e} m/s, epsilon0 = {VACUUM_PERMITTIVITY:e} F/m, mu_B = {BOHR_MAGNETON:e} J/T"
    )?;
    for (key, value) in config.echo() {
        writeln!(out, "# config: {key} = {value}")?;
    }
    writeln!(
        out,
        "# couplings: kappa_sq = {:e} 1/s, mu = {:e} 1/(s pT), eta = {:e} 1/s",
        c.kappa_sq(),
        c.mu_per_picotesla(),
        c.eta
    )
}

fn write_sg(out: &mut dyn Write, sg: &SgPoint, analytic: Option<f64>) -> io::Result<()> {
    write!(
        out,
        "# stern-gerlach: t_s = {:e}, B_mean_pT = {:e}, deltaB_pT = {:e}",
        sg.t,
        pt(sg.mean_b),
        pt(sg.var_b.sqrt())
    )?;
    if let Some(v) = analytic {
        write!(out, ", deltaB_analytic_pT = {:e}", pt(v.sqrt()))?;
    }
    writeln!(out)
}

/// Runs `command` and writes its output to `out`.
pub fn run(command: Command, config: &ScenarioConfig, out: &mut dyn Write) -> Result<Outcome, RunError> {
    let couplings = config.couplings()?;
    if command != Command::Verify {
        write_header(out, command, config, &couplings)?;
    }
    match command {
        Command::DeriveParams => {
            writeln!(out, "quantity,value,unit")?;
            writeln!(out, "kappa_sq,{:e},1/s", couplings.kappa_sq())?;
            writeln!(out, "mu,{:e},1/(s pT)", couplings.mu_per_picotesla())?;
            writeln!(out, "eta,{:e},1/s", couplings.eta)?;
        }
        Command::Variance => {
            let f = config.filter_config()?;
            let curve = propagate_covariance(&f)?;
            let (k, mu) = (couplings.kappa, couplings.mu);
            if let Some(sg) = &curve.sg {
                // the closed form covers coherent probing without decay only
                let analytic =
                    (!f.decay && f.squeezing == 1.0).then(|| analytic_sg_variance(f.prior_width, k, mu, sg.t));
                write_sg(out, sg, analytic)?;
            }
            writeln!(out, "t_s,deltaB_pT,deltaB_analytic_pT,jx_fraction")?;
            for i in 0..curve.times.len() {
                let t = curve.times[i];
                let analytic = analytic_variance(f.prior_width, k, mu, f.squeezing, t);
                writeln!(
                    out,
                    "{:e},{:e},{:e},{:e}",
                    t,
                    pt(curve.var_b[i].sqrt()),
                    pt(analytic.sqrt()),
                    curve.jx_fraction[i]
                )?;
            }
        }
        Command::Trajectory => {
            let f = config.filter_config()?;
            let traj = run_trajectory(&f, &mut trajectory_rng(f.seed, 0))?;
            if let Some(sg) = &traj.sg {
                write_sg(out, sg, None)?;
            }
            match traj.b_true {
                Some(b) => {
                    writeln!(out, "t_s,B_mean_pT,deltaB_pT,B_true_pT")?;
                    for i in 0..traj.times.len() {
                        writeln!(
                            out,
                            "{:e},{:e},{:e},{:e}",
                            traj.times[i],
                            pt(traj.mean_b[i]),
                            pt(traj.var_b[i].sqrt()),
                            pt(b)
                        )?;
                    }
                }
                None => {
                    writeln!(out, "t_s,B_mean_pT,deltaB_pT")?;
                    for i in 0..traj.times.len() {
                        writeln!(
                            out,
                            "{:e},{:e},{:e}",
                            traj.times[i],
                            pt(traj.mean_b[i]),
                            pt(traj.var_b[i].sqrt())
                        )?;
                    }
                }
            }
        }
        Command::Ensemble => {
            let f = config.filter_config()?;
            let stats = run_ensemble(&f, config.n, config.threads)?;
            writeln!(out, "t_s,mse_pT2,var_mean_pT2,deltaB2_pT2,ltv_residual_pT2")?;
            for i in 0..stats.times.len() {
                let mse = stats.mse.as_ref().map_or(f64::NAN, |m| m[i]);
                writeln!(
                    out,
                    "{:e},{:e},{:e},{:e},{:e}",
                    stats.times[i],
                    pt2(mse),
                    pt2(stats.var_of_mean[i]),
                    pt2(stats.var_b[i]),
                    pt2(stats.ltv_residual[i])
                )?;
            }
        }
        Command::Verify => {
            let options = VerifyOptions {
                ensemble_size: config.n.max(2),
                seed: config.seed,
                threads: config.threads,
                ..VerifyOptions::default()
            };
            let checks: Vec<Check> = run_all(&options);
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {failed} failed", checks.len())?;
            return Ok(Outcome { success: failed == 0 });
        }
    }
    Ok(Outcome { success: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(command: Command, text: &str) -> String {
        let config = parse_config(text, &[]).unwrap();
        let mut buf = Vec::new();
        run(command, &config, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_lists_constants_and_config() {
        let s = render(Command::DeriveParams, "");
        assert!(s.starts_with(&format!("# gaussmag {VERSION}\n# command: derive-params\n")));
        assert!(s.contains("hbar = 1.054571817e-34"));
        assert!(s.contains("# config: seed = 0\n"));
        assert!(s.contains("# config: atom_number = 2e12\n"));
        assert!(s.contains("\nkappa_sq,1.83"));
    }

    #[test]
    fn variance_rows_match_the_grid() {
        let s = render(
            Command::Variance,
            "t_final = 1e-4\npoints = 10\ndecay = off\nsg_time = 1e-4\n",
        );
        let rows: Vec<&str> = s.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "t_s,deltaB_pT,deltaB_analytic_pT,jx_fraction");
        assert_eq!(rows.len(), 11);
        assert!(s.contains("# stern-gerlach: t_s = 1e-4"));
        for row in &rows[1..] {
            let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
            assert!((v[1] / v[2] - 1.0).abs() < 5e-3, "{row}");
            assert_eq!(v[3], 1.0);
        }
    }

    #[test]
    fn trajectory_without_truth_omits_column() {
        let s = render(
            Command::Trajectory,
            "t_final = 1e-5\npoints = 3\ntruth_mode = innovation\n",
        );
        assert!(s.contains("\nt_s,B_mean_pT,deltaB_pT\n"));
        let s = render(Command::Trajectory, "t_final = 1e-5\npoints = 3\nb_true = 1e-13\n");
        assert!(s.contains(",1e-1\n"));
    }

    #[test]
    fn ensemble_in_innovation_mode_has_no_error_column() {
        let s = render(
            Command::Ensemble,
            "t_final = 1e-5\npoints = 3\nn = 3\ntruth_mode = innovation\n",
        );
        let last = s.lines().last().unwrap();
        assert_eq!(last.split(',').nth(1), Some("NaN"));
    }
}
