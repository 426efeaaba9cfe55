//! Runtime check suite: numerical acceptance targets evaluated against the
//! closed forms and the independent oracles.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::run_ensemble;
use crate::filter::{propagate_covariance, FilterConfig, TrueField, TruthMode};
use crate::gaussian::{GaussianState, MeasurementSpec};
use crate::model::{derive_couplings, EffectiveCouplings, PhysicalParams};
use crate::oracles::{condition_via_precision, riccati_linearized};
use crate::riccati::{
    analytic_sg_variance, analytic_variance, asymptotic_variance, integrate_riccati, ReducedCovariance,
};

pub const KAPPA_SQ_TARGET: f64 = 1.83e6;
pub const MU_TARGET_PER_PT: f64 = 8.79e4;
pub const ETA_TARGET: f64 = 1.7577;
pub const COUPLING_REL_TOL: f64 = 0.01;
pub const ETA_REL_TOL: f64 = 0.001;
pub const FILTER_REL_TOL: f64 = 5e-3;
pub const RK4_REL_TOL: f64 = 1e-6;
pub const STEP_BUDGET: Duration = Duration::from_secs(60);
pub const ASYMPTOTE_REL_TOL: f64 = 0.01;
pub const ATOM_SCALING_REL_TOL: f64 = 0.03;
pub const SQUEEZING_REL_TOL: f64 = 0.02;
pub const SG_RATIO_REL_TOL: f64 = 0.02;
pub const SG_CLOSED_FORM_REL_TOL: f64 = 5e-3;
pub const DECAY_PLATEAU_MIN: f64 = 0.5;
pub const MSE_RATIO_RANGE: (f64, f64) = (0.85, 1.15);
pub const STANDARD_ERRORS: f64 = 3.0;
pub const ENSEMBLE_BUDGET: Duration = Duration::from_secs(300);
pub const CONDITIONING_TOL: f64 = 1e-12;
pub const LINEARIZATION_REL_TOL: f64 = 1e-8;

const PRIOR_WIDTH: f64 = 1e-12;
const LONG_TIME: f64 = 1e-2;
const RK4_DT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] criterion {} {}: {}", self.criterion, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Trajectories in the filter-consistency ensemble.
    pub ensemble_size: usize,
    /// Random instances in the conditioning comparison.
    pub conditioning_instances: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            ensemble_size: 500,
            conditioning_instances: 1000,
            seed: 0,
            threads: None,
        }
    }
}

fn check(criterion: u8, name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        criterion,
        name,
        passed,
        detail,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn default_couplings() -> EffectiveCouplings {
    derive_couplings(&PhysicalParams::default()).expect("default parameters are valid")
}

fn noiseless(couplings: EffectiveCouplings, r: f64) -> FilterConfig {
    let mut c = FilterConfig::new(couplings, PRIOR_WIDTH);
    c.squeezing = r;
    c
}

fn error_check(criterion: u8, name: &'static str, err: impl fmt::Display) -> Check {
    check(criterion, name, false, format!("error: {err}"))
}

pub fn parameter_derivation() -> Vec<Check> {
    let c = default_couplings();
    let (k2, mu, eta) = (c.kappa_sq(), c.mu_per_picotesla(), c.eta);
    vec![
        check(
            1,
            "kappa^2",
            rel(k2, KAPPA_SQ_TARGET) <= COUPLING_REL_TOL,
            format!("{k2:.5e} 1/s vs {KAPPA_SQ_TARGET:e}"),
        ),
        check(
            1,
            "mu",
            rel(mu, MU_TARGET_PER_PT) <= COUPLING_REL_TOL,
            format!("{mu:.5e} 1/(s pT) vs {MU_TARGET_PER_PT:e}"),
        ),
        check(
            1,
            "eta",
            rel(eta, ETA_TARGET) <= ETA_REL_TOL,
            format!("{eta:.6} 1/s vs {ETA_TARGET}"),
        ),
    ]
}

pub fn closed_form_agreement() -> Vec<Check> {
    let couplings = default_couplings();
    let mut out = Vec::new();
    for r in [1.0, 3.0] {
        let config = noiseless(couplings, r);
        let start = Instant::now();
        let curve = match propagate_covariance(&config) {
            Ok(c) => c,
            Err(e) => {
                out.push(error_check(2, "discrete filter", e));
                continue;
            }
        };
        let elapsed = start.elapsed();
        let worst = curve
            .times
            .iter()
            .zip(&curve.var_b)
            .map(|(&t, &v)| rel(v, analytic_variance(PRIOR_WIDTH, couplings.kappa, couplings.mu, r, t)))
            .fold(0.0, f64::max);
        out.push(check(
            2,
            "discrete filter",
            worst <= FILTER_REL_TOL,
            format!(
                "r = {r}: max relative deviation {worst:.3e} over {} points",
                curve.times.len()
            ),
        ));
        out.push(check(
            2,
            "runtime",
            elapsed <= STEP_BUDGET,
            format!("r = {r}: {} steps in {:.2} s", config.n_steps(), elapsed.as_secs_f64()),
        ));

        let times: Vec<f64> = (0..=40).map(|i| 1e-6 * 10f64.powf(i as f64 / 10.0)).collect();
        match integrate_riccati(ReducedCovariance::prior(PRIOR_WIDTH), &couplings, r, &times, RK4_DT) {
            Ok(samples) => {
                let worst = times
                    .iter()
                    .zip(&samples)
                    .map(|(&t, v)| {
                        rel(
                            v.var_b(),
                            analytic_variance(PRIOR_WIDTH, couplings.kappa, couplings.mu, r, t),
                        )
                    })
                    .fold(0.0, f64::max);
                out.push(check(
                    2,
                    "RK4 Riccati",
                    worst <= RK4_REL_TOL,
                    format!("r = {r}: max relative deviation {worst:.3e}"),
                ));
            }
            Err(e) => out.push(error_check(2, "RK4 Riccati", e)),
        }
    }
    out
}

pub fn asymptotic_scaling() -> Vec<Check> {
    let c = default_couplings();
    let exact = analytic_variance(PRIOR_WIDTH, c.kappa, c.mu, 1.0, LONG_TIME);
    let asym = asymptotic_variance(c.kappa, c.mu, 1.0, LONG_TIME);
    let mut doubled = PhysicalParams::default();
    doubled.atom_number *= 2.0;
    let c2 = derive_couplings(&doubled).expect("doubled atom number is valid");
    let ratio = analytic_variance(PRIOR_WIDTH, c2.kappa, c2.mu, 1.0, LONG_TIME) / exact;
    vec![
        check(
            3,
            "asymptote",
            rel(exact, asym) <= ASYMPTOTE_REL_TOL,
            format!(
                "dB^2(10 ms) = {:.4e} pT^2, 6/(k^2 mu^2 t^3) = {:.4e} pT^2",
                exact * 1e24,
                asym * 1e24
            ),
        ),
        check(
            3,
            "atom number",
            rel(ratio, 0.25) <= ATOM_SCALING_REL_TOL,
            format!("dB^2 ratio for 2 N_at: {ratio:.5}"),
        ),
    ]
}

pub fn squeezing_gain() -> Vec<Check> {
    let c = default_couplings();
    let analytic = analytic_variance(PRIOR_WIDTH, c.kappa, c.mu, 3.0, LONG_TIME)
        / analytic_variance(PRIOR_WIDTH, c.kappa, c.mu, 1.0, LONG_TIME);
    let mut out = vec![check(
        4,
        "closed form",
        rel(analytic, 1.0 / 3.0) <= SQUEEZING_REL_TOL,
        format!("r = 3 / r = 1 at 10 ms: {analytic:.5}"),
    )];
    let finals: Result<Vec<f64>, _> = [3.0, 1.0]
        .iter()
        .map(|&r| propagate_covariance(&noiseless(c, r)).map(|v| *v.var_b.last().expect("grid is non-empty")))
        .collect();
    match finals {
        Ok(v) => {
            let ratio = v[0] / v[1];
            out.push(check(
                4,
                "discrete filter",
                rel(ratio, 1.0 / 3.0) <= SQUEEZING_REL_TOL,
                format!("r = 3 / r = 1 at 10 ms: {ratio:.5}"),
            ));
        }
        Err(e) => out.push(error_check(4, "discrete filter", e)),
    }
    out
}

pub fn stern_gerlach_gain() -> Vec<Check> {
    let c = default_couplings();
    let mut out = Vec::new();
    for t in [1e-3, LONG_TIME] {
        let mut config = noiseless(c, 1.0);
        config.t_final = t;
        config.sg_time = Some(t);
        let curve = match propagate_covariance(&config) {
            Ok(curve) => curve,
            Err(e) => {
                out.push(error_check(5, "readout", e));
                continue;
            }
        };
        let sg = curve.sg.expect("readout scheduled inside the run").var_b;
        let before = *curve.var_b.last().expect("grid is non-empty");
        let ratio = sg / before;
        let closed = analytic_sg_variance(PRIOR_WIDTH, c.kappa, c.mu, t);
        out.push(check(
            5,
            "variance ratio",
            rel(ratio, 0.25) <= SG_RATIO_REL_TOL,
            format!("k^2 t = {:.0}: dB_SG^2 / dB^2 = {ratio:.5}", c.kappa_sq() * t),
        ));
        out.push(check(
            5,
            "closed form",
            rel(sg, closed) <= SG_CLOSED_FORM_REL_TOL,
            format!(
                "k^2 t = {:.0}: relative deviation {:.3e}",
                c.kappa_sq() * t,
                rel(sg, closed)
            ),
        ));
    }
    out
}

pub fn decay_behavior() -> Vec<Check> {
    let c = default_couplings();
    let mut noisy = noiseless(c, 1.0);
    noisy.decay = true;
    let (with, without) = match (propagate_covariance(&noisy), propagate_covariance(&noiseless(c, 1.0))) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return vec![error_check(6, "decay run", e)],
    };
    let monotone = with.var_b.windows(2).all(|w| w[1] <= w[0]);
    let above = with
        .times
        .iter()
        .zip(with.var_b.iter().zip(&without.var_b))
        .filter(|(&t, _)| t >= 1e-3)
        .all(|(_, (a, b))| a > b);
    let std_at = |curve: &crate::filter::VarianceCurve, t: f64| {
        let i = curve
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .expect("grid is non-empty");
        curve.var_b[i].sqrt()
    };
    let plateau = std_at(&with, 1e-2) / std_at(&with, 5e-3);
    let free = std_at(&without, 1e-2) / std_at(&without, 5e-3);
    vec![
        check(6, "monotone", monotone, format!("{} points", with.times.len())),
        check(6, "above noiseless", above, "t >= 1 ms".to_string()),
        check(
            6,
            "plateau",
            plateau >= DECAY_PLATEAU_MIN,
            format!("dB(10 ms)/dB(5 ms) = {plateau:.4} with decay, {free:.4} without"),
        ),
    ]
}

pub fn filter_consistency(options: &VerifyOptions) -> Vec<Check> {
    let mut config = noiseless(default_couplings(), 1.0);
    config.t_final = 1e-3;
    config.truth = TruthMode::GroundTruth(TrueField::FromPrior);
    config.seed = options.seed;
    let start = Instant::now();
    let stats = match run_ensemble(&config, options.ensemble_size, options.threads) {
        Ok(s) => s,
        Err(e) => return vec![error_check(7, "ensemble", e)],
    };
    let elapsed = start.elapsed();
    let i = stats.index_near(1e-3).expect("grid is non-empty");
    let mse = stats.mse.as_ref().expect("ground-truth run")[i];
    let ratio = mse / stats.var_b[i];
    let worst_ltv = stats
        .ltv_residual
        .iter()
        .zip(&stats.se_var)
        .map(|(r, se)| r.abs() / se)
        .fold(0.0, f64::max);
    let worst_mean = stats
        .mean_of_mean
        .iter()
        .zip(&stats.se_mean)
        .map(|(m, se)| (m - stats.prior_mean).abs() / se)
        .fold(0.0, f64::max);
    let (lo, hi) = MSE_RATIO_RANGE;
    vec![
        check(
            7,
            "MSE / dB^2",
            (lo..=hi).contains(&ratio),
            format!(
                "{} trajectories, t = {:.3e} s: {ratio:.4}",
                stats.n_traj, stats.times[i]
            ),
        ),
        check(
            7,
            "total variance",
            stats.total_variance_holds(STANDARD_ERRORS),
            format!("max |residual| = {worst_ltv:.2} standard errors"),
        ),
        check(
            7,
            "martingale",
            stats.martingale_holds(STANDARD_ERRORS),
            format!("max |mean - prior| = {worst_mean:.2} standard errors"),
        ),
        check(
            7,
            "runtime",
            elapsed <= ENSEMBLE_BUDGET,
            format!("{:.2} s", elapsed.as_secs_f64()),
        ),
    ]
}

/// Random Gaussian state of dimension 2..=5 with a well-conditioned
/// covariance `A A^T + 0.1 I`, and the number of retained variables.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> (GaussianState, usize) {
    let dim = rng.random_range(2..=5);
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    let mean = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    let labels: Vec<String> = (0..dim).map(|i| format!("y{i}")).collect();
    let state = GaussianState::new(mean, cov, labels).expect("dimensions agree");
    (state, rng.random_range(1..dim))
}

pub fn oracle_equivalence(options: &VerifyOptions) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..options.conditioning_instances {
        let (state, n_retained) = random_instance(&mut rng);
        let retained: Vec<usize> = (0..n_retained).collect();
        let measured = n_retained;
        let outcome = state.mean()[measured] + rng.random_range(-3.0..3.0);
        let spec = MeasurementSpec::new(0);
        let (post, _) = match state.condition_on_quadrature(&retained, spec, outcome) {
            Ok(p) => p,
            Err(e) => return vec![error_check(8, "conditioning", e)],
        };
        let (mean, gamma) = condition_via_precision(state.mean(), state.cov(), &retained, measured, outcome);
        let dm = (post.mean() - mean).amax();
        let dg = (post.cov() - gamma).amax();
        worst = worst.max(dm).max(dg);
    }
    let mut out = vec![check(
        8,
        "conditioning",
        worst <= CONDITIONING_TOL,
        format!(
            "{} instances, max deviation {worst:.3e}",
            options.conditioning_instances
        ),
    )];

    let c = default_couplings();
    let times: Vec<f64> = (0..=40).map(|i| 1e-6 * 10f64.powf(i as f64 / 10.0)).collect();
    let mut worst: f64 = 0.0;
    for r in [1.0, 3.0] {
        let v0 = ReducedCovariance::prior(PRIOR_WIDTH);
        match integrate_riccati(v0, &c, r, &times, RK4_DT) {
            Ok(samples) => {
                for (&t, v) in times.iter().zip(&samples) {
                    let w = riccati_linearized(&v0, r * c.kappa_sq(), c.mu, t);
                    worst = worst
                        .max(rel(v.var_b(), w.var_b()))
                        .max(rel(v.cov_b_pat(), w.cov_b_pat()));
                    worst = worst.max(rel(v.var_pat(), w.var_pat()));
                }
            }
            Err(e) => return vec![out.remove(0), error_check(8, "linearization", e)],
        }
    }
    out.push(check(
        8,
        "linearization",
        worst <= LINEARIZATION_REL_TOL,
        format!("max relative deviation from RK4 {worst:.3e}"),
    ));
    out
}

pub fn determinism(options: &VerifyOptions) -> Vec<Check> {
    let mut config = noiseless(default_couplings(), 1.0);
    config.t_final = 1e-4;
    config.seed = options.seed;
    let runs: Result<Vec<_>, _> = [Some(1), Some(2), Some(1), None]
        .iter()
        .map(|&threads| run_ensemble(&config, 16, threads))
        .collect();
    match runs {
        Ok(runs) => {
            let same = runs.windows(2).all(|w| bitwise_equal(&w[0], &w[1]));
            vec![check(
                9,
                "ensemble",
                same,
                "16 trajectories, 1, 2 and default threads".to_string(),
            )]
        }
        Err(e) => vec![error_check(9, "ensemble", e)],
    }
}

fn bitwise_equal(a: &crate::ensemble::EnsembleStats, b: &crate::ensemble::EnsembleStats) -> bool {
    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }
    let opt = |x: &Option<Vec<f64>>| x.as_deref().map(bits);
    bits(&a.times) == bits(&b.times)
        && bits(&a.var_b) == bits(&b.var_b)
        && bits(&a.mean_of_mean) == bits(&b.mean_of_mean)
        && bits(&a.var_of_mean) == bits(&b.var_of_mean)
        && bits(&a.ltv_residual) == bits(&b.ltv_residual)
        && opt(&a.mse) == opt(&b.mse)
        && opt(&a.b_true) == opt(&b.b_true)
}

/// Runs every check in criterion order.
pub fn run_all(options: &VerifyOptions) -> Vec<Check> {
    let mut out = parameter_derivation();
    out.extend(closed_form_agreement());
    out.extend(asymptotic_scaling());
    out.extend(squeezing_gain());
    out.extend(stern_gerlach_gain());
    out.extend(decay_behavior());
    out.extend(filter_consistency(options));
    out.extend(oracle_equivalence(options));
    out.extend(determinism(options));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_instances_are_valid_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (state, n) = random_instance(&mut rng);
            assert!(state.check_validity().min_eigenvalue > 0.0);
            assert!(n >= 1 && n < state.dim());
        }
    }

    #[test]
    fn check_lines_carry_the_criterion() {
        let c = check(4, "x", false, "y".into());
        assert_eq!(c.to_string(), "[FAIL] criterion 4 x: y");
    }

    #[test]
    fn fast_criteria_pass() {
        for c in parameter_derivation().into_iter().chain(asymptotic_scaling()) {
            assert!(c.passed, "{c}");
        }
    }
}
