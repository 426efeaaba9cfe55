//! Discrete-time filter over the five-variable model.
//!
//! Every probe segment goes through the same cycle:
//! interact (`S`) -> decay (`L`, `M`) -> read `x_ph` -> attach a fresh
//! segment -> shrink the remaining polarization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::gaussian::{GaussianError, GaussianState, MeasurementSpec};
use crate::model::{
    build_step_matrices, fresh_probe_segment, initial_state, truth_state, EffectiveCouplings, ModelError, StepMatrices,
    ATOM_AND_FIELD, B_FIELD, MAX_DECAY_PER_STEP, P_AT, X_AT, X_PH,
};

/// Atomic quadrature consumed by the terminal readout.
pub const SG_VARIABLE: &str = "p_at";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// Where the measurement record comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthMode {
    /// Outcomes drawn from the filter's own predictive distribution.
    InnovationDraw,
    /// Outcomes drawn from a simulated physical system with a definite field.
    GroundTruth(TrueField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrueField {
    /// Drawn once per trajectory from the prior.
    FromPrior,
    /// Fixed value in tesla.
    Fixed(f64),
}

/// Times at which a run is recorded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeGrid {
    /// `points` log-spaced times from `t_min` to `t_final`, snapped to whole
    /// steps.
    LogSpaced {
        t_min: f64,
        points: usize,
    },
    EveryStep,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::LogSpaced {
            t_min: 1e-6,
            points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub couplings: EffectiveCouplings,
    /// Probe segment duration (s).
    pub tau: f64,
    pub t_final: f64,
    pub decay: bool,
    pub squeezing: f64,
    /// Prior width of the field (T).
    pub prior_width: f64,
    /// Prior mean of the field (T).
    pub prior_mean: f64,
    /// Time of an optional destructive `p_at` readout.
    pub sg_time: Option<f64>,
    pub truth: TruthMode,
    pub seed: u64,
    pub grid: TimeGrid,
}

impl FilterConfig {
    /// Noiseless coherent probing for 10 ms at `tau = 1e-8` s.
    pub fn new(couplings: EffectiveCouplings, prior_width: f64) -> Self {
        Self {
            couplings,
            tau: 1e-8,
            t_final: 1e-2,
            decay: false,
            squeezing: 1.0,
            prior_width,
            prior_mean: 0.0,
            sg_time: None,
            truth: TruthMode::GroundTruth(TrueField::FromPrior),
            seed: 0,
            grid: TimeGrid::default(),
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |msg: String| Err(FilterError::Config(msg));
        if !(self.tau > 0.0 && self.tau < self.t_final && self.t_final.is_finite()) {
            return bad(format!(
                "need 0 < tau < t_final, got tau = {}, t_final = {}",
                self.tau, self.t_final
            ));
        }
        if self.decay && self.couplings.eta * self.tau > MAX_DECAY_PER_STEP {
            return bad(format!(
                "eta * tau = {} exceeds {MAX_DECAY_PER_STEP}",
                self.couplings.eta * self.tau
            ));
        }
        if self.prior_width.is_nan() || self.prior_width <= 0.0 {
            return bad(format!("prior width must be positive, got {}", self.prior_width));
        }
        if self.squeezing.is_nan() || self.squeezing < 1e-6 {
            return bad(format!("squeezing must be at least 1e-6, got {}", self.squeezing));
        }
        if let Some(t) = self.sg_time {
            if !(t > 0.0 && t <= self.t_final) {
                return bad(format!("sg_time must lie in (0, t_final], got {t}"));
            }
        }
        if let TimeGrid::LogSpaced { t_min, points } = self.grid {
            if !(t_min > 0.0 && t_min <= self.t_final) || points == 0 {
                return bad(format!("bad time grid: t_min = {t_min}, points = {points}"));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.tau).round() as usize
    }

    /// Step indices (1-based step counts) at which the run is recorded.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        match self.grid {
            TimeGrid::EveryStep => (1..=n).collect(),
            TimeGrid::LogSpaced { t_min, points } => {
                let (lo, hi) = (t_min.ln(), self.t_final.ln());
                let mut steps: Vec<usize> = (0..points)
                    .map(|i| {
                        let frac = if points == 1 {
                            1.0
                        } else {
                            i as f64 / (points - 1) as f64
                        };
                        let t = (lo + frac * (hi - lo)).exp();
                        ((t / self.tau).round() as usize).clamp(1, n)
                    })
                    .collect();
                steps.dedup();
                steps
            }
        }
    }

    fn sg_step(&self) -> Option<usize> {
        self.sg_time
            .map(|t| ((t / self.tau).round() as usize).clamp(1, self.n_steps()))
    }
}

/// Shared per-segment mechanics.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    couplings: EffectiveCouplings,
    tau: f64,
    decay: bool,
    probe: GaussianState,
    pub(crate) jx_fraction: f64,
}

impl Stepper {
    pub(crate) fn new(config: &FilterConfig) -> Result<Self, FilterError> {
        Ok(Self {
            couplings: config.couplings,
            tau: config.tau,
            decay: config.decay,
            probe: fresh_probe_segment(config.squeezing)?,
            jx_fraction: 1.0,
        })
    }

    pub(crate) fn matrices(&self) -> Result<StepMatrices, FilterError> {
        Ok(build_step_matrices(
            &self.couplings,
            self.tau,
            self.jx_fraction,
            self.decay,
        )?)
    }

    /// Interaction followed by decay.
    pub(crate) fn predict(state: &GaussianState, m: &StepMatrices) -> Result<GaussianState, FilterError> {
        let out = state.linear_transform(&m.s)?;
        if m.decay_enabled() {
            Ok(out.add_noise(&m.l, &m.m, m.noise_prefactor)?)
        } else {
            Ok(out)
        }
    }

    /// Reads `x_ph` and attaches the next probe segment.
    pub(crate) fn measure(&self, predicted: &GaussianState, outcome: f64) -> Result<(GaussianState, f64), FilterError> {
        let (post, innovation) =
            predicted.condition_on_quadrature(&ATOM_AND_FIELD, MeasurementSpec::new(0), outcome)?;
        Ok((post.direct_sum(&self.probe), innovation))
    }

    pub(crate) fn advance(&mut self, m: &StepMatrices) {
        self.jx_fraction *= 1.0 - m.eta_tau;
    }
}

/// Terminal destructive readout of the atomic population difference
/// (`J_z`, the `p_at` quadrature), which carries the accumulated field
/// information. Keeps every other variable. A state whose `p_at` was already
/// read out is returned unchanged.
pub fn stern_gerlach_update(state: &GaussianState) -> Result<GaussianState, FilterError> {
    match state.index_of(SG_VARIABLE) {
        None => Ok(state.clone()),
        Some(p) => {
            let mean_p = state.mean()[p];
            Ok(stern_gerlach_measure(state, mean_p)?.0)
        }
    }
}

/// [`stern_gerlach_update`] with an explicit outcome. Returns the innovation,
/// which is zero when the readout already happened.
pub fn stern_gerlach_measure(state: &GaussianState, outcome: f64) -> Result<(GaussianState, f64), FilterError> {
    let Some(p) = state.index_of(SG_VARIABLE) else {
        return Ok((state.clone(), 0.0));
    };
    let retained: Vec<usize> = (0..state.dim()).filter(|&i| i != p).collect();
    Ok(state.condition_on_quadrature(&retained, MeasurementSpec::new(0), outcome)?)
}

/// Increment of the field estimate driven by a Wiener increment `dw`:
/// `sqrt(2) kappa cov(B, p_at) dW`.
pub fn mean_increment_sde(cov_b_pat: f64, kappa: f64, dw: f64) -> f64 {
    std::f64::consts::SQRT_2 * kappa * cov_b_pat * dw
}

/// Field variance after a terminal readout at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgPoint {
    pub t: f64,
    pub mean_b: f64,
    pub var_b: f64,
}

/// Deterministic covariance track.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    pub times: Vec<f64>,
    /// `dB^2` (T^2).
    pub var_b: Vec<f64>,
    pub cov_b_pat: Vec<f64>,
    /// `x_at` variance, dimensionless.
    pub var_x_at: Vec<f64>,
    pub jx_fraction: Vec<f64>,
    pub sg: Option<SgPoint>,
}

pub fn propagate_covariance(config: &FilterConfig) -> Result<VarianceCurve, FilterError> {
    config.validate()?;
    let record = config.record_steps();
    let sg_step = config.sg_step();
    let mut stepper = Stepper::new(config)?;
    let mut state = initial_state(config.prior_width, config.squeezing)?;
    state.set_mean(B_FIELD, config.prior_mean);

    let mut curve = VarianceCurve {
        times: Vec::with_capacity(record.len()),
        var_b: Vec::with_capacity(record.len()),
        cov_b_pat: Vec::with_capacity(record.len()),
        var_x_at: Vec::with_capacity(record.len()),
        jx_fraction: Vec::with_capacity(record.len()),
        sg: None,
    };
    let mut next = record.iter().peekable();
    for step in 1..=config.n_steps() {
        let m = stepper.matrices()?;
        let predicted = Stepper::predict(&state, &m)?;
        let outcome = predicted.mean()[X_PH];
        state = stepper.measure(&predicted, outcome)?.0;
        stepper.advance(&m);

        if sg_step == Some(step) {
            let after = stern_gerlach_update(&state)?;
            curve.sg = Some(SgPoint {
                t: step as f64 * config.tau,
                mean_b: after.mean()[B_FIELD],
                var_b: after.variance(B_FIELD),
            });
        }
        if next.peek() == Some(&&step) {
            next.next();
            curve.times.push(step as f64 * config.tau);
            curve.var_b.push(state.variance(B_FIELD));
            curve.cov_b_pat.push(state.covariance(B_FIELD, P_AT));
            curve.var_x_at.push(state.variance(X_AT));
            curve.jx_fraction.push(stepper.jx_fraction);
        }
    }
    Ok(curve)
}

/// One stochastic run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Conditional mean of the field (T).
    pub mean_b: Vec<f64>,
    /// Conditional variance of the field (T^2).
    pub var_b: Vec<f64>,
    pub cov_b_pat: Vec<f64>,
    pub jx_fraction: Vec<f64>,
    /// Innovation of every probe segment, not only the recorded ones.
    pub innovations: Vec<f64>,
    pub b_true: Option<f64>,
    pub sg: Option<SgPoint>,
}

/// RNG stream for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the true field for a ground-truth run. Consumes one normal deviate
/// when sampling from the prior.
pub(crate) fn draw_true_field<R: Rng + ?Sized>(config: &FilterConfig, rng: &mut R) -> Option<f64> {
    match config.truth {
        TruthMode::InnovationDraw => None,
        TruthMode::GroundTruth(TrueField::Fixed(b)) => Some(b),
        TruthMode::GroundTruth(TrueField::FromPrior) => {
            let z: f64 = rng.sample(StandardNormal);
            Some(config.prior_mean + config.prior_width * z)
        }
    }
}

/// Runs the filter against a stochastic measurement record.
///
/// With [`TruthMode::GroundTruth`] a second Gaussian state with a sharp field
/// stands in for the physical system: it sees the same matrices, produces the
/// outcomes, and is itself conditioned on them.
pub fn run_trajectory<R: Rng + ?Sized>(config: &FilterConfig, rng: &mut R) -> Result<TrajectoryRecord, FilterError> {
    config.validate()?;
    let record = config.record_steps();
    let sg_step = config.sg_step();
    let mut stepper = Stepper::new(config)?;
    let mut filter = initial_state(config.prior_width, config.squeezing)?;
    filter.set_mean(B_FIELD, config.prior_mean);

    let b_true = draw_true_field(config, rng);
    let mut truth = match b_true {
        Some(b) => Some(truth_state(b, config.squeezing)?),
        None => None,
    };

    let n = config.n_steps();
    let mut out = TrajectoryRecord {
        times: Vec::with_capacity(record.len()),
        mean_b: Vec::with_capacity(record.len()),
        var_b: Vec::with_capacity(record.len()),
        cov_b_pat: Vec::with_capacity(record.len()),
        jx_fraction: Vec::with_capacity(record.len()),
        innovations: Vec::with_capacity(n),
        b_true,
        sg: None,
    };
    let mut next = record.iter().peekable();
    for step in 1..=n {
        let m = stepper.matrices()?;
        let predicted = Stepper::predict(&filter, &m)?;
        let outcome = match truth.as_mut() {
            Some(t) => {
                let t_pred = Stepper::predict(t, &m)?;
                let y = t_pred.sample_outcome(X_PH, rng)?;
                *t = stepper.measure(&t_pred, y)?.0;
                y
            }
            None => predicted.sample_outcome(X_PH, rng)?,
        };
        let (post, innovation) = stepper.measure(&predicted, outcome)?;
        filter = post;
        out.innovations.push(innovation);
        stepper.advance(&m);

        if sg_step == Some(step) {
            let y = match truth.as_ref() {
                Some(t) => t.sample_outcome(P_AT, rng)?,
                None => filter.sample_outcome(P_AT, rng)?,
            };
            let (after, _) = stern_gerlach_measure(&filter, y)?;
            out.sg = Some(SgPoint {
                t: step as f64 * config.tau,
                mean_b: after.mean()[B_FIELD],
                var_b: after.variance(B_FIELD),
            });
        }
        if next.peek() == Some(&&step) {
            next.next();
            out.times.push(step as f64 * config.tau);
            out.mean_b.push(filter.mean()[B_FIELD]);
            out.var_b.push(filter.variance(B_FIELD));
            out.cov_b_pat.push(filter.covariance(B_FIELD, P_AT));
            out.jx_fraction.push(stepper.jx_fraction);
        }
    }
    Ok(out)
}
