//! Monte Carlo ensembles of filter trajectories.
//!
//! Covariances and gains do not depend on measurement outcomes, so they are
//! computed once per block of probe segments and shared by every trajectory.
//! Each trajectory then only carries its mean vectors and its own RNG
//! stream. Results depend on `(config, seed)` alone: trajectories never share
//! state and statistics are reduced in trajectory order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::filter::{draw_true_field, trajectory_rng, FilterConfig, FilterError, Stepper, TruthMode};
use crate::gaussian::{GaussianState, MeasurementSpec};
use crate::model::{initial_state, truth_state, ATOM_AND_FIELD, B_FIELD, P_AT, X_AT, X_PH};

const BLOCK_STEPS: usize = 1 << 14;

/// What one `x_ph` readout does to a mean vector.
#[derive(Debug, Clone, Copy)]
struct Readout {
    /// Predicted `gamma` of `x_ph`.
    gamma_x: f64,
    /// Gain onto `(B, x_at, p_at)`; zero when the pseudoinverse vanishes.
    gain: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct ScheduledStep {
    kappa_tau: f64,
    mu_tau: f64,
    /// Polarization survival factor, 1 without decay.
    survive: f64,
    filter: Readout,
    truth: Option<Readout>,
    record: bool,
}

fn readout(predicted: &GaussianState) -> Result<Readout, FilterError> {
    let blocks = predicted.decompose(&ATOM_AND_FIELD)?;
    let gain = blocks
        .gain(MeasurementSpec::new(0))?
        .map(|g| [g[0], g[1], g[2]])
        .unwrap_or([0.0; 3]);
    Ok(Readout {
        gamma_x: predicted.cov()[(X_PH, X_PH)],
        gain,
    })
}

/// Deterministic covariance tracks of the filter and, in ground-truth mode,
/// of the simulated physical system.
struct Tracks {
    stepper: Stepper,
    filter: GaussianState,
    truth: Option<GaussianState>,
    step: usize,
    n_steps: usize,
    record: Vec<usize>,
    next_record: usize,
    var_b: Vec<f64>,
}

impl Tracks {
    fn new(config: &FilterConfig) -> Result<Self, FilterError> {
        let truth = match config.truth {
            TruthMode::InnovationDraw => None,
            TruthMode::GroundTruth(_) => Some(truth_state(0.0, config.squeezing)?),
        };
        Ok(Self {
            stepper: Stepper::new(config)?,
            filter: initial_state(config.prior_width, config.squeezing)?,
            truth,
            step: 0,
            n_steps: config.n_steps(),
            record: config.record_steps(),
            next_record: 0,
            var_b: Vec::new(),
        })
    }

    fn next_block(&mut self, len: usize) -> Result<Vec<ScheduledStep>, FilterError> {
        let mut block = Vec::with_capacity(len);
        while block.len() < len && self.step < self.n_steps {
            self.step += 1;
            let m = self.stepper.matrices()?;
            let predicted = Stepper::predict(&self.filter, &m)?;
            let filter = readout(&predicted)?;
            let y = predicted.mean()[X_PH];
            self.filter = self.stepper.measure(&predicted, y)?.0;
            let truth = match self.truth.as_mut() {
                Some(t) => {
                    let predicted = Stepper::predict(t, &m)?;
                    let r = readout(&predicted)?;
                    let y = predicted.mean()[X_PH];
                    *t = self.stepper.measure(&predicted, y)?.0;
                    Some(r)
                }
                None => None,
            };
            self.stepper.advance(&m);
            let record = self.record.get(self.next_record) == Some(&self.step);
            if record {
                self.next_record += 1;
                self.var_b.push(self.filter.variance(B_FIELD));
            }
            block.push(ScheduledStep {
                kappa_tau: m.kappa_tau,
                mu_tau: m.mu_tau,
                survive: m.l[X_AT],
                filter,
                truth,
                record,
            });
        }
        Ok(block)
    }
}

/// Mean vectors of one trajectory.
struct Walker {
    rng: ChaCha8Rng,
    filter: [f64; 3],
    truth: Option<[f64; 3]>,
    b_true: Option<f64>,
    mean_b: Vec<f64>,
}

/// Interaction and decay applied to `(B, x_at, p_at)` with a fresh probe
/// (zero photon means). Returns the predicted `x_ph` mean.
fn predict_mean(m: &mut [f64; 3], s: &ScheduledStep) -> f64 {
    let x_ph = s.kappa_tau * m[P_AT];
    m[P_AT] += -s.mu_tau * m[B_FIELD];
    m[X_AT] *= s.survive;
    m[P_AT] *= s.survive;
    x_ph
}

fn sample(mean: f64, gamma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let variance = 0.5 * gamma;
    if variance <= 0.0 {
        return mean;
    }
    let z: f64 = rng.sample(StandardNormal);
    mean + variance.sqrt() * z
}

fn apply_gain(m: &mut [f64; 3], gain: &[f64; 3], innovation: f64) {
    for (v, g) in m.iter_mut().zip(gain) {
        *v += g * innovation;
    }
}

impl Walker {
    fn new(config: &FilterConfig, mut rng: ChaCha8Rng, record_len: usize) -> Self {
        let b_true = draw_true_field(config, &mut rng);
        Self {
            rng,
            filter: [config.prior_mean, 0.0, 0.0],
            truth: b_true.map(|b| [b, 0.0, 0.0]),
            b_true,
            mean_b: Vec::with_capacity(record_len),
        }
    }

    fn replay(&mut self, block: &[ScheduledStep]) {
        for s in block {
            let x_filter = predict_mean(&mut self.filter, s);
            let outcome = match (self.truth.as_mut(), s.truth) {
                (Some(t), Some(r)) => {
                    let x_truth = predict_mean(t, s);
                    let y = sample(x_truth, r.gamma_x, &mut self.rng);
                    apply_gain(t, &r.gain, y - x_truth);
                    y
                }
                _ => sample(x_filter, s.filter.gamma_x, &mut self.rng),
            };
            apply_gain(&mut self.filter, &s.filter.gain, outcome - x_filter);
            if s.record {
                self.mean_b.push(self.filter[B_FIELD]);
            }
        }
    }
}

/// Cross-trajectory statistics at each recorded time. Field quantities in
/// tesla, variances in T^2.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    /// `dB0^2`.
    pub prior_var: f64,
    pub prior_mean: f64,
    pub times: Vec<f64>,
    /// Conditional variance from the covariance track.
    pub var_b: Vec<f64>,
    /// Ensemble average of the estimate `<B>`.
    pub mean_of_mean: Vec<f64>,
    /// Spread of `<B>` across trajectories (unbiased).
    pub var_of_mean: Vec<f64>,
    /// Mean squared error against the true field (ground-truth mode).
    pub mse: Option<Vec<f64>>,
    /// `dB0^2 - (dB^2 + Var <B>)`, zero in expectation.
    pub ltv_residual: Vec<f64>,
    pub se_mean: Vec<f64>,
    /// Standard error of `var_of_mean` (and of the residual).
    pub se_var: Vec<f64>,
    pub se_mse: Option<Vec<f64>>,
    /// True field of every trajectory, in trajectory order.
    pub b_true: Option<Vec<f64>>,
}

impl EnsembleStats {
    /// Ensemble mean within `k` standard errors of the prior mean at every
    /// recorded time.
    pub fn martingale_holds(&self, k: f64) -> bool {
        self.mean_of_mean
            .iter()
            .zip(&self.se_mean)
            .all(|(m, se)| (m - self.prior_mean).abs() <= k * se + 1e-12 * self.prior_var.sqrt())
    }

    /// Law-of-total-variance residual within `k` standard errors of zero at
    /// every recorded time. The absolute slack covers rounding in the
    /// subtraction of nearly equal variances.
    pub fn total_variance_holds(&self, k: f64) -> bool {
        self.ltv_residual
            .iter()
            .zip(&self.se_var)
            .all(|(r, se)| r.abs() <= k * se + 1e-12 * self.prior_var)
    }

    /// Index of the recorded time closest to `t`.
    pub fn index_near(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
    }
}

/// Runs `n_traj` trajectories with streams derived from `config.seed`.
/// `threads = None` uses the global rayon pool.
pub fn run_ensemble(
    config: &FilterConfig,
    n_traj: usize,
    threads: Option<usize>,
) -> Result<EnsembleStats, FilterError> {
    run_ensemble_with(config, n_traj, threads, |i| trajectory_rng(config.seed, i as u64))
}

pub(crate) fn run_ensemble_with<F>(
    config: &FilterConfig,
    n_traj: usize,
    threads: Option<usize>,
    rng_for: F,
) -> Result<EnsembleStats, FilterError>
where
    F: Fn(usize) -> ChaCha8Rng,
{
    config.validate()?;
    if n_traj < 2 {
        return Err(FilterError::Config(format!(
            "an ensemble needs at least 2 trajectories, got {n_traj}"
        )));
    }
    let pool = match threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| FilterError::Config(e.to_string()))?,
        ),
        None => None,
    };

    let mut tracks = Tracks::new(config)?;
    let record_len = tracks.record.len();
    let mut walkers: Vec<Walker> = (0..n_traj)
        .map(|i| Walker::new(config, rng_for(i), record_len))
        .collect();
    loop {
        let block = tracks.next_block(BLOCK_STEPS)?;
        if block.is_empty() {
            break;
        }
        let replay = |walkers: &mut Vec<Walker>| walkers.par_iter_mut().for_each(|w| w.replay(&block));
        match &pool {
            Some(p) => p.install(|| replay(&mut walkers)),
            None => replay(&mut walkers),
        }
    }

    let times: Vec<f64> = tracks.record.iter().map(|&k| k as f64 * config.tau).collect();
    Ok(summarize(config, times, tracks.var_b, &walkers))
}

fn summarize(config: &FilterConfig, times: Vec<f64>, var_b: Vec<f64>, walkers: &[Walker]) -> EnsembleStats {
    let n = walkers.len() as f64;
    let prior_var = config.prior_width * config.prior_width;
    let ground_truth = walkers.first().is_some_and(|w| w.b_true.is_some());
    let mut stats = EnsembleStats {
        n_traj: walkers.len(),
        prior_var,
        prior_mean: config.prior_mean,
        times,
        var_b,
        mean_of_mean: Vec::new(),
        var_of_mean: Vec::new(),
        mse: ground_truth.then(Vec::new),
        ltv_residual: Vec::new(),
        se_mean: Vec::new(),
        se_var: Vec::new(),
        se_mse: ground_truth.then(Vec::new),
        b_true: ground_truth.then(|| walkers.iter().map(|w| w.b_true.unwrap_or(0.0)).collect()),
    };
    for k in 0..stats.times.len() {
        let mean = walkers.iter().map(|w| w.mean_b[k]).sum::<f64>() / n;
        let var = walkers.iter().map(|w| (w.mean_b[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        stats.mean_of_mean.push(mean);
        stats.var_of_mean.push(var);
        stats.se_mean.push((var / n).sqrt());
        // sampling error of a normal-sample variance
        stats.se_var.push(var * (2.0 / (n - 1.0)).sqrt());
        stats.ltv_residual.push(prior_var - (stats.var_b[k] + var));
        if let (Some(mse), Some(se_mse)) = (stats.mse.as_mut(), stats.se_mse.as_mut()) {
            let sq: Vec<f64> = walkers
                .iter()
                .map(|w| (w.mean_b[k] - w.b_true.unwrap_or(0.0)).powi(2))
                .collect();
            let m = sq.iter().sum::<f64>() / n;
            let v = sq.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0);
            mse.push(m);
            se_mse.push((v / n).sqrt());
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{run_trajectory, TrueField};
    use crate::model::{derive_couplings, PhysicalParams};

    const DB0: f64 = 1e-12;

    fn short_config() -> FilterConfig {
        let mut c = FilterConfig::new(derive_couplings(&PhysicalParams::default()).unwrap(), DB0);
        c.t_final = 2e-4;
        c.tau = 2e-8;
        c.seed = 42;
        c
    }

    #[test]
    fn replay_reproduces_reference_trajectories() {
        for (truth, decay, r) in [
            (TruthMode::InnovationDraw, false, 1.0),
            (TruthMode::GroundTruth(TrueField::FromPrior), true, 3.0),
            (TruthMode::GroundTruth(TrueField::Fixed(0.4e-12)), false, 1.0),
        ] {
            let mut c = short_config();
            c.truth = truth;
            c.decay = decay;
            c.squeezing = r;
            let stats = run_ensemble(&c, 3, Some(1)).unwrap();
            let reference: Vec<_> = (0..3)
                .map(|i| run_trajectory(&c, &mut trajectory_rng(c.seed, i)).unwrap())
                .collect();
            assert_eq!(stats.var_b, reference[0].var_b);
            for k in 0..stats.times.len() {
                let mean = reference.iter().map(|t| t.mean_b[k]).sum::<f64>() / 3.0;
                assert!((stats.mean_of_mean[k] - mean).abs() <= 1e-12 * DB0, "{truth:?} k={k}");
            }
            if let Some(b) = &stats.b_true {
                for (i, t) in reference.iter().enumerate() {
                    assert_eq!(Some(b[i]), t.b_true);
                }
            }
        }
    }

    #[test]
    fn identical_streams_have_no_spread() {
        let c = short_config();
        let stats = run_ensemble_with(&c, 2, Some(1), |_| trajectory_rng(9, 0)).unwrap();
        assert!(stats.var_of_mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = short_config();
        let one = run_ensemble(&c, 16, Some(1)).unwrap();
        let four = run_ensemble(&c, 16, Some(4)).unwrap();
        let global = run_ensemble(&c, 16, None).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, global);
    }

    #[test]
    fn tiny_ensembles_are_rejected() {
        assert!(matches!(
            run_ensemble(&short_config(), 1, None),
            Err(FilterError::Config(_))
        ));
    }

    #[test]
    fn innovation_ensemble_is_a_martingale() {
        let mut c = short_config();
        c.truth = TruthMode::InnovationDraw;
        c.prior_mean = 0.2e-12;
        let stats = run_ensemble(&c, 300, None).unwrap();
        assert!(stats.mse.is_none());
        assert!(stats.martingale_holds(3.0));
        assert!(stats.total_variance_holds(3.0));
    }
}
