//! Continuous-time covariance of the field and the atomic `p_at` quadrature.
//!
//! In the limit of short probe segments the conditioned `(B, p_at)` block
//! obeys `V' = -D V - V D^T - V E V` with `D = [[0, 0], [mu, 0]]` and
//! `E = diag(0, r kappa^2)`. `x_at` never feeds back into this block, so the
//! 2x2 system is closed.

use nalgebra::Matrix2;
use thiserror::Error;

use crate::model::EffectiveCouplings;

/// Largest accepted `r kappa^2 dt` for the RK4 integrator.
pub const MAX_STIFFNESS_STEP: f64 = 1e-2;
/// PSD slack, relative to the diagonal scale.
const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("time step {dt} too large: r kappa^2 dt = {stiffness} exceeds {MAX_STIFFNESS_STEP}")]
    StepTooLarge { dt: f64, stiffness: f64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("sample times must be non-negative and ascending")]
    UnorderedTimes,
    #[error("covariance lost positive semidefiniteness at t = {t}")]
    LostPositivity { t: f64 },
}

/// Reduced covariance of `(B, p_at)` in the gamma convention:
/// `[[2 dB^2, 2 cov(B, p_at)], [., 2 dp_at^2]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedCovariance(Matrix2<f64>);

impl ReducedCovariance {
    pub fn from_gamma(gamma: Matrix2<f64>) -> Self {
        Self(0.5 * (gamma + gamma.transpose()))
    }

    /// Field prior of width `prior_width` and a vacuum `p_at`.
    pub fn prior(prior_width: f64) -> Self {
        Self(Matrix2::new(2.0 * prior_width * prior_width, 0.0, 0.0, 1.0))
    }

    pub fn gamma(&self) -> Matrix2<f64> {
        self.0
    }

    /// `dB^2`.
    pub fn var_b(&self) -> f64 {
        0.5 * self.0[(0, 0)]
    }

    /// Classical covariance of `B` and `p_at`.
    pub fn cov_b_pat(&self) -> f64 {
        0.5 * self.0[(0, 1)]
    }

    pub fn var_pat(&self) -> f64 {
        0.5 * self.0[(1, 1)]
    }

    fn is_psd(&self) -> bool {
        let v = self.0;
        let scale = v[(0, 0)].abs() * v[(1, 1)].abs();
        v[(0, 0)] >= -PSD_TOLERANCE * v[(0, 0)].abs().max(f64::MIN_POSITIVE)
            && v[(1, 1)] >= -PSD_TOLERANCE
            && v.determinant() >= -PSD_TOLERANCE * scale
    }
}

/// Drift matrix `D` coupling the field into `p_at`.
pub fn drift_matrix(mu: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 0.0, mu, 0.0)
}

/// Measurement matrix `E = diag(0, r kappa^2)`.
pub fn measurement_matrix(kappa_sq_eff: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 0.0, 0.0, kappa_sq_eff)
}

/// `-D V - V D^T - V E V`.
pub fn riccati_rhs(v: &Matrix2<f64>, d: &Matrix2<f64>, e: &Matrix2<f64>) -> Matrix2<f64> {
    -d * v - v * d.transpose() - v * e * v
}

fn rk4_step(v: &Matrix2<f64>, d: &Matrix2<f64>, e: &Matrix2<f64>, h: f64) -> Matrix2<f64> {
    let k1 = riccati_rhs(v, d, e);
    let k2 = riccati_rhs(&(v + k1 * (0.5 * h)), d, e);
    let k3 = riccati_rhs(&(v + k2 * (0.5 * h)), d, e);
    let k4 = riccati_rhs(&(v + k3 * h), d, e);
    let next = v + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    0.5 * (next + next.transpose())
}

/// Integrates the Riccati equation with classical RK4 at step `dt` and
/// returns `V` at each of `sample_times` (ascending, starting from `t = 0`).
/// The last step before each sample is shortened to land on it exactly.
/// Squeezed probes enter through `kappa^2 -> r kappa^2`.
pub fn integrate_riccati(
    v0: ReducedCovariance,
    couplings: &EffectiveCouplings,
    r: f64,
    sample_times: &[f64],
    dt: f64,
) -> Result<Vec<ReducedCovariance>, RiccatiError> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(RiccatiError::NonPositiveStep(dt));
    }
    let kappa_sq_eff = r * couplings.kappa_sq();
    let stiffness = kappa_sq_eff * dt;
    if stiffness > MAX_STIFFNESS_STEP {
        return Err(RiccatiError::StepTooLarge { dt, stiffness });
    }
    if sample_times.first().is_some_and(|&t| t < 0.0) || sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(RiccatiError::UnorderedTimes);
    }

    let d = drift_matrix(couplings.mu);
    let e = measurement_matrix(kappa_sq_eff);
    let mut v = v0.gamma();
    let mut t = 0.0;
    let mut samples = Vec::with_capacity(sample_times.len());
    for &target in sample_times {
        let remaining = target - t;
        let n = (remaining / dt).ceil().max(0.0) as u64;
        if n > 0 {
            let h = remaining / n as f64;
            for i in 0..n {
                v = rk4_step(&v, &d, &e, h);
                if i % 4096 == 0 && !ReducedCovariance(v).is_psd() {
                    return Err(RiccatiError::LostPositivity {
                        t: t + (i + 1) as f64 * h,
                    });
                }
            }
        }
        t = target;
        let sample = ReducedCovariance(v);
        if !sample.is_psd() {
            return Err(RiccatiError::LostPositivity { t });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Closed-form conditional field variance for continuous probing from a
/// prior of width `prior_width`:
///
/// `dB^2 = (1 + k t) dB0^2 / (1 + k t + 2/3 k mu^2 dB0^2 t^3 + 1/6 k^2 mu^2 dB0^2 t^4)`
///
/// with `k = r kappa^2`. Noiseless case only.
pub fn analytic_variance(prior_width: f64, kappa: f64, mu: f64, r: f64, t: f64) -> f64 {
    let k = r * kappa * kappa;
    let b0 = prior_width * prior_width;
    let m2b0 = mu * mu * b0;
    (1.0 + k * t) * b0 / (1.0 + k * t + 2.0 / 3.0 * k * m2b0 * t.powi(3) + k * k * m2b0 * t.powi(4) / 6.0)
}

/// Long-time limit `6 / (r kappa^2 mu^2 t^3)` of [`analytic_variance`].
pub fn asymptotic_variance(kappa: f64, mu: f64, r: f64, t: f64) -> f64 {
    6.0 / (r * kappa * kappa * mu * mu * t.powi(3))
}

/// Field variance after a terminal destructive readout of `p_at` at time `t`
/// of a noiseless coherent-probe run.
pub fn analytic_sg_variance(prior_width: f64, kappa: f64, mu: f64, t: f64) -> f64 {
    let b0 = prior_width * prior_width;
    let m2b0 = mu * mu * b0;
    b0 / (1.0 + 2.0 * m2b0 * t * t + 2.0 / 3.0 * kappa * kappa * m2b0 * t.powi(3))
}
