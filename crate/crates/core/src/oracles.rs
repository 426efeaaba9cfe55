//! Independent reference computations used to cross-check the filter.
//!
//! Nothing here is on the production path. Each routine reaches its answer by
//! a different algebraic route than the code it checks.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::riccati::ReducedCovariance;

/// Classical Gaussian conditioning through the precision matrix.
///
/// Keeps `retained` plus the single `measured` variable, inverts that joint
/// covariance, and reads the conditional law of the retained block off the
/// precision matrix: `Sigma_{R|x} = (Lambda_RR)^-1` and
/// `mu_{R|x} = mu_R - (Lambda_RR)^-1 Lambda_Rx (x - mu_x)`.
/// Inputs and outputs use the gamma convention; the factor 2 is removed and
/// restored explicitly.
pub fn condition_via_precision(
    mean: &DVector<f64>,
    gamma: &DMatrix<f64>,
    retained: &[usize],
    measured: usize,
    outcome: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut joint: Vec<usize> = retained.to_vec();
    joint.push(measured);
    let m = retained.len();
    let sigma = gamma.select_rows(&joint).select_columns(&joint) * 0.5;
    let precision = sigma
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| sigma.try_inverse())
        .expect("oracle needs a non-singular joint covariance");
    let lambda_rr = precision.view((0, 0), (m, m)).into_owned();
    let lambda_rx = precision.view((0, m), (m, 1)).into_owned();
    let cond_sigma = lambda_rr
        .clone()
        .cholesky()
        .expect("precision block must be positive definite")
        .inverse();
    let shift = &cond_sigma * lambda_rx * (outcome - mean[measured]);
    let cond_mean = mean.select_rows(retained) - shift.column(0);
    (cond_mean, cond_sigma * 2.0)
}

/// Closed-form solution of the reduced Riccati equation through its
/// linearization `W' = -D W`, `U' = E W + D^T U`, `V = W U^-1` with
/// `W(0) = V0`, `U(0) = I`.
///
/// `D` is nilpotent, so `W(t) = (I - D t) V0` and
/// `U(t) = (I + D^T t)(I + G(t) V0)` where
/// `G(t) = int_0^t (I - D^T s) E (I - D s) ds`
/// `     = [[k mu^2 t^3 / 3, -k mu t^2 / 2], [-k mu t^2 / 2, k t]]`
/// with `k` the effective measurement strength (`r kappa^2`).
pub fn riccati_linearized(v0: &ReducedCovariance, kappa_sq_eff: f64, mu: f64, t: f64) -> ReducedCovariance {
    let d = Matrix2::new(0.0, 0.0, mu, 0.0);
    let identity = Matrix2::identity();
    let w = (identity - d * t) * v0.gamma();
    let k = kappa_sq_eff;
    let g = Matrix2::new(
        k * mu * mu * t.powi(3) / 3.0,
        -k * mu * t * t / 2.0,
        -k * mu * t * t / 2.0,
        k * t,
    );
    let u = (identity + d.transpose() * t) * (identity + g * v0.gamma());
    let u_inv = u.try_inverse().expect("U(t) stays invertible for a PSD start");
    let v = w * u_inv;
    ReducedCovariance::from_gamma(0.5 * (v + v.transpose()))
}
