//! Gaussian-state estimation of a classical magnetic field probed by a
//! collective atomic spin and a continuous optical probe.
//!
//! The field `B`, the atomic quadratures `(x_at, p_at)` and the probe
//! quadratures `(x_ph, p_ph)` are propagated as one Gaussian state. Each probe
//! segment interacts with the atoms, is read out through its `x_ph`
//! quadrature, and is replaced by a fresh segment; conditioning on the
//! readout yields the field estimate and its uncertainty.
//!
//! * [`gaussian`]: dimension-generic Gaussian states and their updates.
//! * [`model`]: couplings and step matrices of the magnetometer.
//! * [`filter`] and [`ensemble`]: discrete-time filtering and Monte Carlo runs.
//! * [`riccati`]: the continuous-time limit and its closed forms.
//! * [`oracles`]: independent reference computations used by tests and
//!   [`verify`].

pub mod ensemble;
pub mod filter;
pub mod gaussian;
pub mod model;
pub mod oracles;
pub mod riccati;
pub mod verify;

pub use ensemble::{run_ensemble, EnsembleStats};
pub use filter::{
    mean_increment_sde, propagate_covariance, run_trajectory, stern_gerlach_measure, stern_gerlach_update,
    trajectory_rng, FilterConfig, FilterError, SgPoint, TimeGrid, TrajectoryRecord, TrueField, TruthMode,
    VarianceCurve,
};
pub use gaussian::{BlockDecomposition, GaussianError, GaussianState, MeasurementSpec, ValidityReport};
pub use model::{
    build_step_matrices, derive_couplings, fresh_probe_segment, initial_state, EffectiveCouplings, ModelError,
    PhysicalParams, StepMatrices,
};
pub use riccati::{
    analytic_sg_variance, analytic_variance, integrate_riccati, riccati_rhs, ReducedCovariance, RiccatiError,
};

/// Tesla per picotesla.
pub const PICOTESLA: f64 = 1e-12;
