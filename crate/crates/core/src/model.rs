//! Five-variable magnetometer model: laboratory parameters, effective
//! couplings, and the per-step matrices acting on `(B, x_at, p_at, x_ph, p_ph)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gaussian::{GaussianError, GaussianState};

/// CODATA 2018 values, SI units.
pub mod constants {
    /// Reduced Planck constant (J s).
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Speed of light (m/s).
    pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
    /// Vacuum permittivity (F/m).
    pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
    /// Bohr magneton (J/T).
    pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
}

pub const B_FIELD: usize = 0;
pub const X_AT: usize = 1;
pub const P_AT: usize = 2;
pub const X_PH: usize = 3;
pub const P_PH: usize = 4;

pub const LABELS: [&str; 5] = ["B", "x_at", "p_at", "x_ph", "p_ph"];
pub const ATOM_AND_FIELD: [usize; 3] = [B_FIELD, X_AT, P_AT];

/// Largest per-step decay probability `eta * tau` accepted. The decay noise
/// model is a first-order expansion in this quantity.
pub const MAX_DECAY_PER_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("coupling `{name}` must be non-negative, got {value}")]
    NegativeCoupling { name: &'static str, value: f64 },
    #[error("squeezing r must be at least 1e-6, got {0}")]
    Squeezing(f64),
    #[error("jx fraction must lie in (0, 1], got {0}")]
    JxFraction(f64),
    #[error("decay per step eta*tau = {0} exceeds {MAX_DECAY_PER_STEP}; reduce tau")]
    StepTooLong(f64),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositive { name, value })
    }
}

fn check_squeezing(r: f64) -> Result<(), ModelError> {
    if r >= 1e-6 && r.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Squeezing(r))
    }
}

/// Laboratory inputs, SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    /// Probe wavelength (m).
    pub wavelength: f64,
    /// Transition dipole moment (C m).
    pub dipole_moment: f64,
    /// Excited-state decay width (1/s).
    pub decay_width: f64,
    /// Probe detuning as an angular frequency (rad/s).
    pub detuning: f64,
    /// Beam cross-section (m^2).
    pub beam_area: f64,
    /// Photon flux (1/s).
    pub photon_flux: f64,
    pub atom_number: f64,
    /// Atomic magnetic moment (J/T).
    pub magnetic_moment: f64,
    /// Prior standard deviation of the field (T).
    pub prior_width: f64,
    /// Probe squeezing; `r > 1` squeezes `x_ph`.
    pub squeezing: f64,
}

impl Default for PhysicalParams {
    /// Cs D2 probing at 852 nm with a 1 GHz detuning, 2 mm^2 beam,
    /// 2e12 atoms and 5e12 photons/s.
    fn default() -> Self {
        Self {
            wavelength: 852e-9,
            dipole_moment: 2.61e-29,
            decay_width: 3.1e7,
            detuning: 2.0 * PI * 1e9,
            beam_area: 2e-6,
            photon_flux: 5e12,
            atom_number: 2e12,
            magnetic_moment: constants::BOHR_MAGNETON,
            prior_width: 1e-12,
            squeezing: 1.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("wavelength", self.wavelength)?;
        positive("dipole_moment", self.dipole_moment)?;
        positive("decay_width", self.decay_width)?;
        positive("detuning", self.detuning)?;
        positive("beam_area", self.beam_area)?;
        positive("photon_flux", self.photon_flux)?;
        positive("atom_number", self.atom_number)?;
        positive("magnetic_moment", self.magnetic_moment)?;
        positive("prior_width", self.prior_width)?;
        check_squeezing(self.squeezing)
    }

    /// Probe angular frequency `2 pi c / lambda`.
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * constants::SPEED_OF_LIGHT / self.wavelength
    }

    /// `g^2 tau` with `g = sqrt(hbar w / (A c tau eps0)) d / hbar`. The
    /// segment length `c tau` makes `g^2` scale as `1/tau`; the product does not.
    pub fn coupling_sq_times_tau(&self) -> f64 {
        use constants::*;
        self.angular_frequency() * self.dipole_moment.powi(2)
            / (self.beam_area * SPEED_OF_LIGHT * VACUUM_PERMITTIVITY * HBAR)
    }

    /// Resonant absorption cross-section `lambda^2 / (2 pi)`.
    pub fn cross_section(&self) -> f64 {
        self.wavelength.powi(2) / (2.0 * PI)
    }
}

/// Continuous-time rates of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveCouplings {
    /// Light-atom coupling, `kappa^2` in 1/s.
    pub kappa: f64,
    /// Field-atom coupling in 1/(s T).
    pub mu: f64,
    /// Spontaneous decay rate in 1/s.
    pub eta: f64,
}

impl EffectiveCouplings {
    pub fn from_rates(kappa_sq: f64, mu: f64, eta: f64) -> Result<Self, ModelError> {
        let c = Self {
            kappa: kappa_sq.max(0.0).sqrt(),
            mu,
            eta,
        };
        for (name, value) in [("kappa_sq", kappa_sq), ("mu", mu), ("eta", eta)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ModelError::NegativeCoupling { name, value });
            }
        }
        Ok(c)
    }

    pub fn kappa_sq(&self) -> f64 {
        self.kappa * self.kappa
    }

    /// `mu` expressed per picotesla, the unit used for display.
    pub fn mu_per_picotesla(&self) -> f64 {
        self.mu * 1e-12
    }
}

/// Dimensionless per-segment light-atom coupling `kappa_tau`, which grows as
/// `sqrt(tau)`.
pub fn kappa_tau(p: &PhysicalParams, tau: f64) -> f64 {
    let g_sq = p.coupling_sq_times_tau() / tau;
    // <J_x>/hbar = N/2 and <S_x>/hbar = Phi tau / 2
    2.0 * g_sq / p.detuning * (0.5 * p.atom_number * 0.5 * p.photon_flux).sqrt() * tau.powf(1.5)
}

/// Dimensionless per-segment field coupling `mu_tau` in 1/T.
pub fn mu_tau(p: &PhysicalParams, tau: f64) -> f64 {
    p.magnetic_moment / constants::HBAR * (0.5 * p.atom_number).sqrt() * tau
}

/// Spontaneous emission rate per atom induced by the probe.
pub fn decay_rate(p: &PhysicalParams) -> f64 {
    let half_width_sq = p.decay_width.powi(2) / 4.0;
    p.photon_flux * p.cross_section() / p.beam_area * half_width_sq / (half_width_sq + p.detuning.powi(2))
}

pub fn derive_couplings(p: &PhysicalParams) -> Result<EffectiveCouplings, ModelError> {
    p.validate()?;
    let kappa = 2.0 * p.coupling_sq_times_tau() / p.detuning * (p.atom_number * p.photon_flux / 4.0).sqrt();
    let mu = p.magnetic_moment / constants::HBAR * (p.atom_number / 2.0).sqrt();
    Ok(EffectiveCouplings {
        kappa,
        mu,
        eta: decay_rate(p),
    })
}

/// Matrices for one probe segment of duration `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    /// Interaction map on `(B, x_at, p_at, x_ph, p_ph)`.
    pub s: DMatrix<f64>,
    /// Diagonal of the polarization-loss map `L`.
    pub l: DVector<f64>,
    /// Diagonal of the decay-noise matrix `M`.
    pub m: DVector<f64>,
    /// `hbar N_at / <J_x(t)>`.
    pub noise_prefactor: f64,
    pub tau: f64,
    pub kappa_tau: f64,
    pub mu_tau: f64,
    pub eta_tau: f64,
}

impl StepMatrices {
    pub fn decay_enabled(&self) -> bool {
        self.eta_tau > 0.0
    }
}

/// Builds the step matrices with couplings shrunk by the remaining spin
/// polarization `jx_fraction`.
pub fn build_step_matrices(
    c: &EffectiveCouplings,
    tau: f64,
    jx_fraction: f64,
    decay_enabled: bool,
) -> Result<StepMatrices, ModelError> {
    positive("tau", tau)?;
    if !(jx_fraction > 0.0 && jx_fraction <= 1.0) {
        return Err(ModelError::JxFraction(jx_fraction));
    }
    let shrink = jx_fraction.sqrt();
    let kappa_tau = c.kappa * tau.sqrt() * shrink;
    let mu_tau = c.mu * tau * shrink;

    let mut s = DMatrix::identity(5, 5);
    s[(X_AT, P_PH)] = kappa_tau;
    s[(P_AT, B_FIELD)] = -mu_tau;
    s[(X_PH, P_AT)] = kappa_tau;

    let eta_tau = if decay_enabled { c.eta * tau } else { 0.0 };
    if eta_tau > MAX_DECAY_PER_STEP {
        return Err(ModelError::StepTooLong(eta_tau));
    }
    let mut l = DVector::from_element(5, 1.0);
    let mut m = DVector::zeros(5);
    if eta_tau > 0.0 {
        let survive = (1.0 - eta_tau).sqrt();
        for i in [X_AT, P_AT] {
            l[i] = survive;
            m[i] = eta_tau;
        }
    }
    Ok(StepMatrices {
        s,
        l,
        m,
        noise_prefactor: 2.0 / jx_fraction,
        tau,
        kappa_tau,
        mu_tau,
        eta_tau,
    })
}

/// Fresh, uncorrelated probe segment with `(x_ph, p_ph)` covariance
/// `diag(1/r, r)`.
pub fn fresh_probe_segment(r: f64) -> Result<GaussianState, ModelError> {
    check_squeezing(r)?;
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / r, r]));
    Ok(GaussianState::new(DVector::zeros(2), cov, LABELS[X_PH..].to_vec())?)
}

/// Field prior of width `prior_width` (T), polarized atoms and a fresh probe.
pub fn initial_state(prior_width: f64, r: f64) -> Result<GaussianState, ModelError> {
    positive("prior_width", prior_width)?;
    Ok(field_and_atoms(2.0 * prior_width * prior_width, 0.0)?.direct_sum(&fresh_probe_segment(r)?))
}

/// Same as [`initial_state`] but with the field known exactly: the state of
/// the physical system when `B = b_true`.
pub fn truth_state(b_true: f64, r: f64) -> Result<GaussianState, ModelError> {
    Ok(field_and_atoms(0.0, b_true)?.direct_sum(&fresh_probe_segment(r)?))
}

fn field_and_atoms(gamma_b: f64, mean_b: f64) -> Result<GaussianState, ModelError> {
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![gamma_b, 1.0, 1.0]));
    let mean = DVector::from_vec(vec![mean_b, 0.0, 0.0]);
    Ok(GaussianState::new(mean, cov, LABELS[..3].to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> EffectiveCouplings {
        derive_couplings(&PhysicalParams::default()).unwrap()
    }

    #[test]
    fn default_couplings() {
        let c = defaults();
        assert!((c.kappa_sq() / 1.83e6 - 1.0).abs() < 0.01, "kappa^2 = {}", c.kappa_sq());
        assert!(
            (c.mu_per_picotesla() / 8.79e4 - 1.0).abs() < 0.01,
            "mu = {}",
            c.mu_per_picotesla()
        );
        assert!((c.eta / 1.7577 - 1.0).abs() < 1e-3, "eta = {}", c.eta);
    }

    #[test]
    fn per_step_couplings_scale_to_continuous_rates() {
        let p = PhysicalParams::default();
        let c = defaults();
        for tau in [1e-9, 1e-8, 1e-6] {
            assert!((kappa_tau(&p, tau) / tau.sqrt() / c.kappa - 1.0).abs() < 1e-12);
            assert!((mu_tau(&p, tau) / tau / c.mu - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coupling_homogeneity() {
        let base = PhysicalParams::default();
        let c0 = defaults();
        let flux = derive_couplings(&PhysicalParams {
            photon_flux: 2.0 * base.photon_flux,
            ..base
        })
        .unwrap();
        assert!((flux.kappa_sq() / c0.kappa_sq() - 2.0).abs() < 1e-12);
        assert!((flux.eta / c0.eta - 2.0).abs() < 1e-12);
        assert_eq!(flux.mu, c0.mu);

        let atoms = derive_couplings(&PhysicalParams {
            atom_number: 2.0 * base.atom_number,
            ..base
        })
        .unwrap();
        assert!((atoms.kappa_sq() / c0.kappa_sq() - 2.0).abs() < 1e-12);
        assert!(((atoms.mu / c0.mu).powi(2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PhysicalParams {
            beam_area: 0.0,
            ..Default::default()
        };
        assert_eq!(
            derive_couplings(&p),
            Err(ModelError::NonPositive {
                name: "beam_area",
                value: 0.0
            })
        );
        let p = PhysicalParams {
            squeezing: 0.0,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ModelError::Squeezing(_))));
        assert!(EffectiveCouplings::from_rates(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_couplings_give_identity_step() {
        let c = EffectiveCouplings::from_rates(0.0, 0.0, 0.0).unwrap();
        let m = build_step_matrices(&c, 1e-8, 1.0, true).unwrap();
        assert_eq!(m.s, DMatrix::identity(5, 5));
        assert_eq!(m.l, DVector::from_element(5, 1.0));
        assert_eq!(m.m, DVector::zeros(5));
    }

    #[test]
    fn step_matrix_layout() {
        let c = defaults();
        let tau = 1e-8;
        let m = build_step_matrices(&c, tau, 1.0, false).unwrap();
        let k = c.kappa * tau.sqrt();
        let mu = c.mu * tau;
        for i in 0..5 {
            for j in 0..5 {
                let expected = match (i, j) {
                    _ if i == j => 1.0,
                    (X_AT, P_PH) | (X_PH, P_AT) => k,
                    (P_AT, B_FIELD) => -mu,
                    _ => 0.0,
                };
                assert_eq!(m.s[(i, j)], expected, "entry ({i},{j})");
            }
        }
        assert_eq!(m.l, DVector::from_element(5, 1.0));
        assert_eq!(m.m, DVector::zeros(5));
    }

    #[test]
    fn decay_step_matrices() {
        let c = EffectiveCouplings::from_rates(1.83e6, 8.79e16, 1.7577).unwrap();
        let m = build_step_matrices(&c, 1e-4, 1.0, true).unwrap();
        let eta_tau = 1.7577e-4;
        assert!((m.eta_tau - eta_tau).abs() < 1e-18);
        for i in [X_AT, P_AT] {
            assert!((m.l[i] - (1.0 - eta_tau).sqrt()).abs() < 1e-15);
            assert!((m.m[i] - eta_tau).abs() < 1e-18);
        }
        for i in [B_FIELD, X_PH, P_PH] {
            assert_eq!(m.l[i], 1.0);
            assert_eq!(m.m[i], 0.0);
        }
        assert_eq!(m.noise_prefactor, 2.0);
    }

    #[test]
    fn shrunk_polarization_weakens_couplings() {
        let c = defaults();
        let full = build_step_matrices(&c, 1e-8, 1.0, true).unwrap();
        let half = build_step_matrices(&c, 1e-8, 0.5, true).unwrap();
        assert!((half.kappa_tau / full.kappa_tau - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((half.mu_tau / full.mu_tau - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(half.noise_prefactor, 4.0);
    }

    #[test]
    fn long_steps_and_bad_fractions_are_rejected() {
        let c = defaults();
        assert!(matches!(
            build_step_matrices(&c, 0.01, 1.0, true),
            Err(ModelError::StepTooLong(_))
        ));
        // without decay the expansion parameter is absent
        assert!(build_step_matrices(&c, 0.01, 1.0, false).is_ok());
        assert!(matches!(
            build_step_matrices(&c, 1e-8, 0.0, true),
            Err(ModelError::JxFraction(_))
        ));
        assert!(matches!(
            build_step_matrices(&c, 1e-8, 1.5, true),
            Err(ModelError::JxFraction(_))
        ));
    }

    #[test]
    fn step_map_tends_to_identity() {
        let c = defaults();
        let reference = build_step_matrices(&c, 1e-8, 1.0, false).unwrap();
        for tau in [1e-10, 1e-12, 1e-14] {
            let m = build_step_matrices(&c, tau, 1.0, false).unwrap();
            let shrink = tau / 1e-8;
            // off-diagonals vanish as sqrt(tau) (light) and tau (field)
            assert!((m.kappa_tau / reference.kappa_tau - shrink.sqrt()).abs() < 1e-12);
            assert!((m.mu_tau / reference.mu_tau - shrink).abs() < 1e-12);
            assert!((m.kappa_tau.powi(2) / tau / c.kappa_sq() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jx_bookkeeping_keeps_prefactor_product_at_two() {
        let c = defaults();
        let tau = 1e-6;
        let mut jx = 1.0;
        for _ in 0..1000 {
            let m = build_step_matrices(&c, tau, jx, true).unwrap();
            assert!((m.noise_prefactor * jx - 2.0).abs() < 1e-15);
            jx *= 1.0 - m.eta_tau;
        }
        assert!((jx / (1.0 - c.eta * tau).powi(1000) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_segments() {
        let coherent = fresh_probe_segment(1.0).unwrap();
        assert_eq!(coherent.cov(), &DMatrix::identity(2, 2));
        let squeezed = fresh_probe_segment(3.0).unwrap();
        assert_eq!(squeezed.cov()[(0, 0)], 1.0 / 3.0);
        assert_eq!(squeezed.cov()[(1, 1)], 3.0);
        assert_eq!(squeezed.marginal(&[0]).unwrap().cov()[(0, 0)], 1.0 / 3.0);
        for r in [1e-3, 0.5, 1.0, 3.0, 17.0, 1e4] {
            assert!((fresh_probe_segment(r).unwrap().cov().determinant() - 1.0).abs() < 1e-12);
        }
        assert_eq!(fresh_probe_segment(0.0).unwrap_err(), ModelError::Squeezing(0.0));
    }

    #[test]
    fn initial_states() {
        let s = initial_state(1e-12, 1.0).unwrap();
        assert!(s.labels().iter().zip(LABELS).all(|(a, b)| a == b));
        assert_eq!(s.mean(), &DVector::zeros(5));
        let diag = s.cov().diagonal();
        assert_eq!(diag.as_slice(), &[2e-24, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.variance(B_FIELD), 1e-24);
        assert!(s.check_validity().is_valid());

        let sq = initial_state(1e-12, 3.0).unwrap();
        assert_eq!(sq.cov()[(X_PH, X_PH)], 1.0 / 3.0);
        assert_eq!(sq.cov()[(P_PH, P_PH)], 3.0);
        assert!(initial_state(0.0, 1.0).is_err());
    }
}
