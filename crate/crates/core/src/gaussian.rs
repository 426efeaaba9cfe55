//! Gaussian states over labeled real variables.
//!
//! Covariances use the quantum-optics convention
//! `gamma_ij = 2 Re <(y_i - <y_i>)(y_j - <y_j>)>`, so a vacuum quadrature has
//! `gamma = 1` and the classical covariance of any pair is `gamma / 2`.
//!
//! Variables whose labels read `x_<name>` and `p_<name>` are treated as the
//! two quadratures of one quantum mode for the Heisenberg check. Everything
//! else (the magnetic field, for instance) is classical and exempt.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Variable name. Static names never allocate when states are cloned.
pub type Label = Cow<'static, str>;

/// Relative asymmetry allowed before a covariance is flagged.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Smallest eigenvalue may dip to `-EIGENVALUE_TOLERANCE * largest`.
pub const EIGENVALUE_TOLERANCE: f64 = 1e-10;
/// Slack on the uncertainty bound `gamma_xx gamma_pp - gamma_xp^2 >= 1`.
pub const HEISENBERG_TOLERANCE: f64 = 1e-9;
/// Below this measured variance the pseudoinverse of the projected block is zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for a state with {dim} variables")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("index {0} listed more than once")]
    DuplicateIndex(usize),
    #[error("noise prefactor must be non-negative, got {0}")]
    NegativePrefactor(f64),
    #[error("nothing left to measure: every variable is retained")]
    EmptyMeasuredSubsystem,
}

/// Mean vector and covariance of a jointly Gaussian set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    labels: Vec<Label>,
}

/// Partition of a covariance into retained (`a`), measured (`b`) and
/// cross-correlation (`c`) blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub retained: Vec<usize>,
    pub measured: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Which coordinate of the measured subsystem is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementSpec {
    pub index: usize,
}

impl MeasurementSpec {
    pub fn new(index: usize) -> Self {
        Self { index }
    }
}

impl BlockDecomposition {
    /// Column `c_k / b_kk` that maps an innovation on measured coordinate `k`
    /// onto the retained means. `None` when the measured variance is below
    /// [`VARIANCE_FLOOR`], where the pseudoinverse vanishes.
    pub fn gain(&self, spec: MeasurementSpec) -> Result<Option<DVector<f64>>, GaussianError> {
        let k = spec.index;
        if k >= self.measured.len() {
            return Err(GaussianError::IndexOutOfRange {
                index: k,
                dim: self.measured.len(),
            });
        }
        let variance = self.b[(k, k)];
        if variance <= VARIANCE_FLOOR {
            return Ok(None);
        }
        Ok(Some(self.c.column(k) / variance))
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn check_indices(indices: &[usize], dim: usize) -> Result<(), GaussianError> {
    let mut seen = vec![false; dim];
    for &i in indices {
        if i >= dim {
            return Err(GaussianError::IndexOutOfRange { index: i, dim });
        }
        if seen[i] {
            return Err(GaussianError::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    Ok(())
}

impl GaussianState {
    /// Builds a state, symmetrizing the covariance.
    pub fn new<L>(mean: DVector<f64>, cov: DMatrix<f64>, labels: Vec<L>) -> Result<Self, GaussianError>
    where
        L: Into<Label>,
    {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(GaussianError::DimensionMismatch {
                expected: n,
                found: if cov.nrows() != n { cov.nrows() } else { cov.ncols() },
            });
        }
        if labels.len() != n {
            return Err(GaussianError::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        let mut cov = cov;
        symmetrize(&mut cov);
        Ok(Self {
            mean,
            cov,
            labels: labels.into_iter().map(Into::into).collect(),
        })
    }

    /// Builds a state without touching the covariance, so asymmetric input
    /// can be inspected by [`GaussianState::check_validity`].
    pub fn new_unsymmetrized<L>(mean: DVector<f64>, cov: DMatrix<f64>, labels: Vec<L>) -> Result<Self, GaussianError>
    where
        L: Into<Label>,
    {
        let mut state = Self::new(mean, cov.clone(), labels)?;
        state.cov = cov;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance in the gamma convention (twice the classical covariance).
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Classical variance `gamma_ii / 2`.
    pub fn variance(&self, index: usize) -> f64 {
        0.5 * self.cov[(index, index)]
    }

    /// Classical covariance `gamma_ij / 2`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        0.5 * self.cov[(i, j)]
    }

    pub fn set_mean(&mut self, index: usize, value: f64) {
        self.mean[index] = value;
    }

    /// `mean -> S mean`, `gamma -> S gamma S^T`.
    pub fn linear_transform(&self, s: &DMatrix<f64>) -> Result<Self, GaussianError> {
        let n = self.dim();
        if s.nrows() != n || s.ncols() != n {
            return Err(GaussianError::DimensionMismatch {
                expected: n,
                found: if s.nrows() != n { s.nrows() } else { s.ncols() },
            });
        }
        let mut cov = s * &self.cov * s.transpose();
        symmetrize(&mut cov);
        Ok(Self {
            mean: s * &self.mean,
            cov,
            labels: self.labels.clone(),
        })
    }

    /// `mean -> L mean`, `gamma -> L gamma L + prefactor M` for diagonal
    /// `L` and `M`, both passed as their diagonals.
    pub fn add_noise(
        &self,
        l_diag: &DVector<f64>,
        m_diag: &DVector<f64>,
        prefactor: f64,
    ) -> Result<Self, GaussianError> {
        let n = self.dim();
        for d in [l_diag, m_diag] {
            if d.len() != n {
                return Err(GaussianError::DimensionMismatch {
                    expected: n,
                    found: d.len(),
                });
            }
        }
        if prefactor < 0.0 || prefactor.is_nan() {
            return Err(GaussianError::NegativePrefactor(prefactor));
        }
        let mut cov = self.cov.clone();
        for j in 0..n {
            for i in 0..n {
                cov[(i, j)] *= l_diag[i] * l_diag[j];
            }
            cov[(j, j)] += prefactor * m_diag[j];
        }
        symmetrize(&mut cov);
        Ok(Self {
            mean: self.mean.component_mul(l_diag),
            cov,
            labels: self.labels.clone(),
        })
    }

    /// Splits the covariance into retained and measured blocks. The measured
    /// subsystem is every variable not in `retained`, in ascending order.
    pub fn decompose(&self, retained: &[usize]) -> Result<BlockDecomposition, GaussianError> {
        let n = self.dim();
        check_indices(retained, n)?;
        let measured: Vec<usize> = (0..n).filter(|i| !retained.contains(i)).collect();
        let a = self.cov.select_rows(retained).select_columns(retained);
        let b = self.cov.select_rows(&measured).select_columns(&measured);
        let c = self.cov.select_rows(retained).select_columns(&measured);
        Ok(BlockDecomposition {
            retained: retained.to_vec(),
            measured,
            a,
            b,
            c,
        })
    }

    /// Homodyne-type readout of one coordinate of the measured subsystem.
    ///
    /// Returns the state of the retained variables conditioned on `outcome`
    /// together with the innovation `outcome - <x>`. The covariance update
    /// `A - C (pi B pi)^+ C^T` does not depend on the outcome.
    pub fn condition_on_quadrature(
        &self,
        retained: &[usize],
        spec: MeasurementSpec,
        outcome: f64,
    ) -> Result<(Self, f64), GaussianError> {
        let blocks = self.decompose(retained)?;
        if blocks.measured.is_empty() {
            return Err(GaussianError::EmptyMeasuredSubsystem);
        }
        let gain = blocks.gain(spec)?;
        let measured_var = blocks.measured[spec.index];
        let innovation = outcome - self.mean[measured_var];

        let mut mean = self.mean.select_rows(retained);
        let mut a = blocks.a;
        if let Some(gain) = gain {
            let column = blocks.c.column(spec.index);
            a -= &gain * column.transpose();
            mean += &gain * innovation;
        }
        symmetrize(&mut a);
        let labels = retained.iter().map(|&i| self.labels[i].clone()).collect();
        Ok((Self { mean, cov: a, labels }, innovation))
    }

    pub fn marginal(&self, indices: &[usize]) -> Result<Self, GaussianError> {
        check_indices(indices, self.dim())?;
        Ok(Self {
            mean: self.mean.select_rows(indices),
            cov: self.cov.select_rows(indices).select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        })
    }

    /// Appends an uncorrelated subsystem.
    pub fn direct_sum(&self, other: &GaussianState) -> Self {
        let (n, m) = (self.dim(), other.dim());
        let mut mean = DVector::zeros(n + m);
        mean.rows_mut(0, n).copy_from(&self.mean);
        mean.rows_mut(n, m).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(n + m, n + m);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        cov.view_mut((n, n), (m, m)).copy_from(&other.cov);
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Self { mean, cov, labels }
    }

    /// Draws a readout of variable `index`: normal with mean `<x>` and
    /// variance `gamma_xx / 2`. Zero variance returns the mean without
    /// consuming randomness.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Result<f64, GaussianError> {
        if index >= self.dim() {
            return Err(GaussianError::IndexOutOfRange { index, dim: self.dim() });
        }
        let variance = self.variance(index);
        if variance <= 0.0 {
            return Ok(self.mean[index]);
        }
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.mean[index] + variance.sqrt() * z)
    }

    /// Quadrature pairs `(x_<name>, p_<name>)` found among the labels.
    pub fn quadrature_pairs(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let name = l.strip_prefix("x_")?;
                let p = self.index_of(&format!("p_{name}"))?;
                Some((i, p))
            })
            .collect()
    }

    pub fn check_validity(&self) -> ValidityReport {
        let n = self.dim();
        let mut violations = Vec::new();

        let mut symmetry_residual: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let scale = (self.cov[(i, i)] * self.cov[(j, j)]).abs().sqrt();
                let scale = if scale > 0.0 {
                    scale
                } else {
                    self.cov[(i, j)]
                        .abs()
                        .max(self.cov[(j, i)].abs())
                        .max(f64::MIN_POSITIVE)
                };
                let residual = (self.cov[(i, j)] - self.cov[(j, i)]).abs() / scale;
                symmetry_residual = symmetry_residual.max(residual);
            }
        }
        if symmetry_residual > SYMMETRY_TOLERANCE {
            violations.push(Violation::Asymmetric {
                residual: symmetry_residual,
            });
        }

        let mut symmetric = self.cov.clone();
        symmetrize(&mut symmetric);
        let (min_eigenvalue, max_eigenvalue) = if n == 0 {
            (0.0, 0.0)
        } else {
            let eig = SymmetricEigen::new(symmetric.clone()).eigenvalues;
            (eig.min(), eig.max())
        };
        if min_eigenvalue < -EIGENVALUE_TOLERANCE * max_eigenvalue.abs().max(f64::MIN_POSITIVE) {
            violations.push(Violation::NotPositiveSemidefinite { min_eigenvalue });
        }

        for i in 0..n {
            if symmetric[(i, i)] < 0.0 {
                violations.push(Violation::NegativeDiagonal {
                    index: i,
                    value: symmetric[(i, i)],
                });
            }
        }

        let modes: Vec<ModeCheck> = self
            .quadrature_pairs()
            .into_iter()
            .map(|(x, p)| {
                let determinant = symmetric[(x, x)] * symmetric[(p, p)] - symmetric[(x, p)].powi(2);
                ModeCheck {
                    x: self.labels[x].clone(),
                    p: self.labels[p].clone(),
                    determinant,
                }
            })
            .collect();
        for mode in &modes {
            if mode.determinant < 1.0 - HEISENBERG_TOLERANCE {
                violations.push(Violation::Heisenberg {
                    x: mode.x.clone(),
                    p: mode.p.clone(),
                    determinant: mode.determinant,
                });
            }
        }

        ValidityReport {
            symmetry_residual,
            min_eigenvalue,
            max_eigenvalue,
            modes,
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCheck {
    pub x: Label,
    pub p: Label,
    pub determinant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Asymmetric { residual: f64 },
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    NegativeDiagonal { index: usize, value: f64 },
    Heisenberg { x: Label, p: Label, determinant: f64 },
}

/// Diagnostics from [`GaussianState::check_validity`]. Never an error; callers
/// decide what to do with the violations.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub symmetry_residual: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub modes: Vec<ModeCheck>,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}
