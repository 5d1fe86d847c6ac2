//! Sparse variational GP machinery.
//!
//! Every latent process `h` (a component `f_m` or an activation `g_m`) gets
//! inducing points `Z` and a Gaussian `q(u) = N(m, S)` over `u = h(Z)`.
//! Internally `q` is stored in whitened form: with `K_ZZ = L_K L_Kᵀ`,
//! `m = L_K m̃` and `chol(S) = L_K L̃`, so the prior is `N(0, I)` in the
//! whitened coordinates and the optimizer works on well-scaled parameters.

mod objective;
mod optim;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{cross_covariance, MsmKernel};
use crate::linalg;

pub use objective::{elbo, initial_state, ElboProblem};
pub use optim::{ascend, fit, FitConfig, FitOutcome, Optimizer, NOISE_FLOOR};

/// Variances below this are clipped (and counted).
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Inducing inputs, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    points: Vec<f64>,
}

impl InducingSet {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::param("an inducing set needs at least one point"));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("inducing points must be finite and strictly increasing"));
        }
        Ok(Self { points })
    }

    /// `count` points at the centres of equal cells spanning `times`, each
    /// moved onto the nearest sample time when that keeps them distinct.
    pub fn uniform(times: &[f64], count: usize) -> Result<Self> {
        if times.is_empty() || count == 0 {
            return Err(Error::param("uniform inducing grid needs data and a positive count"));
        }
        let (t0, t1) = (times[0], times[times.len() - 1]);
        if count == 1 || t1 <= t0 {
            return Self::new(vec![0.5 * (t0 + t1)]);
        }
        let span = t1 - t0;
        let grid: Vec<f64> = (0..count)
            .map(|m| t0 + (m as f64 + 0.5) * span / count as f64)
            .collect();
        let snapped: Vec<f64> = grid
            .iter()
            .map(|&z| {
                let i = times.partition_point(|&t| t < z);
                let cand = [i.saturating_sub(1), i.min(times.len() - 1)];
                let best = cand
                    .into_iter()
                    .min_by(|&a, &b| (times[a] - z).abs().total_cmp(&(times[b] - z).abs()))
                    .unwrap_or(0);
                times[best]
            })
            .collect();
        if snapped.windows(2).all(|w| w[1] > w[0]) {
            Self::new(snapped)
        } else {
            Self::new(grid)
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `N(mean, cov_chol · cov_cholᵀ)` with a lower-triangular factor.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGaussian {
    pub mean: DVector<f64>,
    pub cov_chol: DMatrix<f64>,
}

impl VariationalGaussian {
    pub fn new(mean: DVector<f64>, cov_chol: DMatrix<f64>) -> Result<Self> {
        let q = Self { mean, cov_chol };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mean.len();
        if self.cov_chol.nrows() != m || self.cov_chol.ncols() != m {
            return Err(Error::param(format!(
                "covariance factor is {}x{} but the mean has length {m}",
                self.cov_chol.nrows(),
                self.cov_chol.ncols()
            )));
        }
        for i in 0..m {
            if !(self.cov_chol[(i, i)] > 0.0) {
                return Err(Error::param("covariance factor needs a positive diagonal"));
            }
            for j in i + 1..m {
                if self.cov_chol[(i, j)] != 0.0 {
                    return Err(Error::param("covariance factor must be lower-triangular"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_chol * self.cov_chol.transpose()
    }
}

/// Per-point means and variances of a latent process.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarginalMoments {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    /// Number of variances raised to [`VARIANCE_FLOOR`].
    pub clipped: usize,
}

impl MarginalMoments {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn extend(&mut self, other: &MarginalMoments) {
        self.means.extend_from_slice(&other.means);
        self.vars.extend_from_slice(&other.vars);
        self.clipped += other.clipped;
    }
}

/// ELBO with its parts; `elbo = expected_loglik - kl_f_total - kl_g_total`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboBreakdown {
    pub expected_loglik: f64,
    pub kl_f_total: f64,
    pub kl_g_total: f64,
    pub elbo: f64,
}

impl ElboBreakdown {
    pub fn new(expected_loglik: f64, kl_f_total: f64, kl_g_total: f64) -> Self {
        Self {
            expected_loglik,
            kl_f_total,
            kl_g_total,
            elbo: expected_loglik - kl_f_total - kl_g_total,
        }
    }

    /// Sum of two independent bounds (e.g. separate analysis windows).
    pub fn combine(&self, other: &ElboBreakdown) -> Self {
        Self::new(
            self.expected_loglik + other.expected_loglik,
            self.kl_f_total + other.kl_f_total,
            self.kl_g_total + other.kl_g_total,
        )
    }
}

/// Inducing inputs and whitened variational posterior of one process.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub inducing: InducingSet,
    /// `q` in whitened coordinates (prior = `N(0, I)`).
    pub whitened: VariationalGaussian,
}

impl ProcessState {
    /// Whitened posterior with mean 0 and covariance factor `scale · I`.
    pub fn at_scaled_prior(inducing: InducingSet, scale: f64) -> Self {
        let m = inducing.len();
        Self {
            inducing,
            whitened: VariationalGaussian {
                mean: DVector::zeros(m),
                cov_chol: DMatrix::identity(m, m) * scale,
            },
        }
    }

    /// The posterior in the original coordinates, given `chol(K_ZZ)`.
    pub fn unwhitened(&self, prior_chol: &DMatrix<f64>) -> VariationalGaussian {
        VariationalGaussian {
            mean: prior_chol * &self.whitened.mean,
            cov_chol: prior_chol * &self.whitened.cov_chol,
        }
    }
}

/// Variational state of a whole model: one entry per component process and
/// one per activation process (softmax models list the silence activation
/// first).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub components: Vec<ProcessState>,
    pub activations: Vec<ProcessState>,
}

impl VariationalState {
    pub fn processes(&self) -> impl Iterator<Item = &ProcessState> {
        self.components.iter().chain(&self.activations)
    }

    pub fn n_params(&self) -> usize {
        self.processes()
            .map(|p| {
                let m = p.inducing.len();
                m + m * (m + 1) / 2
            })
            .sum()
    }
}

/// Factor `chol(K_ZZ + jitter)` with the usual escalation.
pub fn prior_cholesky(kernel: &MsmKernel, z: &InducingSet, rel_jitter: f64) -> Result<DMatrix<f64>> {
    let kzz = cross_covariance(kernel, z.points(), z.points());
    linalg::cholesky_jittered(&kzz, rel_jitter).map(|(l, _)| l)
}

/// Quantities of one process at fixed data times that do not depend on `q`.
#[derive(Debug, Clone)]
pub(crate) struct ProcessProjection {
    /// `K_tZ L_K⁻ᵀ`
    pub b: DMatrix<f64>,
    /// `diag(K_tt) - rowsum(B²)`, the prior variance unexplained by `Z`.
    pub residual_var: DVector<f64>,
}

impl ProcessProjection {
    pub fn new(kernel: &MsmKernel, z: &InducingSet, prior_chol: &DMatrix<f64>, times: &[f64]) -> Self {
        let kzt = cross_covariance(kernel, z.points(), times);
        let b = linalg::solve_lower(prior_chol, &kzt).transpose();
        let ktt = kernel.eval(0.0);
        let residual_var = DVector::from_fn(times.len(), |i, _| ktt - b.row(i).norm_squared());
        Self { b, residual_var }
    }

    /// Marginal moments under the whitened `q`, plus `B L̃` for gradients.
    pub fn moments(&self, q: &VariationalGaussian) -> (MarginalMoments, DMatrix<f64>) {
        let mean = &self.b * &q.mean;
        let bl = &self.b * &q.cov_chol;
        let mut clipped = 0;
        let vars = (0..self.b.nrows())
            .map(|i| {
                let v = self.residual_var[i] + bl.row(i).norm_squared();
                if v < VARIANCE_FLOOR {
                    clipped += 1;
                    VARIANCE_FLOOR
                } else {
                    v
                }
            })
            .collect();
        (
            MarginalMoments {
                means: mean.as_slice().to_vec(),
                vars,
                clipped,
            },
            bl,
        )
    }
}

/// Sparse-GP marginals of `q(h(t))` for the unwhitened `q`: mean `A m`,
/// variance `diag(K_tt - A K_ZZ Aᵀ + A S Aᵀ)` with `A = K_tZ K_ZZ⁻¹`.
///
/// `jitter` is relative to the mean prior variance at `Z` and escalates up
/// to 1e-3 before a numerical error is returned.
pub fn predict_marginals(
    kernel: &MsmKernel,
    z: &InducingSet,
    q: &VariationalGaussian,
    times: &[f64],
    jitter: f64,
) -> Result<MarginalMoments> {
    if q.dim() != z.len() {
        return Err(Error::param(format!(
            "posterior has dimension {} but there are {} inducing points",
            q.dim(),
            z.len()
        )));
    }
    let lk = prior_cholesky(kernel, z, jitter)?;
    let white = whiten(&lk, q);
    let proj = ProcessProjection::new(kernel, z, &lk, times);
    Ok(proj.moments(&white).0)
}

/// Whitened coordinates of `q` given `chol(K_ZZ)`.
pub fn whiten(prior_chol: &DMatrix<f64>, q: &VariationalGaussian) -> VariationalGaussian {
    let mean = linalg::solve_lower_vec(prior_chol, &q.mean);
    let cov_chol = linalg::solve_lower(prior_chol, &q.cov_chol);
    VariationalGaussian { mean, cov_chol }
}

/// `KL(N(m, S) || N(0, K))` with `K = prior_chol · prior_cholᵀ`.
pub fn kl_gaussian(q: &VariationalGaussian, prior_chol: &DMatrix<f64>) -> Result<f64> {
    let m = q.dim();
    if prior_chol.nrows() != m || prior_chol.ncols() != m {
        return Err(Error::param(format!(
            "prior factor is {}x{} but the posterior has dimension {m}",
            prior_chol.nrows(),
            prior_chol.ncols()
        )));
    }
    let white = whiten(prior_chol, q);
    let log_det_prior = linalg::logdet_from_chol(prior_chol);
    let log_det_q = 2.0 * q.cov_chol.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    let kl = 0.5
        * (white.cov_chol.norm_squared() + white.mean.norm_squared() - m as f64 + log_det_prior
            - log_det_q);
    Ok(kl.max(0.0))
}

/// KL of a whitened posterior from `N(0, I)`.
pub(crate) fn kl_whitened(q: &VariationalGaussian) -> f64 {
    let m = q.dim() as f64;
    let log_det = 2.0 * q.cov_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    0.5 * (q.cov_chol.norm_squared() + q.mean.norm_squared() - m - log_det)
}
