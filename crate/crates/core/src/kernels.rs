//! Matérn spectral mixture (MSM) kernels.
//!
//! A component is a Matérn-½ kernel shifted to a centre frequency,
//! `σ² exp(-λ|r|) cos(ω₀ r)`, whose spectral density is the Lorentzian pair
//! `L(ω) + L(-ω)` with `L(ω) = 2πσ²λ / (λ² + (ω - ω₀)²)`. An [`MsmKernel`] sums
//! one such component per partial of a note.
//!
//! Frequencies are angular (rad/s) inside the library. The on-disk
//! [`KernelFile`] stores Hz and length-scales in seconds.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative jitter applied to the mean diagonal of square Gram matrices.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;

/// Matérn-½ covariance `σ² exp(-λ r)` at absolute lag `r`.
pub fn matern12(r: f64, variance: f64, decay: f64) -> Result<f64> {
    if !(decay > 0.0) || !decay.is_finite() {
        return Err(Error::param(format!("Matérn decay must be positive, got {decay}")));
    }
    Ok(variance * (-decay * r.abs()).exp())
}

/// Unit-variance cosine kernel `cos(2π f₀ r)` with `f₀` in Hz.
pub fn cosine_kernel(r: f64, f0_hz: f64) -> f64 {
    (2.0 * PI * f0_hz * r).cos()
}

/// One-sided Lorentzian `2πσ²λ / (λ² + (ω - ω₀)²)`.
#[inline]
pub fn lorentzian(omega: f64, variance: f64, decay: f64, center: f64) -> f64 {
    let d = omega - center;
    2.0 * PI * variance * decay / (decay * decay + d * d)
}

/// Hyperparameters `{σ², λ, ω₀}` of one damped-cosine component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianComponent {
    pub variance: f64,
    /// λ = 1 / length-scale, in 1/s.
    pub decay: f64,
    /// ω₀ in rad/s.
    pub center_freq: f64,
}

impl LorentzianComponent {
    pub fn new(variance: f64, decay: f64, center_freq: f64) -> Result<Self> {
        let c = Self {
            variance,
            decay,
            center_freq,
        };
        c.validate()?;
        Ok(c)
    }

    /// Builds a component from file units: length-scale in seconds and centre in Hz.
    pub fn from_hz(variance: f64, lengthscale_s: f64, freq_hz: f64) -> Result<Self> {
        if !(lengthscale_s > 0.0) {
            return Err(Error::param(format!(
                "length-scale must be positive, got {lengthscale_s}"
            )));
        }
        Self::new(variance, 1.0 / lengthscale_s, 2.0 * PI * freq_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0) || !self.decay.is_finite() {
            return Err(Error::param(format!("decay must be positive, got {}", self.decay)));
        }
        if !(self.variance >= 0.0) || !self.variance.is_finite() {
            return Err(Error::param(format!(
                "variance must be non-negative, got {}",
                self.variance
            )));
        }
        if !(self.center_freq >= 0.0) || !self.center_freq.is_finite() {
            return Err(Error::param(format!(
                "centre frequency must be non-negative, got {}",
                self.center_freq
            )));
        }
        Ok(())
    }

    pub fn freq_hz(&self) -> f64 {
        self.center_freq / (2.0 * PI)
    }

    pub fn lengthscale_s(&self) -> f64 {
        1.0 / self.decay
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.variance * (-self.decay * r.abs()).exp() * (self.center_freq * r).cos()
    }

    /// `L(ω; θ) + L(-ω; θ)`.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        lorentzian(omega, self.variance, self.decay, self.center_freq)
            + lorentzian(-omega, self.variance, self.decay, self.center_freq)
    }
}

/// Sum of damped cosines, `k(r) = Σ_j σ_j² exp(-λ_j |r|) cos(ω₀_j r)`.
///
/// Components are kept sorted by descending variance so serialized kernels
/// are canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct MsmKernel {
    components: Vec<LorentzianComponent>,
}

impl MsmKernel {
    pub fn new(mut components: Vec<LorentzianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("an MSM kernel needs at least one component"));
        }
        for c in &components {
            c.validate()?;
        }
        components.sort_by(|a, b| b.variance.total_cmp(&a.variance));
        Ok(Self { components })
    }

    /// A single non-oscillating Matérn-½ component.
    pub fn matern(variance: f64, lengthscale_s: f64) -> Result<Self> {
        Self::new(vec![LorentzianComponent::from_hz(variance, lengthscale_s, 0.0)?])
    }

    pub fn components(&self) -> &[LorentzianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `k(0) = Σ σ_j²`.
    pub fn variance_sum(&self) -> f64 {
        self.components.iter().map(|c| c.variance).sum()
    }

    /// Covariance at lag `r`; the damping uses `|r|`, so the kernel is even.
    pub fn eval(&self, r: f64) -> f64 {
        self.components.iter().map(|c| c.eval(r)).sum()
    }

    /// `Σ_j L(ω; θ_j) + L(-ω; θ_j)`; even in `ω` and never negative.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        self.components.iter().map(|c| c.spectral_density(omega)).sum()
    }

    /// Multiplies every variance by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .map(|c| LorentzianComponent::new(c.variance * factor, c.decay, c.center_freq))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    /// Rescales variances so that `k(0)` equals `target`.
    pub fn with_total_variance(&self, target: f64) -> Result<Self> {
        let total = self.variance_sum();
        if !(total > 0.0) {
            return Err(Error::param("cannot rescale a kernel with zero total variance"));
        }
        self.scaled(target / total)
    }

    /// Kernel whose components are the union of both inputs; its spectral
    /// density is the sum of theirs.
    pub fn concat(kernels: &[&MsmKernel]) -> Result<Self> {
        Self::new(
            kernels
                .iter()
                .flat_map(|k| k.components.iter().copied())
                .collect(),
        )
    }

    /// Default jitter for a Gram matrix of this kernel.
    pub fn default_jitter(&self) -> f64 {
        DEFAULT_RELATIVE_JITTER * self.variance_sum().max(f64::MIN_POSITIVE)
    }
}

/// Free-function form of [`MsmKernel::eval`].
pub fn msm_eval(k: &MsmKernel, r: f64) -> f64 {
    k.eval(r)
}

/// Free-function form of [`MsmKernel::spectral_density`].
pub fn msm_spectral_density(k: &MsmKernel, omega: f64) -> f64 {
    k.spectral_density(omega)
}

/// A covariance matrix together with the jitter that was added to its diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub jitter: f64,
}

/// Gram matrix `K[i, j] = k(a_i - b_j)`; `jitter` is added to the diagonal
/// only when `a` and `b` are the same time vector.
pub fn build_gram(k: &MsmKernel, times_a: &[f64], times_b: &[f64], jitter: f64) -> GramMatrix {
    let square = times_a == times_b;
    let mut values = cross_covariance(k, times_a, times_b);
    let applied = if square && jitter > 0.0 {
        for i in 0..times_a.len() {
            values[(i, i)] += jitter;
        }
        jitter
    } else {
        0.0
    };
    GramMatrix {
        values,
        jitter: applied,
    }
}

/// Uniform spacing of `times` if they lie on a regular grid.
fn grid_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let step = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(step > 0.0) {
        return None;
    }
    let tol = 1e-7 * step;
    times
        .iter()
        .enumerate()
        .all(|(i, &t)| (t - (times[0] + i as f64 * step)).abs() <= tol)
        .then_some(step)
}

/// Integer offset of `t` on a grid anchored at `origin` with spacing `step`.
fn grid_index(t: f64, origin: f64, step: f64) -> Option<i64> {
    let x = (t - origin) / step;
    let r = x.round();
    ((x - r).abs() <= 1e-6).then_some(r as i64)
}

/// Cross-covariance `K[i, j] = k(a_i - b_j)`.
///
/// When `a` is a regular grid and every `b_j` sits on it, the kernel is
/// tabulated once per integer lag.
pub fn cross_covariance(k: &MsmKernel, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let (n, m) = (a.len(), b.len());
    if let Some(step) = grid_step(a) {
        let idx: Option<Vec<i64>> = b.iter().map(|&t| grid_index(t, a[0], step)).collect();
        if let Some(idx) = idx {
            let lo = idx.iter().min().copied().unwrap_or(0).min(0);
            let hi = idx.iter().max().copied().unwrap_or(0).max(0);
            // lag (i - j_idx) ranges over [-(hi), n-1-lo]; the kernel is even.
            let max_lag = (n as i64 - 1 - lo).max(hi) as usize;
            if max_lag <= 4 * (n + m) + 16 {
                let table: Vec<f64> = (0..=max_lag).map(|l| k.eval(l as f64 * step)).collect();
                return DMatrix::from_fn(n, m, |i, j| {
                    let lag = (i as i64 - idx[j]).unsigned_abs() as usize;
                    table[lag]
                });
            }
        }
    }
    DMatrix::from_fn(n, m, |i, j| k.eval(a[i] - b[j]))
}

/// One component as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub variance: f64,
    pub lengthscale_s: f64,
    pub freq_hz: f64,
}

/// JSON kernel parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub pitch_label: String,
    pub components: Vec<ComponentRecord>,
}

impl KernelFile {
    pub fn from_kernel(pitch_label: impl Into<String>, k: &MsmKernel) -> Self {
        Self {
            pitch_label: pitch_label.into(),
            components: k
                .components()
                .iter()
                .map(|c| ComponentRecord {
                    variance: c.variance,
                    lengthscale_s: c.lengthscale_s(),
                    freq_hz: c.freq_hz(),
                })
                .collect(),
        }
    }

    pub fn to_kernel(&self) -> Result<MsmKernel> {
        MsmKernel::new(
            self.components
                .iter()
                .map(|c| LorentzianComponent::from_hz(c.variance, c.lengthscale_s, c.freq_hz))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
