//! Learning MSM kernels from isolated notes.
//!
//! Three learning modes are provided:
//!
//! * frequency-domain fitting ([`fit_msm_frequency_domain`]): the magnitude
//!   spectrum of the note is explained one peak at a time by a Lorentzian,
//!   subtracting each fitted peak before searching for the next;
//! * manual harmonic initialization ([`init_manual`]);
//! * marginal-likelihood refinement ([`refine_marginal_likelihood`]) of an
//!   existing kernel on a short time-domain snippet.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::{lorentzian, LorentzianComponent, MsmKernel};
use crate::linalg;

/// One-sided magnitude spectrum `|Ŷ(ω)|` on a uniform grid in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    pub freqs: Vec<f64>,
    pub mags: Vec<f64>,
    pub source_duration: f64,
    pub sample_rate: f64,
    pub fft_len: usize,
    /// Factor applied to raw DFT magnitudes (`1 / sample_rate`, so a magnitude
    /// approximates the continuous transform in amplitude·seconds).
    pub normalization: f64,
}

impl MagnitudeSpectrum {
    /// Builds a spectrum directly from values on the standard grid
    /// `k · sample_rate / fft_len`, `k = 0 ..= fft_len/2`.
    pub fn from_values(mags: Vec<f64>, sample_rate: f64, fft_len: usize) -> Result<Self> {
        if mags.len() != fft_len / 2 + 1 {
            return Err(Error::input(format!(
                "expected {} magnitudes for an FFT of length {fft_len}, got {}",
                fft_len / 2 + 1,
                mags.len()
            )));
        }
        if mags.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::input("magnitudes must be non-negative"));
        }
        let df = sample_rate / fft_len as f64;
        Ok(Self {
            freqs: (0..mags.len()).map(|k| k as f64 * df).collect(),
            mags,
            source_duration: fft_len as f64 / sample_rate,
            sample_rate,
            fft_len,
            normalization: 1.0 / sample_rate,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.fft_len as f64
    }

    pub fn energy(&self) -> f64 {
        self.mags.iter().map(|m| m * m).sum()
    }
}

/// Analysis window applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FtOptions {
    pub window: Window,
}

/// Magnitude spectrum with the default options (no window, FFT length the
/// next power of two).
pub fn magnitude_ft(samples: &[f64], sample_rate: f64) -> Result<MagnitudeSpectrum> {
    magnitude_ft_with(samples, sample_rate, &FtOptions::default())
}

pub fn magnitude_ft_with(
    samples: &[f64],
    sample_rate: f64,
    opts: &FtOptions,
) -> Result<MagnitudeSpectrum> {
    if samples.len() < 2 {
        return Err(Error::input(format!(
            "magnitude spectrum needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::input(format!("sample rate must be positive, got {sample_rate}")));
    }
    let n = samples.len();
    let fft_len = n.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); fft_len];
    for (i, (&x, slot)) in samples.iter().zip(buf.iter_mut()).enumerate() {
        let w = match opts.window {
            Window::Rectangular => 1.0,
            Window::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos(),
        };
        *slot = Complex::new(x * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(fft_len).process(&mut buf);
    let normalization = 1.0 / sample_rate;
    let mags = buf[..=fft_len / 2]
        .iter()
        .map(|c| c.norm() * normalization)
        .collect();
    let df = sample_rate / fft_len as f64;
    Ok(MagnitudeSpectrum {
        freqs: (0..=fft_len / 2).map(|k| k as f64 * df).collect(),
        mags,
        source_duration: n as f64 / sample_rate,
        sample_rate,
        fft_len,
        normalization,
    })
}

/// How the residual spectrum is updated after a peak has been fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualRule {
    /// `|L(ω; θ) - R(ω)|`, the literal update.
    #[default]
    Absolute,
    /// `max(R(ω) - L(ω; θ), 0)`.
    Rectified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Half-width of the local least-squares window around each peak.
    pub peak_window_hz: f64,
    pub residual_rule: ResidualRule,
    /// Peaks below this fraction of the global maximum are not resolvable.
    pub min_relative_peak: f64,
    pub max_lm_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            peak_window_hz: 40.0,
            residual_rule: ResidualRule::Absolute,
            min_relative_peak: 1e-6,
            max_lm_iters: 200,
        }
    }
}

/// Outcome of frequency-domain fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Fitted components in extraction order.
    pub components: Vec<LorentzianComponent>,
    /// Location of the residual maximum that seeded each component.
    pub peak_freqs_hz: Vec<f64>,
    /// `‖R‖₂` of the input spectrum before any extraction.
    pub initial_residual_l2: f64,
    /// `‖R‖₂` after each extraction.
    pub residual_l2: Vec<f64>,
    /// Peaks whose local fit did not converge and kept their initialization.
    pub flagged: Vec<bool>,
    pub requested: usize,
}

impl FitReport {
    pub fn n_found(&self) -> usize {
        self.components.len()
    }

    pub fn stopped_early(&self) -> bool {
        self.components.len() < self.requested
    }

    pub fn total_residual_l2(&self) -> f64 {
        self.residual_l2.last().copied().unwrap_or(self.initial_residual_l2)
    }

    /// The fitted kernel; fails when no peak was resolvable.
    pub fn kernel(&self) -> Result<MsmKernel> {
        MsmKernel::new(self.components.clone())
    }
}

/// Greedy peak-by-peak Lorentzian fit of a magnitude spectrum.
///
/// For each of `n_harmonics` iterations: take the arg-max `ω*` of the current
/// residual, initialize `θ = {σ², λ, ω₀ = ω*}`, least-squares fit `L(ω; θ)` to
/// the residual within `ω* ± peak_window_hz`, then replace the residual by
/// `|L(ω; θ) - R(ω)|` over the whole spectrum.
pub fn fit_msm_frequency_domain(
    spec: &MagnitudeSpectrum,
    n_harmonics: usize,
    peak_window_hz: f64,
) -> Result<FitReport> {
    fit_msm_frequency_domain_with(
        spec,
        n_harmonics,
        &FitOptions {
            peak_window_hz,
            ..FitOptions::default()
        },
    )
}

pub fn fit_msm_frequency_domain_with(
    spec: &MagnitudeSpectrum,
    n_harmonics: usize,
    opts: &FitOptions,
) -> Result<FitReport> {
    if n_harmonics == 0 {
        return Err(Error::param("n_harmonics must be at least 1"));
    }
    if spec.freqs.len() != spec.mags.len() || spec.freqs.len() < 3 {
        return Err(Error::input("spectrum needs matching freqs/mags with at least 3 bins"));
    }
    if !(opts.peak_window_hz > 0.0) {
        return Err(Error::param("peak window must be positive"));
    }
    let omegas: Vec<f64> = spec.freqs.iter().map(|f| 2.0 * PI * f).collect();
    let bin_hz = spec.freqs[1] - spec.freqs[0];
    let mut residual = spec.mags.clone();
    let global_max = residual.iter().copied().fold(0.0, f64::max);
    let l2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut report = FitReport {
        components: Vec::new(),
        peak_freqs_hz: Vec::new(),
        initial_residual_l2: l2(&residual),
        residual_l2: Vec::new(),
        flagged: Vec::new(),
        requested: n_harmonics,
    };

    for _ in 0..n_harmonics {
        let (peak_idx, peak_val) = residual
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        if !(global_max > 0.0) || peak_val < opts.min_relative_peak * global_max {
            break;
        }
        let peak_hz = spec.freqs[peak_idx];
        let lo = spec.freqs.partition_point(|&f| f < peak_hz - opts.peak_window_hz);
        let hi = spec.freqs.partition_point(|&f| f <= peak_hz + opts.peak_window_hz);

        let decay0 = 2.0 * PI * 2.0 * bin_hz;
        let init = [
            (peak_val * decay0 / (2.0 * PI)).ln(),
            decay0.ln(),
            omegas[peak_idx],
        ];
        let window_omega = (omegas[lo], omegas[hi - 1]);
        let (params, converged) = fit_local_lorentzian(
            &omegas[lo..hi],
            &residual[lo..hi],
            init,
            window_omega,
            opts.max_lm_iters,
        );
        let params = if converged { params } else { init };
        let comp = LorentzianComponent::new(params[0].exp(), params[1].exp(), params[2].max(0.0))?;

        for (r, &w) in residual.iter_mut().zip(&omegas) {
            let l = lorentzian(w, comp.variance, comp.decay, comp.center_freq);
            *r = match opts.residual_rule {
                ResidualRule::Absolute => (l - *r).abs(),
                ResidualRule::Rectified => (*r - l).max(0.0),
            };
        }
        report.components.push(comp);
        report.peak_freqs_hz.push(peak_hz);
        report.residual_l2.push(l2(&residual));
        report.flagged.push(!converged);
    }
    Ok(report)
}

/// Lorentzian and its partial derivatives with respect to
/// `(ln σ², ln λ, ω₀)`.
#[inline]
fn lorentzian_jac(omega: f64, p: &[f64; 3]) -> (f64, [f64; 3]) {
    let var = p[0].exp();
    let lam = p[1].exp();
    let d = omega - p[2];
    let den = lam * lam + d * d;
    let l = 2.0 * PI * var * lam / den;
    let dl_dlam = 2.0 * PI * var * (d * d - lam * lam) / (den * den);
    let dl_dw0 = 2.0 * PI * var * lam * 2.0 * d / (den * den);
    (l, [l, lam * dl_dlam, dl_dw0])
}

/// Levenberg-Marquardt with Marquardt (diagonal) damping, so the iterates are
/// invariant to rescaling the target. Returns the parameters and whether the
/// fit converged to something at least as good as the start inside the window.
fn fit_local_lorentzian(
    omegas: &[f64],
    target: &[f64],
    init: [f64; 3],
    window: (f64, f64),
    max_iters: usize,
) -> ([f64; 3], bool) {
    let cost = |p: &[f64; 3]| -> f64 {
        omegas
            .iter()
            .zip(target)
            .map(|(&w, &t)| {
                let (l, _) = lorentzian_jac(w, p);
                (l - t) * (l - t)
            })
            .sum()
    };
    let mut p = init;
    let initial_cost = cost(&p);
    let mut c = initial_cost;
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..max_iters {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&w, &t) in omegas.iter().zip(target) {
            let (l, j) = lorentzian_jac(w, &p);
            let r = l - t;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let grad_norm = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm == 0.0 || c == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = nalgebra::Matrix3::<f64>::zeros();
            for r in 0..3 {
                for s in 0..3 {
                    a[(r, s)] = jtj[r][s];
                }
                a[(r, r)] += mu * jtj[r][r].max(1e-300);
            }
            let rhs = nalgebra::Vector3::new(-jtr[0], -jtr[1], -jtr[2]);
            let Some(step) = a.lu().solve(&rhs) else {
                mu *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let tc = cost(&trial);
            if tc.is_finite() && tc <= c {
                let rel = (c - tc) / c.max(f64::MIN_POSITIVE);
                let small_step = step[0].abs() < 1e-12
                    && step[1].abs() < 1e-12
                    && step[2].abs() < 1e-12 * trial[2].abs().max(1.0);
                p = trial;
                c = tc;
                mu = (mu / 10.0).max(1e-12);
                accepted = true;
                if rel < 1e-14 || small_step {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let inside = p[2] >= window.0 && p[2] <= window.1;
    let ok = converged
        && inside
        && p.iter().all(|v| v.is_finite())
        && c <= initial_cost;
    (p, ok)
}

/// Perfect-harmonic kernel: components at `j · f0` for `j = 1..=n`, all with
/// the same variance and length-scale.
pub fn init_manual(
    f0_hz: f64,
    n_harmonics: usize,
    variance: f64,
    lengthscale_s: f64,
) -> Result<MsmKernel> {
    if !(f0_hz > 0.0) {
        return Err(Error::param(format!("f0 must be positive, got {f0_hz}")));
    }
    if n_harmonics == 0 {
        return Err(Error::param("n_harmonics must be at least 1"));
    }
    if !(lengthscale_s > 0.0) {
        return Err(Error::param("length-scale must be positive"));
    }
    let w1 = 2.0 * PI * f0_hz;
    let comps = (1..=n_harmonics)
        .map(|j| LorentzianComponent::new(variance, 1.0 / lengthscale_s, j as f64 * w1))
        .collect::<Result<Vec<_>>>()?;
    MsmKernel::new(comps)
}

/// Manual initialization with the default variance `1/N_h` and length-scale 0.5 s.
pub fn init_manual_default(f0_hz: f64, n_harmonics: usize) -> Result<MsmKernel> {
    init_manual(f0_hz, n_harmonics, 1.0 / n_harmonics.max(1) as f64, 0.5)
}

/// Options for marginal-likelihood refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlOptions {
    pub max_iters: usize,
    /// Observation noise variance; `None` uses `1e-3 ·` mean signal power.
    pub noise_var: Option<f64>,
    /// Initial step in the normalized parameter space.
    pub initial_step: f64,
}

impl Default for MlOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            noise_var: None,
            initial_step: 0.05,
        }
    }
}

/// Result of [`refine_marginal_likelihood`].
#[derive(Debug, Clone)]
pub struct MlRefinement {
    pub kernel: MsmKernel,
    /// Log marginal likelihood after every accepted step, starting with `k0`.
    pub lml_trace: Vec<f64>,
    /// Set when the starting kernel could not be factorized; `kernel` is then `k0`.
    pub failed: bool,
    pub noise_var: f64,
}

impl MlRefinement {
    pub fn initial_lml(&self) -> f64 {
        self.lml_trace.first().copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn final_lml(&self) -> f64 {
        self.lml_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Largest snippet accepted by [`refine_marginal_likelihood`].
pub const MAX_ML_SAMPLES: usize = 4096;

/// Exact GP log marginal likelihood `log N(y | 0, K + ν² I)`.
pub fn log_marginal_likelihood(
    k: &MsmKernel,
    samples: &[f64],
    times: &[f64],
    noise_var: f64,
) -> Result<f64> {
    let problem = MlProblem::new(samples, times, noise_var)?;
    Ok(problem.evaluate(k, false)?.0)
}

/// Gradient ascent on the exact log marginal likelihood of a training snippet.
///
/// Parameters are `ln σ²`, `ln λ` and the centre frequency measured in units
/// of the snippet's frequency resolution. Steps follow an RMS-normalized
/// gradient and are only accepted when the likelihood increases, so the
/// returned kernel never scores below `k0`.
pub fn refine_marginal_likelihood(
    k0: &MsmKernel,
    samples: &[f64],
    times: &[f64],
    max_iters: usize,
) -> Result<MlRefinement> {
    refine_marginal_likelihood_with(
        k0,
        samples,
        times,
        &MlOptions {
            max_iters,
            ..MlOptions::default()
        },
    )
}

pub fn refine_marginal_likelihood_with(
    k0: &MsmKernel,
    samples: &[f64],
    times: &[f64],
    opts: &MlOptions,
) -> Result<MlRefinement> {
    if samples.len() > MAX_ML_SAMPLES {
        return Err(Error::input(format!(
            "marginal-likelihood refinement accepts at most {MAX_ML_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.len() != times.len() || samples.is_empty() {
        return Err(Error::input("samples and times must be non-empty and of equal length"));
    }
    let power = samples.iter().map(|y| y * y).sum::<f64>() / samples.len() as f64;
    let noise_var = opts.noise_var.unwrap_or((1e-3 * power).max(1e-10));
    let problem = MlProblem::new(samples, times, noise_var)?;

    let (lml0, grad0) = match problem.evaluate(k0, true) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => {
            return Ok(MlRefinement {
                kernel: k0.clone(),
                lml_trace: vec![],
                failed: true,
                noise_var,
            })
        }
        Err(e) => return Err(e),
    };
    let span = (times[times.len() - 1] - times[0]).abs().max(1e-3);
    let freq_unit = 2.0 * PI / span;
    let to_params = |k: &MsmKernel| -> Vec<f64> {
        k.components()
            .iter()
            .flat_map(|c| [c.variance.max(1e-300).ln(), c.decay.ln(), c.center_freq / freq_unit])
            .collect()
    };
    let from_params = |p: &[f64]| -> Result<MsmKernel> {
        MsmKernel::new(
            p.chunks(3)
                .map(|c| LorentzianComponent::new(c[0].exp(), c[1].exp(), (c[2] * freq_unit).max(0.0)))
                .collect::<Result<Vec<_>>>()?,
        )
    };

    let mut params = to_params(k0);
    let mut kernel = k0.clone();
    let mut lml = lml0;
    let mut grad = chain_to_params(&kernel, grad0.unwrap_or_default(), freq_unit);
    let mut trace = vec![lml];
    let mut sq_avg: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let mut step = opts.initial_step;

    for _ in 0..opts.max_iters {
        for (s, g) in sq_avg.iter_mut().zip(&grad) {
            *s = 0.9 * *s + 0.1 * g * g;
        }
        let dir: Vec<f64> = grad
            .iter()
            .zip(&sq_avg)
            .map(|(g, s)| g / (s.sqrt() + 1e-12))
            .collect();
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let Ok(tk) = from_params(&trial) else {
                step *= 0.5;
                continue;
            };
            match problem.evaluate(&tk, true) {
                Ok((tl, tg)) if tl.is_finite() && tl > lml => {
                    // Components may have been re-sorted by variance.
                    params = to_params(&tk);
                    kernel = tk;
                    lml = tl;
                    grad = chain_to_params(&kernel, tg.unwrap_or_default(), freq_unit);
                    trace.push(lml);
                    step *= 1.2;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(MlRefinement {
        kernel,
        lml_trace: trace,
        failed: false,
        noise_var,
    })
}

/// Converts gradients in `(σ², λ, ω₀)` to the optimizer's parameters.
fn chain_to_params(k: &MsmKernel, raw: Vec<[f64; 3]>, freq_unit: f64) -> Vec<f64> {
    k.components()
        .iter()
        .zip(raw)
        .flat_map(|(c, g)| [g[0] * c.variance, g[1] * c.decay, g[2] * freq_unit])
        .collect()
}

/// Precomputed data for exact-GP likelihood evaluation.
struct MlProblem<'a> {
    y: DVector<f64>,
    times: &'a [f64],
    noise_var: f64,
    /// Regular sampling step, enabling per-lag accumulation of the gradient.
    step: Option<f64>,
}

impl<'a> MlProblem<'a> {
    fn new(samples: &[f64], times: &'a [f64], noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) {
            return Err(Error::param("noise variance must be positive"));
        }
        let n = times.len();
        let step = if n >= 2 {
            let s = (times[n - 1] - times[0]) / (n - 1) as f64;
            let regular = s > 0.0
                && times
                    .iter()
                    .enumerate()
                    .all(|(i, &t)| (t - times[0] - i as f64 * s).abs() <= 1e-7 * s);
            regular.then_some(s)
        } else {
            None
        };
        Ok(Self {
            y: DVector::from_column_slice(samples),
            times,
            noise_var,
            step,
        })
    }

    /// Log marginal likelihood and, optionally, its gradient with respect to
    /// `(σ², λ, ω₀)` of each component.
    fn evaluate(&self, k: &MsmKernel, with_grad: bool) -> Result<(f64, Option<Vec<[f64; 3]>>)> {
        let n = self.times.len();
        let mut kmat = crate::kernels::cross_covariance(k, self.times, self.times);
        for i in 0..n {
            kmat[(i, i)] += self.noise_var;
        }
        let (l, _) = linalg::cholesky_jittered(&kmat, 0.0)?;
        let a = linalg::solve_lower_vec(&l, &self.y);
        let lml = -0.5 * a.norm_squared()
            - 0.5 * linalg::logdet_from_chol(&l)
            - 0.5 * n as f64 * (2.0 * PI).ln();
        if !with_grad {
            return Ok((lml, None));
        }
        let alpha = l.transpose().solve_upper_triangular(&a).expect("non-singular factor");
        let linv = linalg::solve_lower(&l, &DMatrix::identity(n, n));
        let kinv = linv.transpose() * &linv;
        // W = α αᵀ - K⁻¹ ; dLML/dθ = ½ Σ_ij W_ij ∂K_ij/∂θ
        let lagged: Vec<(f64, f64)> = match self.step {
            Some(step) => {
                let mut sums = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        sums[i.abs_diff(j)] += alpha[i] * alpha[j] - kinv[(i, j)];
                    }
                }
                sums.into_iter()
                    .enumerate()
                    .map(|(lag, w)| (lag as f64 * step, w))
                    .collect()
            }
            None => {
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        out.push((self.times[i] - self.times[j], alpha[i] * alpha[j] - kinv[(i, j)]));
                    }
                }
                out
            }
        };
        let grads = k
            .components()
            .iter()
            .map(|c| {
                let mut g = [0.0; 3];
                for &(r, w) in &lagged {
                    let ar = r.abs();
                    let e = (-c.decay * ar).exp();
                    let (s, co) = (c.center_freq * r).sin_cos();
                    g[0] += w * e * co;
                    g[1] += w * c.variance * (-ar) * e * co;
                    g[2] += w * c.variance * e * (-s) * r;
                }
                [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]]
            })
            .collect();
        Ok((lml, Some(grads)))
    }
}
