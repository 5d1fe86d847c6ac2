//! Mixture likelihoods: `y(t) = Σ_m φ_m(t) w_m(t) + ε`.
//!
//! * sigmoid: `φ_m = σ(g_m)` independently per source;
//! * softmax: `φ = softmax(g_0, …, g_M)` with a silence slot `g_0` whose
//!   component is identically zero;
//! * leave-one-out: a two-source sigmoid model whose second component kernel
//!   merges every pitch except the target.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MsmKernel;
use crate::quadrature::{self, sigmoid_moments, GaussHermiteRule};
use crate::vgp::{MarginalMoments, ProcessProjection, VariationalState};

/// Default activation prior: Matérn-½ with this variance ...
pub const ACTIVATION_VARIANCE: f64 = 4.0;
/// ... and this length-scale in seconds.
pub const ACTIVATION_LENGTHSCALE_S: f64 = 0.5;

pub fn default_activation_kernel() -> MsmKernel {
    MsmKernel::matern(ACTIVATION_VARIANCE, ACTIVATION_LENGTHSCALE_S)
        .expect("default activation prior is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sigmoid,
    Softmax,
    SigmoidLoo,
}

/// Kernels and labels of a mixture model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub component_kernels: Vec<MsmKernel>,
    pub activation_kernels: Vec<MsmKernel>,
    pub pitch_labels: Vec<String>,
    /// Prior of the silence activation `g_0`; present only for softmax models.
    pub silence_kernel: Option<MsmKernel>,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        component_kernels: Vec<MsmKernel>,
        activation_kernels: Vec<MsmKernel>,
        pitch_labels: Vec<String>,
    ) -> Result<Self> {
        let m = component_kernels.len();
        if m == 0 {
            return Err(Error::param("a model needs at least one source"));
        }
        if activation_kernels.len() != m || pitch_labels.len() != m {
            return Err(Error::param(format!(
                "{m} component kernels but {} activation kernels and {} labels",
                activation_kernels.len(),
                pitch_labels.len()
            )));
        }
        if kind == ModelKind::SigmoidLoo && m != 2 {
            return Err(Error::param("a leave-one-out model has exactly two sources"));
        }
        let silence_kernel = (kind == ModelKind::Softmax).then(|| activation_kernels[0].clone());
        Ok(Self {
            kind,
            component_kernels,
            activation_kernels,
            pitch_labels,
            silence_kernel,
        })
    }

    /// Model with the default activation prior for every source.
    pub fn with_default_activations(
        kind: ModelKind,
        component_kernels: Vec<MsmKernel>,
        pitch_labels: Vec<String>,
    ) -> Result<Self> {
        let acts = vec![default_activation_kernel(); component_kernels.len()];
        Self::new(kind, component_kernels, acts, pitch_labels)
    }

    pub fn n_sources(&self) -> usize {
        self.component_kernels.len()
    }

    pub fn has_silence(&self) -> bool {
        self.kind == ModelKind::Softmax
    }

    /// Activation priors in state order (silence first for softmax).
    pub fn all_activation_kernels(&self) -> Vec<&MsmKernel> {
        self.silence_kernel
            .iter()
            .chain(self.activation_kernels.iter())
            .collect()
    }

    pub fn n_activations(&self) -> usize {
        self.n_sources() + usize::from(self.has_silence())
    }
}

/// Two-source sigmoid model: the target kernel against the union of the
/// other kernels' components.
pub fn build_loo_spec(target: &MsmKernel, others: &[MsmKernel]) -> Result<ModelSpec> {
    build_loo_spec_labeled(target, others, "target")
}

pub fn build_loo_spec_labeled(target: &MsmKernel, others: &[MsmKernel], target_label: &str) -> Result<ModelSpec> {
    if others.is_empty() {
        return Err(Error::param("leave-one-out needs at least one other kernel"));
    }
    let refs: Vec<&MsmKernel> = others.iter().collect();
    let rest = MsmKernel::concat(&refs)?;
    ModelSpec::with_default_activations(
        ModelKind::SigmoidLoo,
        vec![target.clone(), rest],
        vec![target_label.to_string(), "rest".to_string()],
    )
}

/// Expected log-likelihood of one point under a single sigmoid source.
pub fn sigmoid_point_loglik(
    y: f64,
    mf: f64,
    vf: f64,
    mg: f64,
    vg: f64,
    noise_var: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    quadrature::expect_loglik_1d_decomp(y, mf, vf, mg, vg, noise_var, rule)
}

/// `(mean, variance)` of a Gaussian marginal.
pub type Moment = (f64, f64);

fn check_moments(f: &[Moment], g: &[Moment], noise_var: f64) -> Result<()> {
    if f.is_empty() {
        return Err(Error::param("at least one source is required"));
    }
    if f.iter().chain(g).any(|(_, v)| !(*v >= 0.0)) {
        return Err(Error::param("marginal variances must be non-negative"));
    }
    if !(noise_var > 0.0) {
        return Err(Error::param(format!("noise variance must be positive, got {noise_var}")));
    }
    Ok(())
}

/// Expected log-likelihood of one point under `M` independent sigmoid sources,
/// using only per-source `E[σ(g)]` and `E[σ(g)²]`.
pub fn sigmoid_multi_point_loglik(
    y: f64,
    f: &[Moment],
    g: &[Moment],
    noise_var: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    check_moments(f, g, noise_var)?;
    if f.len() != g.len() {
        return Err(Error::param("sigmoid sources need one activation per component"));
    }
    let mut s = 0.0;
    let mut extra = 0.0;
    for (&(mf, vf), &(mg, vg)) in f.iter().zip(g) {
        let sm = sigmoid_moments(mg, vg, rule);
        s += mf * sm.e1;
        extra += (vf + mf * mf) * sm.e2 - mf * mf * sm.e1 * sm.e1;
    }
    let sq = (y - s) * (y - s) + extra;
    Ok(-0.5 * sq / noise_var - 0.5 * (2.0 * PI * noise_var).ln())
}

/// Gradient buffers for one point; `f` and `g` hold `(d/dmean, d/dvar)`.
#[derive(Debug, Clone, Default)]
pub(crate) struct PointGrad {
    pub f: Vec<Moment>,
    pub g: Vec<Moment>,
}

impl PointGrad {
    pub fn new(n_f: usize, n_g: usize) -> Self {
        Self {
            f: vec![(0.0, 0.0); n_f],
            g: vec![(0.0, 0.0); n_g],
        }
    }
}

/// Multi-source sigmoid expected log-likelihood with its gradient.
pub(crate) fn sigmoid_multi_with_grad(
    y: f64,
    f: &[Moment],
    g: &[Moment],
    noise_var: f64,
    rule: &GaussHermiteRule,
    grad: &mut PointGrad,
) -> f64 {
    let d = f.len();
    let mut s = 0.0;
    let mut extra = 0.0;
    let mut sms = [quadrature::SigmoidMoments::default(); 8];
    let mut heap = Vec::new();
    let sms: &mut [quadrature::SigmoidMoments] = if d <= 8 {
        &mut sms[..d]
    } else {
        heap.resize(d, quadrature::SigmoidMoments::default());
        &mut heap
    };
    for i in 0..d {
        let (mf, vf) = f[i];
        let sm = sigmoid_moments(g[i].0, g[i].1, rule);
        s += mf * sm.e1;
        extra += (vf + mf * mf) * sm.e2 - mf * mf * sm.e1 * sm.e1;
        sms[i] = sm;
    }
    let r = y - s;
    let c = -0.5 / noise_var;
    for i in 0..d {
        let (mf, vf) = f[i];
        let sm = &sms[i];
        let de_dmf = -2.0 * r * sm.e1 + 2.0 * mf * sm.e2 - 2.0 * mf * sm.e1 * sm.e1;
        let de_dvf = sm.e2;
        let de_da = -2.0 * r * mf - 2.0 * mf * mf * sm.e1;
        let de_db = vf + mf * mf;
        grad.f[i] = (c * de_dmf, c * de_dvf);
        grad.g[i] = (
            c * (de_da * sm.de1_dmean + de_db * sm.de2_dmean),
            c * (de_da * sm.de1_dvar + de_db * sm.de2_dvar),
        );
    }
    c * (r * r + extra) - 0.5 * (2.0 * PI * noise_var).ln()
}

/// Moments of the per-source weights at one point: `a[d] = E[w_d]` and
/// `w[d·D + e] = E[w_d w_e]`, with `w_d = σ(g_d)` (sigmoid) or the softmax
/// weight of source `d` (silence excluded).
pub(crate) fn source_weight_moments(
    kind: ModelKind,
    g: &[Moment],
    rule: &GaussHermiteRule,
    normals: &[f64],
    a: &mut [f64],
    w: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let d = a.len();
    w.iter_mut().for_each(|v| *v = 0.0);
    match kind {
        ModelKind::Sigmoid | ModelKind::SigmoidLoo => {
            for i in 0..d {
                let sm = sigmoid_moments(g[i].0, g[i].1, rule);
                a[i] = sm.e1;
                w[i * d + i] = sm.e2;
            }
            for i in 0..d {
                for e in 0..d {
                    if i != e {
                        w[i * d + e] = a[i] * a[e];
                    }
                }
            }
        }
        ModelKind::Softmax => {
            let j = g.len();
            let samples = normals.len() / j;
            scratch.resize(2 * j, 0.0);
            let (logits, phi) = scratch.split_at_mut(j);
            a.iter_mut().for_each(|v| *v = 0.0);
            for eps in normals.chunks_exact(j) {
                for k in 0..j {
                    logits[k] = g[k].0 + g[k].1.sqrt() * eps[k];
                }
                softmax_into(logits, phi);
                for i in 0..d {
                    a[i] += phi[i + 1];
                    for e in 0..d {
                        w[i * d + e] += phi[i + 1] * phi[e + 1];
                    }
                }
            }
            let inv = 1.0 / samples as f64;
            a.iter_mut().chain(w.iter_mut()).for_each(|v| *v *= inv);
        }
    }
}

/// Monte-Carlo settings for the softmax likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 0,
        }
    }
}

/// Monte-Carlo samples used when scoring a fitted softmax model.
pub const EVAL_MC_SAMPLES: usize = 100_000;

/// Standard normal draws for point `index`: `samples × n_act` values from a
/// generator keyed by `(seed, index)`, so any subset of points can be
/// evaluated independently and reproducibly.
pub(crate) fn point_normals(seed: u64, index: u64, samples: usize, n_act: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..samples * n_act).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Numerically stable softmax into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Softmax expected log-likelihood of one point by Monte Carlo over the
/// activations, with the components integrated analytically. `g` has `M + 1`
/// entries (silence first) and `f` has `M`.
pub fn softmax_point_loglik(
    y: f64,
    g: &[Moment],
    f: &[Moment],
    noise_var: f64,
    mc: &McConfig,
) -> Result<f64> {
    softmax_point_loglik_stderr(y, g, f, noise_var, mc, 0).map(|(v, _)| v)
}

/// Estimate and its Monte-Carlo standard error; `stream` selects an
/// independent random sequence for the same seed.
pub fn softmax_point_loglik_stderr(
    y: f64,
    g: &[Moment],
    f: &[Moment],
    noise_var: f64,
    mc: &McConfig,
    stream: u64,
) -> Result<(f64, f64)> {
    check_moments(f, g, noise_var)?;
    if g.len() != f.len() + 1 {
        return Err(Error::param("softmax needs one more activation than components (silence)"));
    }
    if mc.samples == 0 {
        return Err(Error::param("Monte-Carlo sample count must be positive"));
    }
    let j = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    rng.set_stream(stream);
    let mut logits = vec![0.0; j];
    let mut phi = vec![0.0; j];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..mc.samples {
        for (l, &(m, v)) in logits.iter_mut().zip(g) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *l = m + v.sqrt() * e;
        }
        softmax_into(&logits, &mut phi);
        let v = softmax_sample_loglik(y, &phi, f, noise_var);
        sum += v;
        sum_sq += v * v;
    }
    let n = mc.samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// `E_f[log N(y | Σ φ_m f_m, ν²)]` for fixed weights `phi` (silence first).
fn softmax_sample_loglik(y: f64, phi: &[f64], f: &[Moment], noise_var: f64) -> f64 {
    let mut s = 0.0;
    let mut extra = 0.0;
    for (p, &(mf, vf)) in phi[1..].iter().zip(f) {
        s += p * mf;
        extra += p * p * vf;
    }
    let r = y - s;
    -0.5 * (r * r + extra) / noise_var - 0.5 * (2.0 * PI * noise_var).ln()
}

/// Softmax Monte-Carlo estimate with reparameterization gradients, given the
/// standard normal draws for this point (`samples × (M+1)`).
pub(crate) fn softmax_with_grad(
    y: f64,
    g: &[Moment],
    f: &[Moment],
    noise_var: f64,
    normals: &[f64],
    grad: &mut PointGrad,
    scratch: &mut Vec<f64>,
) -> f64 {
    let j = g.len();
    let samples = normals.len() / j;
    scratch.resize(3 * j, 0.0);
    let (logits, rest) = scratch.split_at_mut(j);
    let (phi, c) = rest.split_at_mut(j);
    for gf in grad.f.iter_mut() {
        *gf = (0.0, 0.0);
    }
    for gg in grad.g.iter_mut() {
        *gg = (0.0, 0.0);
    }
    let sd: Vec<f64> = g.iter().map(|&(_, v)| v.sqrt()).collect();
    let mut total = 0.0;
    let inv_n = 1.0 / samples as f64;
    let inv_nu = 1.0 / noise_var;
    for eps in normals.chunks_exact(j) {
        for k in 0..j {
            logits[k] = g[k].0 + sd[k] * eps[k];
        }
        softmax_into(logits, phi);
        let mut s = 0.0;
        for (p, &(mf, _)) in phi[1..].iter().zip(f) {
            s += p * mf;
        }
        let r = y - s;
        total += softmax_sample_loglik(y, phi, f, noise_var);
        // c_k = dℓ/dφ_k; the silence slot has no component.
        c[0] = 0.0;
        for m in 1..j {
            let (mf, vf) = f[m - 1];
            let p = phi[m];
            c[m] = (r * mf - p * vf) * inv_nu;
            let gf = &mut grad.f[m - 1];
            gf.0 += r * p * inv_nu * inv_n;
            gf.1 += -0.5 * p * p * inv_nu * inv_n;
        }
        let avg_c: f64 = phi.iter().zip(c.iter()).map(|(p, c)| p * c).sum();
        for k in 0..j {
            let dg = phi[k] * (c[k] - avg_c);
            let gg = &mut grad.g[k];
            gg.0 += dg * inv_n;
            if sd[k] > 1e-6 {
                gg.1 += dg * eps[k] / (2.0 * sd[k]) * inv_n;
            }
        }
    }
    total * inv_n
}

/// Per-source activation and component marginals with point estimates
/// `φ̂_m(t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceDecomposition {
    pub times: Vec<f64>,
    pub pitch_labels: Vec<String>,
    /// Activation marginals in state order (silence first for softmax).
    pub activation_moments: Vec<MarginalMoments>,
    pub component_moments: Vec<MarginalMoments>,
    /// `φ̂` rows in state order (silence first for softmax).
    pub activations: Vec<Vec<f64>>,
    pub has_silence: bool,
}

impl SourceDecomposition {
    /// `φ̂` of source `m` (excluding the silence row).
    pub fn source_activation(&self, m: usize) -> &[f64] {
        &self.activations[m + usize::from(self.has_silence)]
    }

    pub fn silence_activation(&self) -> Option<&[f64]> {
        self.has_silence.then(|| self.activations[0].as_slice())
    }

    pub fn n_sources(&self) -> usize {
        self.component_moments.len()
    }

    /// Appends a decomposition of later times for the same model.
    pub fn append(&mut self, other: &SourceDecomposition) -> Result<()> {
        if self.times.is_empty() && self.activations.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.pitch_labels != self.pitch_labels || other.has_silence != self.has_silence {
            return Err(Error::input("cannot join decompositions of different models"));
        }
        self.times.extend_from_slice(&other.times);
        for (a, b) in self.activation_moments.iter_mut().zip(&other.activation_moments) {
            a.extend(b);
        }
        for (a, b) in self.component_moments.iter_mut().zip(&other.component_moments) {
            a.extend(b);
        }
        for (a, b) in self.activations.iter_mut().zip(&other.activations) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    /// Largest deviation of `Σ_m φ̂_m(t)` from 1 (softmax models only).
    pub fn max_normalization_error(&self) -> f64 {
        if !self.has_silence {
            return 0.0;
        }
        (0..self.times.len())
            .map(|i| (self.activations.iter().map(|row| row[i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Marginals and activation point estimates of a fitted state at `times`.
pub fn decompose(model: &ModelSpec, state: &VariationalState, times: &[f64]) -> Result<SourceDecomposition> {
    decompose_with_jitter(model, state, times, crate::kernels::DEFAULT_RELATIVE_JITTER)
}

pub fn decompose_with_jitter(
    model: &ModelSpec,
    state: &VariationalState,
    times: &[f64],
    jitter: f64,
) -> Result<SourceDecomposition> {
    if state.components.len() != model.n_sources() || state.activations.len() != model.n_activations() {
        return Err(Error::param("state does not match the model's process count"));
    }
    let moments = |k: &MsmKernel, p: &crate::vgp::ProcessState| -> Result<MarginalMoments> {
        let lk = crate::vgp::prior_cholesky(k, &p.inducing, jitter)?;
        let proj = ProcessProjection::new(k, &p.inducing, &lk, times);
        Ok(proj.moments(&p.whitened).0)
    };
    let component_moments = model
        .component_kernels
        .iter()
        .zip(&state.components)
        .map(|(k, p)| moments(k, p))
        .collect::<Result<Vec<_>>>()?;
    let activation_moments = model
        .all_activation_kernels()
        .into_iter()
        .zip(&state.activations)
        .map(|(k, p)| moments(k, p))
        .collect::<Result<Vec<_>>>()?;
    let activations = if model.has_silence() {
        let j = activation_moments.len();
        let mut rows = vec![vec![0.0; times.len()]; j];
        let mut logits = vec![0.0; j];
        let mut phi = vec![0.0; j];
        for i in 0..times.len() {
            for (l, am) in logits.iter_mut().zip(&activation_moments) {
                *l = am.means[i];
            }
            softmax_into(&logits, &mut phi);
            for (row, p) in rows.iter_mut().zip(&phi) {
                row[i] = *p;
            }
        }
        rows
    } else {
        activation_moments
            .iter()
            .map(|am| am.means.iter().map(|&m| quadrature::sigmoid(m)).collect())
            .collect()
    };
    Ok(SourceDecomposition {
        times: times.to_vec(),
        pitch_labels: model.pitch_labels.clone(),
        activation_moments,
        component_moments,
        activations,
        has_silence: model.has_silence(),
    })
}
