//! Gauss-Hermite quadrature for expectations under Gaussian marginals.
//!
//! Rules use the physicists' weight `exp(-x²)`, so an expectation under
//! `N(m, s²)` becomes `(1/√π) Σ_j w_j h(√2·s·x_j + m)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Order used while optimizing the ELBO.
pub const TRAINING_ORDER: usize = 20;
/// Order used by verification code.
pub const VERIFICATION_ORDER: usize = 40;

const MAX_ORDER: usize = 100;

/// Nodes and weights of an `n`-point Gauss-Hermite rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermiteRule {
    /// Builds the rule of the given order (1 ..= 100).
    ///
    /// Nodes come from the eigenvalues of the symmetric Jacobi matrix
    /// (Golub-Welsch), polished by Newton steps on the orthonormal Hermite
    /// recurrence; weights are the Christoffel numbers `1 / Σ_k p_k(x)²`.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::param(format!(
                "Gauss-Hermite order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let n = order;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k, k - 1)] = b;
            jacobi[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);

        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (p, dp, _) = orthonormal_hermite(n, *x);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                *x -= step;
                if step.abs() < 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        // Enforce exact symmetry about zero.
        for i in 0..n / 2 {
            let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -a;
            nodes[n - 1 - i] = a;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| 1.0 / orthonormal_hermite(n, x).2)
            .collect();
        for i in 0..n / 2 {
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ h(x) exp(-x²) dx`.
    pub fn integrate(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * h(x))
            .sum()
    }

    /// `E[h(g)]` for `g ~ N(mean, var)`; exact for a point mass.
    pub fn expectation(&self, mean: f64, var: f64, h: impl Fn(f64) -> f64) -> f64 {
        if var <= 0.0 {
            return h(mean);
        }
        let scale = (2.0 * var.max(0.0)).sqrt();
        self.integrate(|x| h(scale * x + mean)) / PI.sqrt()
    }
}

/// Orthonormal Hermite value `p_n(x)`, its derivative, and `Σ_{k<n} p_k(x)²`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut p_prev = 0.0;
    let mut p = PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += p * p;
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p - (kf / (kf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = next;
    }
    // p_n' = √(2n) p_{n-1}
    let dp = (2.0 * n as f64).sqrt() * p_prev;
    (p, dp, sum_sq)
}

/// Gauss-Hermite rule of the given order.
pub fn gh_rule(order: usize) -> Result<GaussHermiteRule> {
    GaussHermiteRule::new(order)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_var(var: f64) -> Result<()> {
    if !(var >= 0.0) {
        return Err(Error::param(format!("variance must be non-negative, got {var}")));
    }
    Ok(())
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) {
        return Err(Error::param(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    Ok(())
}

/// `E[σ(g)]` for `g ~ N(mean, var)`.
pub fn expect_sigmoid(mean: f64, var: f64, rule: &GaussHermiteRule) -> Result<f64> {
    check_var(var)?;
    Ok(rule.expectation(mean, var, sigmoid))
}

/// `E[σ(g)²]` for `g ~ N(mean, var)`.
pub fn expect_sigmoid_sq(mean: f64, var: f64, rule: &GaussHermiteRule) -> Result<f64> {
    check_var(var)?;
    Ok(rule.expectation(mean, var, |g| {
        let s = sigmoid(g);
        s * s
    }))
}

/// Sigmoid moments with their derivatives with respect to the mean and
/// variance of the underlying Gaussian.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SigmoidMoments {
    /// E[σ(g)]
    pub e1: f64,
    /// E[σ(g)²]
    pub e2: f64,
    pub de1_dmean: f64,
    pub de1_dvar: f64,
    pub de2_dmean: f64,
    pub de2_dvar: f64,
}

/// Differentiates the quadrature sum itself, so gradients are exact for the
/// discretized objective. At zero variance the variance derivative falls back
/// to `½ E[h'']`.
pub(crate) fn sigmoid_moments(mean: f64, var: f64, rule: &GaussHermiteRule) -> SigmoidMoments {
    let inv_sqrt_pi = 1.0 / PI.sqrt();
    let mut m = SigmoidMoments::default();
    if var > 0.0 {
        let scale = (2.0 * var).sqrt();
        // d(scale·x)/dvar = x / scale
        let inv_scale = 1.0 / scale;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let s = sigmoid(scale * x + mean);
            let ds = s * (1.0 - s);
            let w = w * inv_sqrt_pi;
            m.e1 += w * s;
            m.e2 += w * s * s;
            m.de1_dmean += w * ds;
            m.de2_dmean += w * 2.0 * s * ds;
            m.de1_dvar += w * ds * x * inv_scale;
            m.de2_dvar += w * 2.0 * s * ds * x * inv_scale;
        }
    } else {
        let s = sigmoid(mean);
        let ds = s * (1.0 - s);
        m.e1 = s;
        m.e2 = s * s;
        m.de1_dmean = ds;
        m.de2_dmean = 2.0 * s * ds;
        m.de1_dvar = 0.5 * ds * (1.0 - 2.0 * s);
        m.de2_dvar = 0.5 * 2.0 * s * ds * (2.0 - 3.0 * s);
    }
    m
}

/// `log N(y | mean, noise_var)`.
#[inline]
pub fn log_normal_pdf(y: f64, mean: f64, noise_var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (2.0 * PI).ln() - 0.5 * noise_var.ln() - 0.5 * d * d / noise_var
}

/// Tensor-product 2-D quadrature of `E[log N(y | σ(g)·f, ν²)]` with
/// `f ~ N(mf, vf)` and `g ~ N(mg, vg)`.
pub fn expect_loglik_2d(
    y: f64,
    mf: f64,
    vf: f64,
    mg: f64,
    vg: f64,
    noise_var: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    check_var(vf)?;
    check_var(vg)?;
    check_noise(noise_var)?;
    let (sf, sg) = ((2.0 * vf).sqrt(), (2.0 * vg).sqrt());
    let mut total = 0.0;
    for (&xi, &wi) in rule.nodes.iter().zip(&rule.weights) {
        let f = sf * xi + mf;
        let mut inner = 0.0;
        for (&xj, &wj) in rule.nodes.iter().zip(&rule.weights) {
            let g = sg * xj + mg;
            inner += wj * log_normal_pdf(y, sigmoid(g) * f, noise_var);
        }
        total += wi * inner;
    }
    Ok(total / PI)
}

/// The same expectation reduced to two 1-D quadratures:
/// `-(y² - 2y·mf·E[σ] + (vf + mf²)·E[σ²]) / (2ν²) - ½log 2π - ½log ν²`.
pub fn expect_loglik_1d_decomp(
    y: f64,
    mf: f64,
    vf: f64,
    mg: f64,
    vg: f64,
    noise_var: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    check_var(vf)?;
    check_noise(noise_var)?;
    let e1 = expect_sigmoid(mg, vg, rule)?;
    let e2 = expect_sigmoid_sq(mg, vg, rule)?;
    let sq = y * y - 2.0 * y * mf * e1 + (vf + mf * mf) * e2;
    Ok(-0.5 * sq / noise_var - 0.5 * (2.0 * PI).ln() - 0.5 * noise_var.ln())
}
