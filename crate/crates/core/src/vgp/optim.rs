use serde::{Deserialize, Serialize};

use super::objective::{initial_state, pack_activations, unpack_activations};
use super::{ElboBreakdown, ElboProblem, VariationalState};
use crate::error::{Error, Result};
use crate::models::{McConfig, ModelSpec};
use crate::quadrature::{GaussHermiteRule, TRAINING_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Adam on the whitened parameters.
    Adam,
    /// Fixed-step gradient ascent with gradient-norm clipping.
    #[default]
    GradientAscent,
    /// Exact optimum of the component posteriors given the activations,
    /// alternated with Adam steps on the activation parameters.
    Coordinate,
}

/// Settings of a variational fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub quad_order: usize,
    /// Inducing points per component process; `None` = `min(200, N/16)`.
    pub n_inducing_f: Option<usize>,
    /// Inducing points per activation process; `None` = `min(200, N/16)`.
    pub n_inducing_g: Option<usize>,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Gradient-norm cap for [`Optimizer::GradientAscent`].
    pub clip_norm: f64,
    /// Activation steps per iteration of [`Optimizer::Coordinate`].
    pub activation_steps: usize,
    pub mc_samples: usize,
    /// Observation noise; `None` = `1e-3 ·` mean power of the data.
    pub noise_var: Option<f64>,
    pub jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            learning_rate: 0.005,
            quad_order: TRAINING_ORDER,
            n_inducing_f: None,
            n_inducing_g: None,
            seed: 0,
            optimizer: Optimizer::default(),
            clip_norm: 100.0,
            activation_steps: 5,
            mc_samples: 2000,
            noise_var: None,
            jitter: crate::kernels::DEFAULT_RELATIVE_JITTER,
        }
    }
}

/// Smallest noise variance used when the data are (nearly) silent.
pub const NOISE_FLOOR: f64 = 1e-8;

impl FitConfig {
    pub fn default_inducing(n: usize) -> usize {
        (n / 16).clamp(1, 200)
    }

    pub fn noise_for(&self, values: &[f64]) -> f64 {
        self.noise_var.unwrap_or_else(|| {
            let power = values.iter().map(|v| v * v).sum::<f64>() / values.len().max(1) as f64;
            (1e-3 * power).max(NOISE_FLOOR)
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        if self.n_inducing_f == Some(0) || self.n_inducing_g == Some(0) {
            return Err(Error::Config("inducing counts must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: VariationalState,
    /// ELBO of the initial state followed by one entry per iteration.
    pub trace: Vec<ElboBreakdown>,
    pub noise_var: f64,
}

/// Maximizes the ELBO over the variational parameters of every process with
/// the kernels held fixed.
pub fn fit(model: &ModelSpec, times: &[f64], values: &[f64], config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    if times.is_empty() {
        return Err(Error::input("cannot fit an empty data set"));
    }
    let n = times.len();
    let mf = config.n_inducing_f.unwrap_or(FitConfig::default_inducing(n)).min(n);
    let mg = config.n_inducing_g.unwrap_or(FitConfig::default_inducing(n)).min(n);
    let init = initial_state(model, times, mf, mg)?;
    let noise_var = config.noise_for(values);
    let rule = GaussHermiteRule::new(config.quad_order)?;
    let problem = ElboProblem::with_jitter(
        model,
        &init,
        times,
        values,
        noise_var,
        rule,
        McConfig {
            samples: config.mc_samples,
            seed: config.seed,
        },
        config.jitter,
    )?;
    let (state, trace) = match config.optimizer {
        Optimizer::Coordinate => coordinate_ascent(&problem, init, config)?,
        _ if config.max_iters == 0 => {
            let start = problem.evaluate(&init)?;
            (init, vec![start])
        }
        _ => {
            let (params, trace) = ascend(&problem, problem.pack(&init), config)?;
            (problem.unpack(&params)?, trace)
        }
    };
    Ok(FitOutcome {
        state,
        trace,
        noise_var,
    })
}

/// Runs the configured optimizer from `params`; the trace starts with the
/// initial ELBO.
pub fn ascend(problem: &ElboProblem, mut params: Vec<f64>, config: &FitConfig) -> Result<(Vec<f64>, Vec<ElboBreakdown>)> {
    if config.optimizer == Optimizer::Coordinate {
        let (state, trace) = coordinate_ascent(problem, problem.unpack(&params)?, config)?;
        return Ok((problem.pack(&state), trace));
    }
    let (mut current, mut grad) = problem.value_and_grad(&params)?;
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    trace.push(current);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    for _ in 1..=config.max_iters {
        match config.optimizer {
            Optimizer::Adam | Optimizer::Coordinate => adam.step(&mut params, &grad),
            Optimizer::GradientAscent => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let scale = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p += config.learning_rate * scale * g;
                }
            }
        }
        let (b, g) = problem.value_and_grad(&params)?;
        current = b;
        grad = g;
        trace.push(current);
    }
    Ok((params, trace))
}

/// Each iteration updates every component exactly, then takes
/// `activation_steps` Adam steps on the activations.
fn coordinate_ascent(
    problem: &ElboProblem,
    mut state: VariationalState,
    config: &FitConfig,
) -> Result<(VariationalState, Vec<ElboBreakdown>)> {
    let mut comp = problem.component_moments(&state);
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    trace.push(problem.evaluate_with(&state, &comp)?);
    let mut params = pack_activations(&state);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    for _ in 0..config.max_iters {
        let act = problem.activation_moments(&state);
        for d in 0..comp.len() {
            problem.update_component(&mut state, &mut comp, &act, d)?;
        }
        problem.update_component_means(&mut state, &mut comp, &act)?;
        for _ in 0..config.activation_steps {
            let (_, grad) = problem.activation_value_and_grad(&state, &comp)?;
            adam.step(&mut params, &grad);
            unpack_activations(&mut state, &params);
        }
        trace.push(problem.evaluate_with(&state, &comp)?);
    }
    Ok((state, trace))
}

struct Adam {
    rate: f64,
    t: i32,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, rate: f64) -> Self {
        Self {
            rate,
            t: 0,
            m1: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m1[k] = Self::B1 * self.m1[k] + (1.0 - Self::B1) * grad[k];
            self.m2[k] = Self::B2 * self.m2[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] += self.rate * (self.m1[k] / c1) / ((self.m2[k] / c2).sqrt() + Self::EPS);
        }
    }
}
