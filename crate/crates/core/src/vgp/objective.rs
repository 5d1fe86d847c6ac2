use nalgebra::{DMatrix, DVector};

use super::{
    kl_whitened, MarginalMoments, prior_cholesky, ElboBreakdown, InducingSet, ProcessProjection, ProcessState,
    VariationalGaussian, VariationalState, VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::kernels::DEFAULT_RELATIVE_JITTER;
use crate::models::{self, McConfig, ModelKind, ModelSpec, Moment, PointGrad};
use crate::quadrature::GaussHermiteRule;

/// The ELBO of one model on one data set, as a function of the packed
/// variational parameters.
///
/// Each process contributes `m̃` (M values) followed by the lower triangle of
/// `L̃` in row-major order, with diagonal entries stored as logarithms.
#[derive(Debug, Clone)]
pub struct ElboProblem {
    kind: ModelKind,
    values: Vec<f64>,
    noise_var: f64,
    rule: GaussHermiteRule,
    template: VariationalState,
    components: Vec<ProcessProjection>,
    activations: Vec<ProcessProjection>,
    /// Softmax only: standard normals, `samples × n_act` per point.
    normals: Vec<Vec<f64>>,
}

impl ElboProblem {
    /// `template` fixes the inducing inputs of every process; its `q` values
    /// are ignored.
    pub fn new(
        model: &ModelSpec,
        template: &VariationalState,
        times: &[f64],
        values: &[f64],
        noise_var: f64,
        rule: GaussHermiteRule,
        mc: McConfig,
    ) -> Result<Self> {
        Self::with_jitter(model, template, times, values, noise_var, rule, mc, DEFAULT_RELATIVE_JITTER)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_jitter(
        model: &ModelSpec,
        template: &VariationalState,
        times: &[f64],
        values: &[f64],
        noise_var: f64,
        rule: GaussHermiteRule,
        mc: McConfig,
        jitter: f64,
    ) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::input(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if !(noise_var > 0.0) {
            return Err(Error::param(format!("noise variance must be positive, got {noise_var}")));
        }
        if template.components.len() != model.n_sources() || template.activations.len() != model.n_activations() {
            return Err(Error::param(format!(
                "state has {}+{} processes, model needs {}+{}",
                template.components.len(),
                template.activations.len(),
                model.n_sources(),
                model.n_activations()
            )));
        }
        let project = |k: &crate::kernels::MsmKernel, p: &ProcessState| -> Result<ProcessProjection> {
            let lk = prior_cholesky(k, &p.inducing, jitter)?;
            Ok(ProcessProjection::new(k, &p.inducing, &lk, times))
        };
        let components = model
            .component_kernels
            .iter()
            .zip(&template.components)
            .map(|(k, p)| project(k, p))
            .collect::<Result<Vec<_>>>()?;
        let activations = model
            .all_activation_kernels()
            .into_iter()
            .zip(&template.activations)
            .map(|(k, p)| project(k, p))
            .collect::<Result<Vec<_>>>()?;
        let normals = if model.kind == ModelKind::Softmax {
            if mc.samples == 0 {
                return Err(Error::param("Monte-Carlo sample count must be positive"));
            }
            (0..times.len())
                .map(|n| models::point_normals(mc.seed, n as u64, mc.samples, model.n_activations()))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            kind: model.kind,
            values: values.to_vec(),
            noise_var,
            rule,
            template: template.clone(),
            components,
            activations,
            normals,
        })
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn n_params(&self) -> usize {
        self.template.n_params()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn template(&self) -> &VariationalState {
        &self.template
    }

    /// Flattens the whitened posteriors of `state`.
    pub fn pack(&self, state: &VariationalState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for p in state.processes() {
            pack_process(&p.whitened, &mut out);
        }
        out
    }

    /// Inverse of [`ElboProblem::pack`].
    pub fn unpack(&self, params: &[f64]) -> Result<VariationalState> {
        if params.len() != self.n_params() {
            return Err(Error::param(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        let mut read = |p: &ProcessState| ProcessState {
            inducing: p.inducing.clone(),
            whitened: unpack_process(params, &mut offset, p.inducing.len()),
        };
        let components = self.template.components.iter().map(&mut read).collect();
        let activations = self.template.activations.iter().map(&mut read).collect();
        Ok(VariationalState { components, activations })
    }

    pub fn evaluate(&self, state: &VariationalState) -> Result<ElboBreakdown> {
        self.run(state, false).map(|(b, _)| b)
    }

    pub fn value_and_grad(&self, params: &[f64]) -> Result<(ElboBreakdown, Vec<f64>)> {
        let state = self.unpack(params)?;
        let (b, g) = self.run(&state, true)?;
        Ok((b, g.expect("gradient requested")))
    }

    pub(crate) fn component_moments(&self, state: &VariationalState) -> Vec<ProcessMoments> {
        moments_of(&self.components, &state.components)
    }

    pub(crate) fn activation_moments(&self, state: &VariationalState) -> Vec<ProcessMoments> {
        moments_of(&self.activations, &state.activations)
    }

    /// Expected log-likelihood and its derivatives with respect to every
    /// marginal mean and variance. With `mask_clipped`, variance derivatives
    /// at clipped points are zeroed.
    fn point_terms(&self, comp: &[ProcessMoments], act: &[ProcessMoments], mask_clipped: bool) -> PointTerms {
        let n = self.values.len();
        let (nf, ng) = (comp.len(), act.len());
        let mut d_comp = vec![(vec![0.0; n], vec![0.0; n]); nf];
        let mut d_act = vec![(vec![0.0; n], vec![0.0; n]); ng];
        let mut f: Vec<Moment> = vec![(0.0, 0.0); nf];
        let mut g: Vec<Moment> = vec![(0.0, 0.0); ng];
        let mut grad = PointGrad::new(nf, ng);
        let mut scratch = Vec::new();
        let mut expected = 0.0;
        for i in 0..n {
            for (slot, (mm, _)) in f.iter_mut().zip(comp) {
                *slot = (mm.means[i], mm.vars[i]);
            }
            for (slot, (mm, _)) in g.iter_mut().zip(act) {
                *slot = (mm.means[i], mm.vars[i]);
            }
            let y = self.values[i];
            expected += match self.kind {
                ModelKind::Sigmoid | ModelKind::SigmoidLoo => {
                    models::sigmoid_multi_with_grad(y, &f, &g, self.noise_var, &self.rule, &mut grad)
                }
                ModelKind::Softmax => models::softmax_with_grad(
                    y,
                    &g,
                    &f,
                    self.noise_var,
                    &self.normals[i],
                    &mut grad,
                    &mut scratch,
                ),
            };
            let masked = |v: f64, var: f64| if mask_clipped && var <= VARIANCE_FLOOR { 0.0 } else { v };
            for (k, (dm, dv)) in d_comp.iter_mut().enumerate() {
                dm[i] = grad.f[k].0;
                dv[i] = masked(grad.f[k].1, f[k].1);
            }
            for (k, (dm, dv)) in d_act.iter_mut().enumerate() {
                dm[i] = grad.g[k].0;
                dv[i] = masked(grad.g[k].1, g[k].1);
            }
        }
        PointTerms {
            expected,
            d_comp,
            d_act,
        }
    }

    fn breakdown(&self, state: &VariationalState, expected: f64) -> Result<ElboBreakdown> {
        let kl_f: f64 = state.components.iter().map(|p| kl_whitened(&p.whitened)).sum();
        let kl_g: f64 = state.activations.iter().map(|p| kl_whitened(&p.whitened)).sum();
        let breakdown = ElboBreakdown::new(expected, kl_f, kl_g);
        if !breakdown.elbo.is_finite() {
            return Err(Error::Numerical {
                message: format!("non-finite ELBO {breakdown:?}"),
                condition: f64::NAN,
            });
        }
        Ok(breakdown)
    }

    fn run(&self, state: &VariationalState, with_grad: bool) -> Result<(ElboBreakdown, Option<Vec<f64>>)> {
        let comp = self.component_moments(state);
        let act = self.activation_moments(state);
        let terms = self.point_terms(&comp, &act, true);
        let breakdown = self.breakdown(state, terms.expected)?;
        if !with_grad {
            return Ok((breakdown, None));
        }
        let mut out = Vec::with_capacity(self.n_params());
        for (d, ((proj, p), ((_, bl), (dm, dv)))) in self
            .components
            .iter()
            .zip(&state.components)
            .zip(comp.iter().zip(&terms.d_comp))
            .enumerate()
        {
            let start = out.len();
            process_gradient(proj, &p.whitened, bl, dm, dv, &mut out);
            check_finite(&out[start..], "component", d)?;
        }
        self.append_activation_gradient(state, &act, &terms, &mut out)?;
        Ok((breakdown, Some(out)))
    }

    fn append_activation_gradient(
        &self,
        state: &VariationalState,
        act: &[ProcessMoments],
        terms: &PointTerms,
        out: &mut Vec<f64>,
    ) -> Result<()> {
        for (d, ((proj, p), ((_, bl), (dm, dv)))) in self
            .activations
            .iter()
            .zip(&state.activations)
            .zip(act.iter().zip(&terms.d_act))
            .enumerate()
        {
            let start = out.len();
            process_gradient(proj, &p.whitened, bl, dm, dv, out);
            check_finite(&out[start..], "activation", d)?;
        }
        Ok(())
    }

    /// ELBO and its gradient with respect to the packed activation
    /// parameters only, with component moments `comp` held fixed.
    pub(crate) fn activation_value_and_grad(
        &self,
        state: &VariationalState,
        comp: &[ProcessMoments],
    ) -> Result<(ElboBreakdown, Vec<f64>)> {
        let act = self.activation_moments(state);
        let terms = self.point_terms(comp, &act, true);
        let breakdown = self.breakdown(state, terms.expected)?;
        let mut out = Vec::new();
        self.append_activation_gradient(state, &act, &terms, &mut out)?;
        Ok((breakdown, out))
    }

    /// ELBO of `state` given precomputed component moments.
    pub(crate) fn evaluate_with(&self, state: &VariationalState, comp: &[ProcessMoments]) -> Result<ElboBreakdown> {
        let act = self.activation_moments(state);
        let terms = self.point_terms(comp, &act, true);
        self.breakdown(state, terms.expected)
    }

    /// Replaces the posterior of component `d` by its optimum with every
    /// other process held fixed, and refreshes `comp[d]`.
    ///
    /// The expected log-likelihood is quadratic in the marginal mean and
    /// variance of each component, `Σ h_n μ_n - ½ λ_n (μ_n² + v_n)`, so the
    /// optimum is the Gaussian `S̃ = (I + Bᵀ Λ B)⁻¹`, `m̃ = S̃ Bᵀ h`.
    pub(crate) fn update_component(
        &self,
        state: &mut VariationalState,
        comp: &mut [ProcessMoments],
        act: &[ProcessMoments],
        d: usize,
    ) -> Result<()> {
        let terms = self.point_terms(comp, act, false);
        let (dm, dv) = &terms.d_comp[d];
        let means = &comp[d].0.means;
        let proj = &self.components[d];
        let n = dm.len();
        let lambda: Vec<f64> = dv.iter().map(|v| (-2.0 * v).max(0.0)).collect();
        let h = DVector::from_iterator(n, (0..n).map(|i| dm[i] + lambda[i] * means[i]));
        let mut scaled = proj.b.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= lambda[i].sqrt();
        }
        let m = proj.b.ncols();
        let precision = DMatrix::identity(m, m) + scaled.tr_mul(&scaled);
        let cov_chol = inverse_lower_factor(&precision).ok_or_else(|| Error::Numerical {
            message: format!("component process {d} update is not positive definite"),
            condition: f64::NAN,
        })?;
        let bth = proj.b.tr_mul(&h);
        let mean = &cov_chol * cov_chol.tr_mul(&bth);
        if mean.iter().chain(cov_chol.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                message: format!("non-finite update of component process {d}"),
                condition: f64::NAN,
            });
        }
        let q = VariationalGaussian { mean, cov_chol };
        comp[d] = proj.moments(&q);
        state.components[d].whitened = q;
        Ok(())
    }

    /// Sets the means of all components to their joint optimum with every
    /// covariance and activation held fixed, and refreshes `comp`.
    ///
    /// Unlike one-at-a-time updates this splits the signal between sources
    /// whose subspaces overlap in a single solve.
    pub(crate) fn update_component_means(
        &self,
        state: &mut VariationalState,
        comp: &mut [ProcessMoments],
        act: &[ProcessMoments],
    ) -> Result<()> {
        let nf = self.components.len();
        if nf == 0 {
            return Ok(());
        }
        let n = self.values.len();
        let mut a = vec![vec![0.0; n]; nf];
        let mut w = vec![vec![0.0; n]; nf * nf];
        let (mut ap, mut wp, mut g, mut scratch) = (vec![0.0; nf], vec![0.0; nf * nf], vec![(0.0, 0.0); act.len()], Vec::new());
        for i in 0..n {
            for (slot, (mm, _)) in g.iter_mut().zip(act) {
                *slot = (mm.means[i], mm.vars[i]);
            }
            let normals = self.normals.get(i).map_or(&[][..], |v| &v[..]);
            models::source_weight_moments(self.kind, &g, &self.rule, normals, &mut ap, &mut wp, &mut scratch);
            for d in 0..nf {
                a[d][i] = ap[d];
            }
            for k in 0..nf * nf {
                w[k][i] = wp[k];
            }
        }
        let inv_nu = 1.0 / self.noise_var;
        let dims: Vec<usize> = self.components.iter().map(|p| p.b.ncols()).collect();
        let offsets: Vec<usize> = dims.iter().scan(0, |acc, &m| { let o = *acc; *acc += m; Some(o) }).collect();
        let total: usize = dims.iter().sum();
        let mut h = DMatrix::identity(total, total);
        let mut rhs = DVector::zeros(total);
        for d in 0..nf {
            let bd = &self.components[d].b;
            let ya = DVector::from_iterator(n, (0..n).map(|i| self.values[i] * a[d][i] * inv_nu));
            rhs.rows_mut(offsets[d], dims[d]).copy_from(&bd.tr_mul(&ya));
            for e in d..nf {
                let mut scaled = self.components[e].b.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= w[d * nf + e][i] * inv_nu;
                }
                let block = bd.tr_mul(&scaled);
                let mut view = h.view_mut((offsets[d], offsets[e]), (dims[d], dims[e]));
                view += &block;
                if e != d {
                    h.view_mut((offsets[e], offsets[d]), (dims[e], dims[d])).copy_from(&block.transpose());
                }
            }
        }
        let chol = h.cholesky().ok_or_else(|| Error::Numerical {
            message: "joint component mean system is not positive definite".into(),
            condition: f64::NAN,
        })?;
        let means = chol.solve(&rhs);
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                message: "non-finite joint component means".into(),
                condition: f64::NAN,
            });
        }
        for d in 0..nf {
            let q = &mut state.components[d].whitened;
            q.mean = means.rows(offsets[d], dims[d]).into_owned();
            // Covariances are unchanged, so only the marginal means move.
            comp[d].0.means = (&self.components[d].b * &q.mean).as_slice().to_vec();
        }
        Ok(())
    }
}

pub(crate) type ProcessMoments = (MarginalMoments, DMatrix<f64>);

struct PointTerms {
    expected: f64,
    d_comp: Vec<(Vec<f64>, Vec<f64>)>,
    d_act: Vec<(Vec<f64>, Vec<f64>)>,
}

pub(crate) fn pack_activations(state: &VariationalState) -> Vec<f64> {
    let mut out = Vec::new();
    for p in &state.activations {
        pack_process(&p.whitened, &mut out);
    }
    out
}

pub(crate) fn unpack_activations(state: &mut VariationalState, params: &[f64]) {
    let mut offset = 0;
    for p in &mut state.activations {
        p.whitened = unpack_process(params, &mut offset, p.inducing.len());
    }
}

fn pack_process(q: &VariationalGaussian, out: &mut Vec<f64>) {
    let m = q.dim();
    out.extend(q.mean.iter());
    for i in 0..m {
        for j in 0..=i {
            let v = q.cov_chol[(i, j)];
            out.push(if i == j { v.ln() } else { v });
        }
    }
}

fn unpack_process(params: &[f64], offset: &mut usize, m: usize) -> VariationalGaussian {
    let mean = DVector::from_column_slice(&params[*offset..*offset + m]);
    *offset += m;
    let mut chol = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = params[*offset];
            *offset += 1;
            chol[(i, j)] = if i == j { v.exp() } else { v };
        }
    }
    VariationalGaussian { mean, cov_chol: chol }
}

fn moments_of(projs: &[ProcessProjection], procs: &[ProcessState]) -> Vec<ProcessMoments> {
    projs.iter().zip(procs).map(|(proj, p)| proj.moments(&p.whitened)).collect()
}

fn check_finite(grad: &[f64], role: &str, idx: usize) -> Result<()> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            message: format!("non-finite ELBO gradient in {role} process {idx}"),
            condition: f64::NAN,
        });
    }
    Ok(())
}

/// Lower-triangular `L` with `L Lᵀ = P⁻¹`.
///
/// Factors `P = U Uᵀ` with `U` upper triangular (Cholesky of the
/// index-reversed matrix), so that `L = U⁻ᵀ`.
fn inverse_lower_factor(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = p.nrows();
    let reversed = DMatrix::from_fn(m, m, |i, j| p[(m - 1 - i, m - 1 - j)]);
    let l = reversed.cholesky()?.unpack();
    // Uᵀ[i][j] = U[j][i] = L'[m-1-j][m-1-i]
    let ut = DMatrix::from_fn(m, m, |i, j| l[(m - 1 - j, m - 1 - i)]);
    ut.solve_lower_triangular(&DMatrix::identity(m, m))
}

/// Appends `d ELBO / d(m̃, L̃)` of one process, including its KL term.
fn process_gradient(
    proj: &ProcessProjection,
    q: &VariationalGaussian,
    bl: &DMatrix<f64>,
    dmean: &[f64],
    dvar: &[f64],
    out: &mut Vec<f64>,
) {
    let m = q.dim();
    let dmu = DVector::from_column_slice(dmean);
    let gm = proj.b.tr_mul(&dmu) - &q.mean;
    out.extend(gm.iter());
    // dℓ/dL̃ = 2 Bᵀ diag(dv) B L̃
    let mut scaled = bl.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= 2.0 * dvar[i];
    }
    let gl = proj.b.tr_mul(&scaled);
    for i in 0..m {
        for j in 0..=i {
            let l = q.cov_chol[(i, j)];
            if i == j {
                // log-diagonal: chain rule ×L̃_ii; KL part gives 1 - L̃_ii².
                out.push(gl[(i, i)] * l + 1.0 - l * l);
            } else {
                out.push(gl[(i, j)] - l);
            }
        }
    }
}

/// `ELBO = Σ_n E_q[log p(y_n | ·)] - Σ KL` for a given state.
///
/// Softmax models use the default Monte-Carlo configuration.
pub fn elbo(
    model: &ModelSpec,
    state: &VariationalState,
    times: &[f64],
    values: &[f64],
    rule: &GaussHermiteRule,
    noise_var: f64,
) -> Result<ElboBreakdown> {
    let problem = ElboProblem::new(model, state, times, values, noise_var, rule.clone(), McConfig::default())?;
    problem.evaluate(state)
}

/// Initial state: zero means, `L̃ = 0.1·I` for activations and `L̃ = I`
/// (the prior) for components, on uniform inducing grids.
pub fn initial_state(model: &ModelSpec, times: &[f64], n_inducing_f: usize, n_inducing_g: usize) -> Result<VariationalState> {
    let zf = InducingSet::uniform(times, n_inducing_f)?;
    let zg = InducingSet::uniform(times, n_inducing_g)?;
    Ok(VariationalState {
        components: (0..model.n_sources())
            .map(|_| ProcessState::at_scaled_prior(zf.clone(), 1.0))
            .collect(),
        activations: (0..model.n_activations())
            .map(|_| ProcessState::at_scaled_prior(zg.clone(), 0.1))
            .collect(),
    })
}
