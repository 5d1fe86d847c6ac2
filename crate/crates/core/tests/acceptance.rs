//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the report stays readable.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use harmonic_gp::fixtures::{self, TWO_PITCH_SEGMENTS};
use harmonic_gp::kernels::{build_gram, LorentzianComponent, MsmKernel};
use harmonic_gp::models::{self, McConfig, ModelKind, ModelSpec};
use harmonic_gp::pipeline::{self, LearnConfig, LearningMode, TranscribeConfig, TranscriptionMode};
use harmonic_gp::quadrature::{self, GaussHermiteRule, VERIFICATION_ORDER};
use harmonic_gp::spectral_fit::{fit_msm_frequency_domain, MagnitudeSpectrum};
use harmonic_gp::vgp::{self, ElboProblem, FitConfig, InducingSet, ProcessState, VariationalGaussian, VariationalState};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_kernel(r: &mut ChaCha8Rng, max_components: usize) -> MsmKernel {
    let n = r.random_range(1..=max_components);
    let comps = (0..n)
        .map(|_| {
            LorentzianComponent::from_hz(
                r.random_range(0.01..2.0),
                r.random_range(0.005..2.0),
                r.random_range(0.0..2000.0),
            )
            .unwrap()
        })
        .collect();
    MsmKernel::new(comps).unwrap()
}

fn sorted_times(r: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..n).map(|_| r.random_range(0.0..span)).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn quadrature_identity() -> Check {
    let rule = GaussHermiteRule::new(VERIFICATION_ORDER).map_err(fail)?;
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y = r.random_range(-2.0..2.0);
        let (mf, vf) = (r.random_range(-2.0..2.0), r.random_range(0.0..2.0));
        let (mg, vg) = (r.random_range(-4.0..4.0), r.random_range(0.0..4.0));
        let noise = r.random_range(0.05..1.0);
        let one = quadrature::expect_loglik_1d_decomp(y, mf, vf, mg, vg, noise, &rule).map_err(fail)?;
        let two = quadrature::expect_loglik_2d(y, mf, vf, mg, vg, noise, &rule).map_err(fail)?;
        worst = worst.max((one - two).abs());
    }
    within(worst <= 1e-6, format!("max |1d - 2d| = {worst:.2e} over 1000 draws"))
}

/// `E[log N(y | σ(g1) f1 + σ(g2) f2, ν²)]` by tensor Gauss-Hermite over all
/// four variables.
fn tensor_4d(y: f64, f: [(f64, f64); 2], g: [(f64, f64); 2], noise: f64, rule: &GaussHermiteRule) -> f64 {
    let axis = |(m, v): (f64, f64)| -> Vec<(f64, f64)> {
        let s = (2.0 * v).sqrt();
        rule.nodes()
            .iter()
            .zip(rule.weights())
            .map(|(x, w)| (m + s * x, w / PI.sqrt()))
            .collect()
    };
    let (f1, f2, g1, g2) = (axis(f[0]), axis(f[1]), axis(g[0]), axis(g[1]));
    let mut total = 0.0;
    for &(a1, wa1) in &g1 {
        let s1 = quadrature::sigmoid(a1);
        for &(a2, wa2) in &g2 {
            let s2 = quadrature::sigmoid(a2);
            for &(b1, wb1) in &f1 {
                for &(b2, wb2) in &f2 {
                    let w = wa1 * wa2 * wb1 * wb2;
                    total += w * quadrature::log_normal_pdf(y, s1 * b1 + s2 * b2, noise);
                }
            }
        }
    }
    total
}

fn two_source_equivalence() -> Check {
    let oracle = GaussHermiteRule::new(15).map_err(fail)?;
    let rule = GaussHermiteRule::new(VERIFICATION_ORDER).map_err(fail)?;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let y = r.random_range(-2.0..2.0);
        let mut draw = |mean: f64, var: f64| (r.random_range(-mean..mean), r.random_range(0.0..var));
        let f = [draw(2.0, 1.0), draw(2.0, 1.0)];
        let g = [draw(3.0, 1.0), draw(3.0, 1.0)];
        let noise = r.random_range(0.1..1.0);
        let closed = models::sigmoid_multi_point_loglik(y, &f, &g, noise, &rule).map_err(fail)?;
        worst = worst.max((closed - tensor_4d(y, f, g, noise, &oracle)).abs());
    }
    within(worst <= 1e-6, format!("max |closed form - 4-D quadrature| = {worst:.2e} over 200 inputs"))
}

fn lorentzian_recovery() -> Check {
    let (rate, fft_len) = (16_000.0, 32_768usize);
    let bin = rate / fft_len as f64;
    let n_bins = fft_len / 2 + 1;
    let mut r = rng(3);
    let (mut worst_c, mut worst_v, mut worst_l) = (0.0f64, 0.0f64, 0.0f64);
    let mut monotone = true;
    for _ in 0..50 {
        let n = r.random_range(3..=8);
        // Centres on a jittered 250 Hz lattice keep neighbours well apart.
        let mut slots: Vec<usize> = (1..24).collect();
        let mut truth = Vec::new();
        for _ in 0..n {
            let slot = slots.remove(r.random_range(0..slots.len()));
            let f0 = slot as f64 * 250.0 + r.random_range(-40.0..40.0);
            let width_hz = r.random_range(1.0..4.0);
            let height = r.random_range(0.5..2.0);
            let decay = 2.0 * PI * width_hz;
            truth.push(LorentzianComponent::new(height * decay / (2.0 * PI), decay, 2.0 * PI * f0).unwrap());
        }
        let mags: Vec<f64> = (0..n_bins)
            .map(|k| {
                let w = 2.0 * PI * k as f64 * bin;
                truth
                    .iter()
                    .map(|c| harmonic_gp::kernels::lorentzian(w, c.variance, c.decay, c.center_freq))
                    .sum()
            })
            .collect();
        let spec = MagnitudeSpectrum::from_values(mags, rate, fft_len).map_err(fail)?;
        let report = fit_msm_frequency_domain(&spec, n, 40.0).map_err(fail)?;
        if report.n_found() != n {
            return Err(format!("found {} of {n} peaks", report.n_found()));
        }
        let mut prev = report.initial_residual_l2;
        for &res in &report.residual_l2 {
            monotone &= res <= prev;
            prev = res;
        }
        for t in &truth {
            let got = report
                .components
                .iter()
                .min_by(|a, b| (a.center_freq - t.center_freq).abs().total_cmp(&(b.center_freq - t.center_freq).abs()))
                .unwrap();
            worst_c = worst_c.max((got.freq_hz() - t.freq_hz()).abs() / bin);
            worst_v = worst_v.max((got.variance / t.variance - 1.0).abs());
            worst_l = worst_l.max((got.decay / t.decay - 1.0).abs());
        }
    }
    within(
        worst_c <= 0.5 && worst_v <= 0.05 && worst_l <= 0.10 && monotone,
        format!(
            "centre {worst_c:.3} bin, variance {:.2}%, decay {:.2}%, residual monotone: {monotone}",
            100.0 * worst_v,
            100.0 * worst_l
        ),
    )
}

fn kernel_validity() -> Check {
    let mut r = rng(4);
    let mut min_eig = f64::INFINITY;
    for _ in 0..100 {
        let k = random_kernel(&mut r, 6);
        let n = r.random_range(2..=64);
        let span = r.random_range(0.001..2.0);
        let t = sorted_times(&mut r, n, span);
        let gram = build_gram(&k, &t, &t, 1e-6);
        let eig = SymmetricEigen::new(gram.values).eigenvalues.min();
        min_eig = min_eig.min(eig);
    }
    // Wiener-Khintchine: S(ω) = 2π ∫ k(r) e^{-iωr} dr under the Lorentzian
    // convention L = 2πσ²λ / (λ² + (ω - ω₀)²).
    let mut worst_wk = 0.0f64;
    let mut planner = FftPlanner::new();
    for _ in 0..10 {
        let decay = r.random_range(10.0..60.0);
        let f0 = r.random_range(50.0..500.0);
        let k = MsmKernel::new(vec![LorentzianComponent::new(r.random_range(0.2..2.0), decay, 2.0 * PI * f0).unwrap()])
            .unwrap();
        let dt = 1e-4;
        // Lags out to 40 decay lengths, laid out in wrap-around order.
        let half = (40.0 / decay / dt).ceil() as usize;
        let len = (2 * half + 1).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = (0..len)
            .map(|i| {
                let lag = if i <= len / 2 { i as f64 } else { i as f64 - len as f64 };
                Complex::new(k.eval(lag * dt), 0.0)
            })
            .collect();
        planner.plan_fft_forward(len).process(&mut buf);
        let bin_hz = 1.0 / (len as f64 * dt);
        let peak = (0..len / 2).max_by(|&a, &b| buf[a].re.total_cmp(&buf[b].re)).unwrap();
        let numeric = 2.0 * PI * dt * buf[peak].re;
        let exact = k.spectral_density(2.0 * PI * peak as f64 * bin_hz);
        worst_wk = worst_wk.max((numeric / exact - 1.0).abs());
    }
    within(
        min_eig >= -1e-8 && worst_wk <= 0.05,
        format!("min eigenvalue {min_eig:.2e}, peak-bin spectral error {:.3}%", 100.0 * worst_wk),
    )
}

fn random_q(r: &mut ChaCha8Rng, m: usize) -> VariationalGaussian {
    let mean = DVector::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal));
    let chol = DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => 0.5 * r.sample::<f64, _>(StandardNormal),
        std::cmp::Ordering::Equal => r.random_range(0.05..2.0),
        std::cmp::Ordering::Less => 0.0,
    });
    VariationalGaussian::new(mean, chol).unwrap()
}

/// Dense regression posterior at `z` and its sparse reproduction at `z` and
/// at off-grid times.
fn dense_oracle_error(r: &mut ChaCha8Rng) -> Result<f64, String> {
    let n = r.random_range(4..=32);
    let z: Vec<f64> = (0..n).map(|i| (i as f64 + r.random_range(0.2..0.8)) / n as f64).collect();
    let k = MsmKernel::new(vec![
        LorentzianComponent::from_hz(1.0, 0.1, 0.0).unwrap(),
        LorentzianComponent::from_hz(0.5, 0.2, 3.0).unwrap(),
    ])
    .unwrap();
    let noise = 0.1;
    let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let kzz = build_gram(&k, &z, &z, 0.0).values;
    let kn = (&kzz + DMatrix::identity(n, n) * noise).cholesky().ok_or("noisy Gram not PD")?;
    let post_mean = &kzz * kn.solve(&y);
    let post_cov = &kzz - &kzz * kn.solve(&kzz);
    let post_cov = (&post_cov + post_cov.transpose()) * 0.5;
    let q = VariationalGaussian::new(post_mean, post_cov.cholesky().ok_or("posterior not PD")?.l()).map_err(fail)?;
    let mut t: Vec<f64> = z.clone();
    t.extend((0..8).map(|_| r.random_range(0.0..1.0)));
    let zs = InducingSet::new(z.clone()).map_err(fail)?;
    let sparse = vgp::predict_marginals(&k, &zs, &q, &t, 0.0).map_err(fail)?;
    let kzt = build_gram(&k, &z, &t, 0.0).values;
    let dense_mean = kzt.transpose() * kn.solve(&y);
    let reduction = kzt.transpose() * kn.solve(&kzt);
    let mut worst = 0.0f64;
    for i in 0..t.len() {
        let dense_var = k.eval(0.0) - reduction[(i, i)];
        worst = worst
            .max((sparse.means[i] - dense_mean[i]).abs())
            .max((sparse.vars[i] - dense_var).abs());
    }
    Ok(worst)
}

fn gradient_error(kind: ModelKind, seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let comps = vec![
        MsmKernel::new(vec![LorentzianComponent::from_hz(1.0, 0.05, 20.0).unwrap()]).unwrap(),
        MsmKernel::new(vec![LorentzianComponent::from_hz(0.7, 0.08, 31.0).unwrap()]).unwrap(),
    ];
    let model = ModelSpec::with_default_activations(kind, comps, vec!["a".into(), "b".into()]).map_err(fail)?;
    let times: Vec<f64> = (0..40).map(|i| i as f64 / 200.0).collect();
    let values: Vec<f64> = times.iter().map(|t| (2.0 * PI * 20.0 * t).sin() + 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
    let template = vgp::initial_state(&model, &times, 6, 4).map_err(fail)?;
    let mc = McConfig { samples: 200, seed: 7 };
    let problem = ElboProblem::new(&model, &template, &times, &values, 0.05, GaussHermiteRule::new(20).map_err(fail)?, mc)
        .map_err(fail)?;
    let params: Vec<f64> = (0..problem.n_params()).map(|_| 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
    let (_, grad) = problem.value_and_grad(&params).map_err(fail)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = r.random_range(0..params.len());
        let mut p = params.clone();
        p[i] += h;
        let up = problem.value_and_grad(&p).map_err(fail)?.0.elbo;
        p[i] -= 2.0 * h;
        let down = problem.value_and_grad(&p).map_err(fail)?.0.elbo;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-3));
    }
    Ok(worst)
}

fn variational_core() -> Check {
    let mut r = rng(5);
    let mut min_kl = f64::INFINITY;
    let mut prior_kl = 0.0f64;
    for _ in 0..1000 {
        let k = random_kernel(&mut r, 3);
        let m = r.random_range(1..=8);
        let z = InducingSet::new(sorted_times(&mut r, m, 1.0)).map_err(fail)?;
        let lk = vgp::prior_cholesky(&k, &z, 1e-6).map_err(fail)?;
        let q = random_q(&mut r, z.len());
        min_kl = min_kl.min(vgp::kl_gaussian(&q, &lk).map_err(fail)?);
        let prior = VariationalGaussian::new(DVector::zeros(z.len()), lk.clone()).map_err(fail)?;
        prior_kl = prior_kl.max(vgp::kl_gaussian(&prior, &lk).map_err(fail)?.abs());
    }
    let mut oracle = 0.0f64;
    for _ in 0..20 {
        oracle = oracle.max(dense_oracle_error(&mut r)?);
    }
    let grad_sig = gradient_error(ModelKind::Sigmoid, 50)?;
    let grad_sof = gradient_error(ModelKind::Softmax, 51)?;
    within(
        min_kl >= 0.0 && prior_kl <= 1e-10 && oracle <= 1e-6 && grad_sig <= 1e-4 && grad_sof <= 1e-4,
        format!(
            "min KL {min_kl:.2e}, KL at prior {prior_kl:.1e}, dense oracle {oracle:.1e}, \
             gradient rel. error {grad_sig:.1e} (sigmoid) {grad_sof:.1e} (softmax)"
        ),
    )
}

/// `log p(y)` for the single-source sigmoid model by sampling `f` and `g`
/// from their priors; returns the estimate and its standard error.
fn mc_log_evidence(model: &ModelSpec, times: &[f64], y: &[f64], noise: f64, samples: usize, seed: u64) -> (f64, f64) {
    let n = times.len();
    let chol = |k: &MsmKernel| build_gram(k, times, times, 1e-10).values.cholesky().unwrap().l();
    let lf = chol(&model.component_kernels[0]);
    let lg = chol(&model.activation_kernels[0]);
    let mut r = rng(seed);
    let loglik = |r: &mut ChaCha8Rng| {
        let ef = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let eg = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let (f, g) = (&lf * ef, &lg * eg);
        (0..n)
            .map(|i| quadrature::log_normal_pdf(y[i], quadrature::sigmoid(g[i]) * f[i], noise))
            .sum::<f64>()
    };
    let shift = (0..10_000).map(|_| loglik(&mut r)).fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let w = (loglik(&mut r) - shift).exp();
        s1 += w;
        s2 += w * w;
    }
    let mean = s1 / samples as f64;
    let var = (s2 / samples as f64 - mean * mean).max(0.0);
    let se = (var / samples as f64).sqrt() / mean;
    (mean.ln() + shift, se)
}

fn elbo_bound() -> Check {
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..10u64 {
        let mut r = rng(600 + seed);
        let n = r.random_range(4..=8);
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let comp = MsmKernel::new(vec![LorentzianComponent::from_hz(1.0, 0.3, 1.5).unwrap()]).map_err(fail)?;
        let act = MsmKernel::matern(1.0, 0.5).map_err(fail)?;
        let model = ModelSpec::new(ModelKind::Sigmoid, vec![comp], vec![act], vec!["x".into()]).map_err(fail)?;
        let noise = 0.25;
        let y: Vec<f64> = times
            .iter()
            .map(|t| 0.8 * (2.0 * PI * 1.5 * t).cos() + 0.5 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let cfg = FitConfig {
            n_inducing_f: Some(n),
            n_inducing_g: Some(n),
            noise_var: Some(noise),
            ..FitConfig::default()
        };
        let out = vgp::fit(&model, &times, &y, &cfg).map_err(fail)?;
        let elbo = out.trace.last().unwrap().elbo;
        let (log_ev, se) = mc_log_evidence(&model, &times, &y, noise, 10_000_000, seed);
        let gap = elbo - (log_ev + 3.0 * se);
        worst_gap = worst_gap.max(gap);
    }
    within(
        worst_gap <= 0.0,
        format!("max ELBO - (log evidence + 3 se) = {worst_gap:.4} over 10 instances"),
    )
}

fn learn_kernels(spec: &fixtures::FixtureSpec, labels: &[&str], mode: LearningMode) -> Result<Vec<(String, MsmKernel)>, String> {
    labels
        .iter()
        .map(|l| {
            let clip = spec.training_note(l).map_err(fail)?;
            let out = pipeline::learn(&clip, mode, &LearnConfig::default()).map_err(fail)?;
            Ok((l.to_string(), out.kernel))
        })
        .collect()
}

fn transcription() -> Check {
    let start = Instant::now();
    let spec = fixtures::standard();
    let cfg = TranscribeConfig::default();
    let (seq, seq_truth) = spec.mixture(fixtures::SEQUENCE).map_err(fail)?;
    let (triad, triad_truth) = spec.mixture(fixtures::TRIAD).map_err(fail)?;
    let fl2 = learn_kernels(&spec, &["C4", "E4"], LearningMode::Fl)?;
    let tm2 = learn_kernels(&spec, &["C4", "E4"], LearningMode::Tm)?;
    let fl3 = learn_kernels(&spec, &["C4", "E4", "G4"], LearningMode::Fl)?;
    let score = |mix, truth, kernels, mode, segs: &[(f64, f64)]| {
        pipeline::evaluate_segments(mix, truth, kernels, mode, segs, &cfg)
            .map(|(e, _)| e.f_measure)
            .map_err(fail)
    };
    let f_fl = score(&seq, &seq_truth, &fl2, TranscriptionMode::Sig, &TWO_PITCH_SEGMENTS)?;
    let f_tm = score(&seq, &seq_truth, &tm2, TranscriptionMode::Sig, &TWO_PITCH_SEGMENTS)?;
    let f_loo = score(&triad, &triad_truth, &fl3, TranscriptionMode::SigLoo, &[(0.0, 4.0)])?;
    let clip = seq.slice(6.0, 6.5).map_err(fail)?;
    let run = || pipeline::transcribe(&clip, &fl2, TranscriptionMode::Sig, None, &cfg).map_err(fail);
    let (a, b) = (run()?, run()?);
    let deterministic = a.roll == b.roll && a.decomposition == b.decomposition;
    let elapsed = start.elapsed();
    within(
        f_fl >= 0.90 && f_loo >= 0.85 && f_fl >= f_tm && deterministic && elapsed <= Duration::from_secs(600),
        format!(
            "SIG-FL F={f_fl:.4}, SIG-TM F={f_tm:.4}, SIG-LOO-FL triad F={f_loo:.4}, \
             seed-deterministic: {deterministic}, {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn softmax_normalization() -> Check {
    let mut worst = 0.0f64;
    // Random states, including strongly saturated activations.
    let mut r = rng(8);
    let comps = vec![MsmKernel::matern(1.0, 0.1).map_err(fail)?; 3];
    let model = ModelSpec::with_default_activations(ModelKind::Softmax, comps, vec!["a".into(), "b".into(), "c".into()])
        .map_err(fail)?;
    let times: Vec<f64> = (0..200).map(|i| i as f64 / 100.0).collect();
    for _ in 0..50 {
        let mut state: VariationalState = vgp::initial_state(&model, &times, 5, 5).map_err(fail)?;
        let scale = r.random_range(0.1..30.0);
        state.activations = state
            .activations
            .iter()
            .map(|p| ProcessState {
                inducing: p.inducing.clone(),
                whitened: VariationalGaussian {
                    mean: DVector::from_fn(5, |_, _| scale * r.sample::<f64, _>(StandardNormal)),
                    cov_chol: p.whitened.cov_chol.clone(),
                },
            })
            .collect();
        let dec = models::decompose(&model, &state, &times).map_err(fail)?;
        worst = worst.max(dec.max_normalization_error());
    }
    // A fitted softmax transcription of a short two-pitch excerpt.
    let spec = fixtures::standard();
    let kernels = learn_kernels(&spec, &["C4", "E4"], LearningMode::Fl)?;
    let (seq, _) = spec.mixture(fixtures::SEQUENCE).map_err(fail)?;
    let clip = seq.slice(6.0, 6.2).map_err(fail)?;
    let out = pipeline::transcribe(&clip, &kernels, TranscriptionMode::Sof, None, &TranscribeConfig::default())
        .map_err(fail)?;
    worst = worst.max(out.decomposition.max_normalization_error());
    within(worst <= 1e-8, format!("max |Σ φ̂ - 1| = {worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("quadrature identity", quadrature_identity, Some(Duration::from_secs(5))),
        ("two-source closed form", two_source_equivalence, Some(Duration::from_secs(30))),
        ("Lorentzian recovery", lorentzian_recovery, Some(Duration::from_secs(10))),
        ("kernel validity", kernel_validity, None),
        ("variational core", variational_core, None),
        ("ELBO bound", elbo_bound, None),
        ("end-to-end transcription", transcription, None),
        ("softmax normalization", softmax_normalization, None),
    ];
    // Criterion numbers given on the command line restrict the run.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, limit) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; over the {} s budget", limit.as_secs()));
            }
        }
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{}] {name}: {detail} ({:.2} s)", i + 1, elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
