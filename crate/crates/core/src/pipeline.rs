//! Kernel learning, transcription and frame-level scoring.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, GroundTruthRoll};
use crate::error::{Error, Result};
use crate::kernels::MsmKernel;
use crate::models::{self, build_loo_spec_labeled, ModelKind, ModelSpec, SourceDecomposition};
use crate::spectral_fit::{self, FitOptions, FitReport, MagnitudeSpectrum, MlOptions, ResidualRule};
use crate::vgp::{self, ElboBreakdown, FitConfig, Optimizer};

/// Binary pitch × frame activity.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRoll {
    pub pitch_labels: Vec<String>,
    pub frame_hop_s: f64,
    /// `active[pitch][frame]`
    pub active: Vec<Vec<bool>>,
}

/// Number of frames covering `duration_s`.
pub fn frame_count(duration_s: f64, hop_s: f64) -> usize {
    // Guard against 0.3/0.01 = 30.000000000000004.
    let x = duration_s / hop_s;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

impl PianoRoll {
    pub fn new(pitch_labels: Vec<String>, frame_hop_s: f64, active: Vec<Vec<bool>>) -> Result<Self> {
        if !(frame_hop_s > 0.0) {
            return Err(Error::param("frame hop must be positive"));
        }
        if active.len() != pitch_labels.len() {
            return Err(Error::input("one activity row per pitch label is required"));
        }
        if active.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(Error::input("activity rows differ in length"));
        }
        Ok(Self {
            pitch_labels,
            frame_hop_s,
            active,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.active.first().map_or(0, Vec::len)
    }

    /// The ground truth on this roll's frame grid: a frame is active when
    /// its midpoint lies in some `[onset, offset)`.
    pub fn from_truth(truth: &GroundTruthRoll, labels: &[String], hop_s: f64, duration_s: f64) -> Result<Self> {
        let n = frame_count(duration_s, hop_s);
        let active = labels
            .iter()
            .map(|l| {
                if !truth.pitches.iter().any(|(p, _)| p == l) {
                    return Err(Error::input(format!("pitch {l} missing from ground truth")));
                }
                Ok((0..n)
                    .map(|k| truth.is_active(l, (k as f64 + 0.5) * hop_s))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels.to_vec(), hop_s, active)
    }

    /// Rows of `other` appended below (same frame grid, disjoint labels).
    pub fn stack(&mut self, other: &PianoRoll) -> Result<()> {
        if self.pitch_labels.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.n_frames() != self.n_frames() || other.frame_hop_s != self.frame_hop_s {
            return Err(Error::input("cannot stack rolls on different frame grids"));
        }
        self.pitch_labels.extend(other.pitch_labels.iter().cloned());
        self.active.extend(other.active.iter().cloned());
        Ok(())
    }

    /// Frames of `other` appended after these (same labels).
    pub fn append_frames(&mut self, other: &PianoRoll) -> Result<()> {
        if self.pitch_labels.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.pitch_labels != self.pitch_labels || other.frame_hop_s != self.frame_hop_s {
            return Err(Error::input("cannot join rolls with different labels or hops"));
        }
        for (a, b) in self.active.iter_mut().zip(&other.active) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    /// CSV: header `time_s,<labels>`, then one `0/1` row per frame.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s");
        for l in &self.pitch_labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for k in 0..self.n_frames() {
            s.push_str(&format!("{:.6}", k as f64 * self.frame_hop_s));
            for row in &self.active {
                s.push_str(if row[k] { ",1" } else { ",0" });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::input("empty roll CSV"))?;
        let labels: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut active = vec![Vec::new(); labels.len()];
        let mut times = Vec::new();
        for (i, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != labels.len() + 1 {
                return Err(Error::input(format!("roll row {} has {} columns", i + 1, cols.len())));
            }
            times.push(
                cols[0]
                    .parse::<f64>()
                    .map_err(|_| Error::input(format!("roll row {}: bad time {:?}", i + 1, cols[0])))?,
            );
            for (row, c) in active.iter_mut().zip(&cols[1..]) {
                row.push(match *c {
                    "1" => true,
                    "0" => false,
                    other => return Err(Error::input(format!("roll row {}: expected 0/1, got {other:?}", i + 1))),
                });
            }
        }
        let hop = if times.len() >= 2 { times[1] - times[0] } else { 0.01 };
        Self::new(labels, hop, active)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Per-frame activity from activation point estimates: pitch `m` is active in
/// frame `k` iff the mean `φ̂_m` over samples in `[k·hop, (k+1)·hop)` is
/// strictly greater than `threshold`. The silence row is never reported.
pub fn extract_roll(dec: &SourceDecomposition, threshold: f64, frame_hop_s: f64) -> Result<PianoRoll> {
    let duration = match dec.times.len() {
        0 => 0.0,
        1 => frame_hop_s,
        n => dec.times[n - 1] + (dec.times[n - 1] - dec.times[0]) / (n - 1) as f64,
    };
    extract_roll_for_duration(dec, threshold, frame_hop_s, duration)
}

pub fn extract_roll_for_duration(
    dec: &SourceDecomposition,
    threshold: f64,
    frame_hop_s: f64,
    duration_s: f64,
) -> Result<PianoRoll> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if !(frame_hop_s > 0.0) {
        return Err(Error::param("frame hop must be positive"));
    }
    let n_frames = frame_count(duration_s, frame_hop_s);
    let t = &dec.times;
    let mut active = Vec::with_capacity(dec.n_sources());
    for m in 0..dec.n_sources() {
        let phi = dec.source_activation(m);
        let row = (0..n_frames)
            .map(|k| {
                let (a, b) = (k as f64 * frame_hop_s, (k + 1) as f64 * frame_hop_s);
                let lo = t.partition_point(|&x| x < a);
                let hi = t.partition_point(|&x| x < b);
                let mean = if hi > lo {
                    phi[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
                } else if t.is_empty() {
                    0.0
                } else {
                    phi[lo.min(t.len() - 1)]
                };
                mean > threshold
            })
            .collect();
        active.push(row);
    }
    PianoRoll::new(dec.pitch_labels.clone(), frame_hop_s, active)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitchScore {
    pub label: String,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Frame-level precision, recall and F-measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub per_pitch: Vec<PitchScore>,
}

fn prf(tp: usize, fp: usize, fneg: usize) -> (f64, f64, f64) {
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

impl EvalResult {
    fn from_pitch_counts(per: Vec<(String, usize, usize, usize)>) -> Self {
        let (tp, fp, fneg) = per
            .iter()
            .fold((0, 0, 0), |acc, (_, a, b, c)| (acc.0 + a, acc.1 + b, acc.2 + c));
        let (precision, recall, f_measure) = prf(tp, fp, fneg);
        let per_pitch = per
            .into_iter()
            .map(|(label, a, b, c)| {
                let (p, r, f) = prf(a, b, c);
                PitchScore {
                    label,
                    true_pos: a,
                    false_pos: b,
                    false_neg: c,
                    precision: p,
                    recall: r,
                    f_measure: f,
                }
            })
            .collect();
        Self {
            precision,
            recall,
            f_measure,
            true_pos: tp,
            false_pos: fp,
            false_neg: fneg,
            per_pitch,
        }
    }

    /// Pools the cell counts of two evaluations (e.g. separate segments).
    pub fn merge(&self, other: &EvalResult) -> EvalResult {
        let mut per: Vec<(String, usize, usize, usize)> = self
            .per_pitch
            .iter()
            .map(|s| (s.label.clone(), s.true_pos, s.false_pos, s.false_neg))
            .collect();
        for s in &other.per_pitch {
            match per.iter_mut().find(|p| p.0 == s.label) {
                Some(p) => {
                    p.1 += s.true_pos;
                    p.2 += s.false_pos;
                    p.3 += s.false_neg;
                }
                None => per.push((s.label.clone(), s.true_pos, s.false_pos, s.false_neg)),
            }
        }
        Self::from_pitch_counts(per)
    }
}

/// Description of the scoring protocol, printed with evaluation output.
pub fn protocol_description(pred: &PianoRoll) -> String {
    format!(
        "frame-level scoring over (pitch, frame) cells; hop {:.1} ms; truth frame active when its midpoint lies in [onset, offset); pitches matched by label",
        pred.frame_hop_s * 1e3
    )
}

/// Scores `pred` against the ground truth discretized on `pred`'s frames.
pub fn frame_f_measure(pred: &PianoRoll, truth: &GroundTruthRoll) -> Result<EvalResult> {
    let mut pred_labels = pred.pitch_labels.clone();
    let mut truth_labels = truth.labels();
    pred_labels.sort();
    truth_labels.sort();
    if pred_labels != truth_labels {
        return Err(Error::input(format!(
            "predicted pitches {:?} do not match ground truth pitches {:?}",
            pred.pitch_labels,
            truth.labels()
        )));
    }
    let duration = pred.n_frames() as f64 * pred.frame_hop_s;
    let reference = PianoRoll::from_truth(truth, &pred.pitch_labels, pred.frame_hop_s, duration)?;
    let per = pred
        .pitch_labels
        .iter()
        .zip(pred.active.iter().zip(&reference.active))
        .map(|(label, (p, t))| {
            let mut c = (label.clone(), 0, 0, 0);
            for (&a, &b) in p.iter().zip(t) {
                match (a, b) {
                    (true, true) => c.1 += 1,
                    (true, false) => c.2 += 1,
                    (false, true) => c.3 += 1,
                    _ => {}
                }
            }
            c
        })
        .collect();
    Ok(EvalResult::from_pitch_counts(per))
}

/// How a pitch kernel is obtained from an isolated note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningMode {
    /// Perfect harmonics with equal variances.
    Tm,
    /// Marginal-likelihood refinement of the harmonic initialization.
    Ml,
    /// Greedy Lorentzian fit of the magnitude spectrum.
    Fl,
}

impl std::str::FromStr for LearningMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tm" => Ok(Self::Tm),
            "ml" => Ok(Self::Ml),
            "fl" => Ok(Self::Fl),
            _ => Err(Error::Config(format!("unknown learning mode {s:?} (tm, ml, fl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub n_harmonics: usize,
    pub peak_window_hz: f64,
    pub residual_rule: ResidualRule,
    /// Fundamental for TM/ML; `None` parses the pitch label, then falls back
    /// to the strongest spectral peak.
    pub f0_hz: Option<f64>,
    pub ml_snippet_len: usize,
    pub ml_snippet_offset_s: f64,
    pub ml_iters: usize,
    /// Rescale variances so they sum to the training note's power.
    pub calibrate_variance: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            n_harmonics: 10,
            peak_window_hz: 40.0,
            residual_rule: ResidualRule::Absolute,
            f0_hz: None,
            ml_snippet_len: 1024,
            ml_snippet_offset_s: 0.05,
            ml_iters: 30,
            calibrate_variance: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub kernel: MsmKernel,
    pub spectrum: MagnitudeSpectrum,
    pub fit_report: Option<FitReport>,
    /// Log marginal likelihood before and after refinement (ML only).
    pub ml_lml: Option<(f64, f64)>,
    pub ml_failed: bool,
}

/// Equal-temperament frequency of a name like `C4`, `F#3` or `Bb2` (A4 = 440 Hz).
pub fn pitch_label_hz(label: &str) -> Option<f64> {
    let mut chars = label.trim().chars();
    let base = match chars.next()?.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return None,
    };
    let rest: String = chars.collect();
    let (shift, octave) = if let Some(r) = rest.strip_prefix('#') {
        (1, r)
    } else if let Some(r) = rest.strip_prefix('b') {
        (-1, r)
    } else {
        (0, rest.as_str())
    };
    let octave: i32 = octave.parse().ok()?;
    let midi = 12 * (octave + 1) + base + shift;
    Some(440.0 * 2f64.powf((midi - 69) as f64 / 12.0))
}

/// Learns a pitch kernel from an isolated note.
pub fn learn(clip: &AudioClip, mode: LearningMode, config: &LearnConfig) -> Result<LearnOutcome> {
    let spectrum = spectral_fit::magnitude_ft(&clip.samples, clip.sample_rate)?;
    let power = clip.power();
    let calibrate = |k: MsmKernel| -> Result<MsmKernel> {
        if config.calibrate_variance && power > 0.0 {
            k.with_total_variance(power)
        } else {
            Ok(k)
        }
    };
    let f0 = || -> Result<f64> {
        if let Some(f) = config.f0_hz.or_else(|| pitch_label_hz(&clip.label)) {
            return Ok(f);
        }
        let (i, _) = spectrum
            .mags
            .iter()
            .enumerate()
            .skip(1)
            .fold((0, 0.0), |b, (i, &m)| if m > b.1 { (i, m) } else { b });
        if i == 0 {
            return Err(Error::input("cannot determine a fundamental from a silent clip"));
        }
        Ok(spectrum.freqs[i])
    };
    match mode {
        LearningMode::Fl => {
            let opts = FitOptions {
                peak_window_hz: config.peak_window_hz,
                residual_rule: config.residual_rule,
                ..FitOptions::default()
            };
            let report = spectral_fit::fit_msm_frequency_domain_with(&spectrum, config.n_harmonics, &opts)?;
            let kernel = calibrate(report.kernel()?)?;
            Ok(LearnOutcome {
                kernel,
                spectrum,
                fit_report: Some(report),
                ml_lml: None,
                ml_failed: false,
            })
        }
        LearningMode::Tm => {
            let k = spectral_fit::init_manual_default(f0()?, config.n_harmonics)?;
            Ok(LearnOutcome {
                kernel: calibrate(k)?,
                spectrum,
                fit_report: None,
                ml_lml: None,
                ml_failed: false,
            })
        }
        LearningMode::Ml => {
            let k0 = calibrate(spectral_fit::init_manual_default(f0()?, config.n_harmonics)?)?;
            let start = ((config.ml_snippet_offset_s * clip.sample_rate) as usize).min(clip.len());
            let end = (start + config.ml_snippet_len.min(spectral_fit::MAX_ML_SAMPLES)).min(clip.len());
            let snippet = &clip.samples[start..end];
            let times: Vec<f64> = (start..end).map(|n| n as f64 / clip.sample_rate).collect();
            let refined = spectral_fit::refine_marginal_likelihood_with(
                &k0,
                snippet,
                &times,
                &MlOptions {
                    max_iters: config.ml_iters,
                    ..MlOptions::default()
                },
            )?;
            Ok(LearnOutcome {
                ml_lml: (!refined.failed).then(|| (refined.initial_lml(), refined.final_lml())),
                ml_failed: refined.failed,
                kernel: refined.kernel,
                spectrum,
                fit_report: None,
            })
        }
    }
}

/// Which mixture model transcribes the audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranscriptionMode {
    Sig,
    Sof,
    SigLoo,
}

impl std::str::FromStr for TranscriptionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sig" => Ok(Self::Sig),
            "sof" => Ok(Self::Sof),
            "sig-loo" | "loo" => Ok(Self::SigLoo),
            _ => Err(Error::Config(format!("unknown transcription mode {s:?} (sig, sof, sig-loo)"))),
        }
    }
}

/// Transcription settings; every field has a default so a TOML file may set
/// any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscribeConfig {
    /// Required sample rate of the mixture, if set.
    pub sample_rate: Option<f64>,
    pub threshold: f64,
    pub frame_hop_s: f64,
    pub seed: u64,
    /// Length of the independently fitted analysis windows.
    pub window_s: f64,
    /// Inducing points per component process and window; `None` places one
    /// at every second sample.
    pub n_inducing_f: Option<usize>,
    pub n_inducing_g: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub quad_order: usize,
    pub mc_samples: usize,
    pub optimizer: Optimizer,
    pub activation_steps: usize,
    /// Noise variance relative to the mixture power.
    pub noise_rel: f64,
    pub activation_variance: f64,
    pub activation_lengthscale_s: f64,
    /// Total prior variance of each pitch kernel relative to the power of
    /// the window being fitted. Keeping it below one makes `σ(g)` saturate
    /// for sounding pitches instead of tracking their loudness.
    pub component_variance_rel: f64,
}

impl Default for TranscribeConfig {
    fn default() -> Self {
        Self {
            sample_rate: None,
            threshold: 0.5,
            frame_hop_s: 0.01,
            seed: 0,
            window_s: 0.01,
            n_inducing_f: None,
            n_inducing_g: 3,
            max_iters: 10,
            learning_rate: 0.1,
            quad_order: 20,
            mc_samples: 64,
            activation_steps: 20,
            optimizer: Optimizer::Coordinate,
            noise_rel: 1e-2,
            activation_variance: models::ACTIVATION_VARIANCE,
            activation_lengthscale_s: models::ACTIVATION_LENGTHSCALE_S,
            component_variance_rel: 0.1,
        }
    }
}

impl TranscribeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if !(self.frame_hop_s > 0.0) || !(self.window_s > 0.0) {
            return bad("frame hop and window length must be positive".into());
        }
        if self.n_inducing_f == Some(0) || self.n_inducing_g == 0 {
            return bad("inducing counts must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.noise_rel > 0.0) {
            return bad("learning rate and relative noise must be positive".into());
        }
        if !(self.activation_variance > 0.0 && self.activation_lengthscale_s > 0.0 && self.component_variance_rel > 0.0) {
            return bad("activation prior and component scale must be positive".into());
        }
        if self.mc_samples == 0 || self.quad_order == 0 {
            return bad("sample and quadrature counts must be positive".into());
        }
        Ok(())
    }

    fn fit_config(&self, n_f: usize, noise_var: f64) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            learning_rate: self.learning_rate,
            quad_order: self.quad_order,
            n_inducing_f: Some(n_f),
            n_inducing_g: Some(self.n_inducing_g),
            seed: self.seed,
            optimizer: self.optimizer,
            clip_norm: 100.0,
            activation_steps: self.activation_steps,
            mc_samples: self.mc_samples,
            noise_var: Some(noise_var),
            jitter: crate::kernels::DEFAULT_RELATIVE_JITTER,
        }
    }
}

/// Output of [`transcribe`].
#[derive(Debug, Clone)]
pub struct Transcription {
    pub roll: PianoRoll,
    pub decomposition: SourceDecomposition,
    /// Per-iteration ELBO summed over analysis windows.
    pub trace: Vec<ElboBreakdown>,
    pub noise_var: f64,
    pub model: ModelSpec,
}

/// Builds the mixture model for a transcription mode with the pitch kernels
/// as given.
pub fn build_model(
    kernels: &[(String, MsmKernel)],
    mode: TranscriptionMode,
    target: Option<&str>,
    config: &TranscribeConfig,
) -> Result<ModelSpec> {
    build_scaled_model(kernels, mode, target, config, None)
}

/// As [`build_model`], with every pitch kernel rescaled to total variance
/// `variance` when given.
fn build_scaled_model(
    kernels: &[(String, MsmKernel)],
    mode: TranscriptionMode,
    target: Option<&str>,
    config: &TranscribeConfig,
    variance: Option<f64>,
) -> Result<ModelSpec> {
    if kernels.is_empty() {
        return Err(Error::Config("no pitch kernels given".into()));
    }
    let scale = |k: &MsmKernel| match variance {
        Some(v) => k.scaled(v / k.eval(0.0)),
        None => Ok(k.clone()),
    };
    let act = MsmKernel::matern(config.activation_variance, config.activation_lengthscale_s)?;
    let (kind, comps, labels) = match mode {
        TranscriptionMode::Sig | TranscriptionMode::Sof => (
            if mode == TranscriptionMode::Sig { ModelKind::Sigmoid } else { ModelKind::Softmax },
            kernels.iter().map(|(_, k)| scale(k)).collect::<Result<Vec<_>>>()?,
            kernels.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
        ),
        TranscriptionMode::SigLoo => {
            let target = target.ok_or_else(|| Error::Config("sig-loo needs a target pitch".into()))?;
            let (t, rest): (Vec<_>, Vec<_>) = kernels.iter().partition(|(l, _)| l == target);
            let t = t
                .first()
                .ok_or_else(|| Error::Config(format!("no kernel for target pitch {target}")))?;
            let others = rest.iter().map(|(_, k)| scale(k)).collect::<Result<Vec<_>>>()?;
            let spec = build_loo_spec_labeled(&scale(&t.1)?, &others, target)?;
            (ModelKind::SigmoidLoo, spec.component_kernels, spec.pitch_labels)
        }
    };
    let n = comps.len();
    ModelSpec::new(kind, comps, vec![act; n], labels)
}

/// Consecutive `[start, end)` sample ranges of about `window` samples; a short
/// remainder is merged into the last window.
fn windows(n: usize, window: usize) -> Vec<(usize, usize)> {
    let window = window.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + window).min(n);
        if n - end < window / 2 {
            end = n;
        }
        out.push((start, end));
        start = end;
    }
    out
}

/// Fits the chosen mixture model window by window and thresholds the
/// activations into a piano-roll. For `SigLoo` the roll holds only the target.
pub fn transcribe(
    mixture: &AudioClip,
    kernels: &[(String, MsmKernel)],
    mode: TranscriptionMode,
    target: Option<&str>,
    config: &TranscribeConfig,
) -> Result<Transcription> {
    config.validate()?;
    if let Some(rate) = config.sample_rate {
        if (rate - mixture.sample_rate).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture sampled at {} Hz, configuration requires {rate} Hz",
                mixture.sample_rate
            )));
        }
    }
    if mixture.is_empty() {
        return Err(Error::input("mixture is empty"));
    }
    let model = build_model(kernels, mode, target, config)?;
    let noise_var = (config.noise_rel * mixture.power()).max(vgp::NOISE_FLOOR);
    let times = mixture.times();
    let win = (config.window_s * mixture.sample_rate).round() as usize;
    let mut decomposition = SourceDecomposition::default();
    let mut trace: Vec<ElboBreakdown> = Vec::new();
    for (a, b) in windows(mixture.len(), win) {
        let t = &times[a..b];
        let y = &mixture.samples[a..b];
        let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        let variance = config.component_variance_rel * power.max(noise_var);
        let local = build_scaled_model(kernels, mode, target, config, Some(variance))?;
        let n_f = config.n_inducing_f.unwrap_or((b - a).div_ceil(2)).min(b - a);
        let fit_cfg = config.fit_config(n_f, noise_var);
        let out = vgp::fit(&local, t, y, &fit_cfg)?;
        for (i, e) in out.trace.iter().enumerate() {
            match trace.get_mut(i) {
                Some(acc) => *acc = acc.combine(e),
                None => trace.push(*e),
            }
        }
        let dec = models::decompose(&local, &out.state, t)?;
        decomposition.append(&dec)?;
    }
    let mut roll = extract_roll_for_duration(&decomposition, config.threshold, config.frame_hop_s, mixture.duration())?;
    if mode == TranscriptionMode::SigLoo {
        roll.pitch_labels.truncate(1);
        roll.active.truncate(1);
    }
    Ok(Transcription {
        roll,
        decomposition,
        trace,
        noise_var,
        model,
    })
}

/// Leave-one-out transcription of every pitch in turn, rows stacked in kernel
/// order.
pub fn transcribe_loo_all(
    mixture: &AudioClip,
    kernels: &[(String, MsmKernel)],
    config: &TranscribeConfig,
) -> Result<PianoRoll> {
    let mut roll = PianoRoll {
        pitch_labels: Vec::new(),
        frame_hop_s: config.frame_hop_s,
        active: Vec::new(),
    };
    for (label, _) in kernels {
        let t = transcribe(mixture, kernels, TranscriptionMode::SigLoo, Some(label), config)?;
        roll.stack(&t.roll)?;
    }
    Ok(roll)
}

/// Transcribes each `[start, end)` segment separately and pools the scores.
pub fn evaluate_segments(
    mixture: &AudioClip,
    truth: &GroundTruthRoll,
    kernels: &[(String, MsmKernel)],
    mode: TranscriptionMode,
    segments: &[(f64, f64)],
    config: &TranscribeConfig,
) -> Result<(EvalResult, Vec<PianoRoll>)> {
    let labels: Vec<String> = kernels.iter().map(|(l, _)| l.clone()).collect();
    let truth = truth.restrict(&labels)?;
    let mut total: Option<EvalResult> = None;
    let mut rolls = Vec::new();
    for &(a, b) in segments {
        let clip = mixture.slice(a, b)?;
        let seg_truth = truth.slice(a, b);
        let roll = match mode {
            TranscriptionMode::SigLoo => transcribe_loo_all(&clip, kernels, config)?,
            _ => transcribe(&clip, kernels, mode, None, config)?.roll,
        };
        let score = frame_f_measure(&roll, &seg_truth)?;
        total = Some(match total {
            Some(t) => t.merge(&score),
            None => score,
        });
        rolls.push(roll);
    }
    total
        .map(|t| (t, rolls))
        .ok_or_else(|| Error::input("no segments to evaluate"))
}
