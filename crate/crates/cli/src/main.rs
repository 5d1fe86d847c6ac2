//! `hgp`: learn pitch kernels from isolated notes, transcribe mixtures,
//! score piano-rolls and render synthetic fixtures.

mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use harmonic_gp::audio::{self, GroundTruthRoll};
use harmonic_gp::fixtures::{self, FixtureSpec};
use harmonic_gp::pipeline::{self, LearnConfig, LearningMode, PianoRoll, TranscribeConfig, TranscriptionMode};
use harmonic_gp::{ElboBreakdown, Error as CoreError, KernelFile, MsmKernel};

#[derive(Parser, Debug)]
#[command(name = "hgp", version, about = "Harmonic GP pitch detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a pitch kernel from an isolated note.
    Learn(LearnArgs),
    /// Transcribe a mixture into a piano-roll.
    Transcribe(TranscribeArgs),
    /// Score a predicted piano-roll against ground truth.
    Eval(EvalArgs),
    /// Render training notes and mixtures of a fixture set.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    pitch_label: String,
    #[arg(long, default_value_t = 10)]
    n_harmonics: usize,
    #[arg(long, default_value = "fl")]
    mode: LearningMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40.0)]
    peak_window_hz: f64,
    /// Fundamental in Hz for tm/ml; defaults to the value implied by the label.
    #[arg(long)]
    f0_hz: Option<f64>,
    /// PNG of the magnitude spectrum with the learnt density overlaid.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TranscribeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory of kernel JSON files, one per pitch.
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long, default_value = "sig")]
    mode: TranscriptionMode,
    /// Target of sig-loo; every pitch in turn when omitted.
    #[arg(long)]
    target_pitch: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// CSV of the ELBO per iteration, summed over analysis windows.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory for activation, roll and trace plots.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with `TranscribeConfig` fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Print the result as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Fixture JSON; the built-in C4/E4/G4 set when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Learn(a) => run_learn(&a),
        Command::Transcribe(a) => run_transcribe(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Synth(a) => run_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::InvalidParameter(_) => 2,
                CoreError::Numerical { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run_learn(args: &LearnArgs) -> Result<()> {
    let mut clip = audio::load_wav(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    clip.label = args.pitch_label.clone();
    let config = LearnConfig {
        n_harmonics: args.n_harmonics,
        peak_window_hz: args.peak_window_hz,
        f0_hz: args.f0_hz,
        ..LearnConfig::default()
    };
    let outcome = pipeline::learn(&clip, args.mode, &config)?;
    if let Some(report) = &outcome.fit_report {
        if report.stopped_early() {
            log::warn!("only {} of {} peaks resolvable", report.n_found(), report.requested);
        }
        let flagged = report.flagged.iter().filter(|&&f| f).count();
        if flagged > 0 {
            log::warn!("{flagged} peak fits did not converge and kept their initialization");
        }
    }
    if outcome.ml_failed {
        log::warn!("marginal-likelihood refinement failed; kept the harmonic initialization");
    } else if let Some((a, b)) = outcome.ml_lml {
        log::info!("log marginal likelihood {a:.2} -> {b:.2}");
    }
    KernelFile::from_kernel(&args.pitch_label, &outcome.kernel).save(&args.out)?;
    log::info!("{} components written to {}", outcome.kernel.len(), args.out.display());

    if let Some(path) = &args.plot {
        let spec = &outcome.spectrum;
        let density: Vec<f64> = spec
            .freqs
            .iter()
            .map(|f| outcome.kernel.spectral_density(2.0 * std::f64::consts::PI * f))
            .collect();
        let top = outcome
            .kernel
            .components()
            .iter()
            .map(|c| c.freq_hz())
            .fold(0.0, f64::max);
        plot::spectrum(path, &spec.freqs, &spec.mags, &density, (1.2 * top).max(100.0))?;
    }
    Ok(())
}

/// Kernel files of a directory ordered by fundamental, then label.
fn load_kernels(dir: &Path) -> Result<Vec<(String, MsmKernel)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading kernel directory {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let file = KernelFile::load(&path).with_context(|| format!("loading kernel {}", path.display()))?;
        out.push((file.pitch_label.clone(), file.to_kernel()?));
    }
    if out.is_empty() {
        return Err(CoreError::Config(format!("no kernel files in {}", dir.display())).into());
    }
    let key = |l: &str| pipeline::pitch_label_hz(l).unwrap_or(f64::INFINITY);
    out.sort_by(|a, b| key(&a.0).total_cmp(&key(&b.0)).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn load_config(args: &TranscribeArgs) -> Result<TranscribeConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<TranscribeConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TranscribeConfig::default(),
    };
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn run_transcribe(args: &TranscribeArgs) -> Result<()> {
    let config = load_config(args)?;
    let kernels = load_kernels(&args.kernels)?;
    let mixture = audio::load_wav(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if args.target_pitch.is_some() && args.mode != TranscriptionMode::SigLoo {
        bail!(CoreError::Config("--target-pitch applies to sig-loo only".into()));
    }
    let targets: Vec<Option<String>> = match (args.mode, &args.target_pitch) {
        (TranscriptionMode::SigLoo, None) => kernels.iter().map(|(l, _)| Some(l.clone())).collect(),
        (_, t) => vec![t.clone()],
    };

    let mut roll: Option<PianoRoll> = None;
    let mut trace: Vec<ElboBreakdown> = Vec::new();
    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut times = Vec::new();
    for target in &targets {
        let t = pipeline::transcribe(&mixture, &kernels, args.mode, target.as_deref(), &config)?;
        log::info!(
            "{}: ELBO {:.1} -> {:.1}, noise variance {:.3e}",
            target.as_deref().unwrap_or("all pitches"),
            t.trace.first().map_or(f64::NAN, |b| b.elbo),
            t.trace.last().map_or(f64::NAN, |b| b.elbo),
            t.noise_var
        );
        let n_rows = t.roll.pitch_labels.len();
        curves.extend((0..n_rows).map(|m| t.decomposition.source_activation(m).to_vec()));
        times = t.decomposition.times.clone();
        for (i, b) in t.trace.iter().enumerate() {
            match trace.get_mut(i) {
                Some(acc) => *acc = acc.combine(b),
                None => trace.push(*b),
            }
        }
        match &mut roll {
            Some(r) => r.stack(&t.roll)?,
            None => roll = Some(t.roll),
        }
    }
    let roll = roll.expect("at least one transcription ran");
    roll.save(&args.out)?;
    log::info!("roll with {} frames written to {}", roll.n_frames(), args.out.display());

    if let Some(path) = &args.trace {
        std::fs::write(path, trace_csv(&trace)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = &args.plot {
        std::fs::create_dir_all(dir)?;
        let refs: Vec<&[f64]> = curves.iter().map(|c| c.as_slice()).collect();
        plot::activations(&dir.join("activations.png"), &times, &refs, config.threshold)?;
        plot::roll(&dir.join("roll.png"), &roll.active, roll.frame_hop_s)?;
        // The initial ELBO is far below the rest; plot from the first step.
        let elbo: Vec<f64> = trace.iter().skip(1).map(|b| b.elbo).collect();
        if elbo.len() > 1 {
            plot::trace(&dir.join("trace.png"), &elbo)?;
        }
        log::info!(
            "plots in {} (pitch order {})",
            dir.display(),
            roll.pitch_labels.join(", ")
        );
    }
    Ok(())
}

fn trace_csv(trace: &[ElboBreakdown]) -> String {
    let mut out = String::from("iteration,expected_loglik,kl_f_total,kl_g_total,elbo\n");
    for (i, b) in trace.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            b.expected_loglik, b.kl_f_total, b.kl_g_total, b.elbo
        );
    }
    out
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let pred = PianoRoll::load(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let truth = GroundTruthRoll::load(&args.truth).with_context(|| format!("reading {}", args.truth.display()))?;
    let result = pipeline::frame_f_measure(&pred, &truth)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    println!("# {}", pipeline::protocol_description(&pred));
    println!(
        "overall  P={:.4} R={:.4} F={:.4}  (tp {} fp {} fn {})",
        result.precision, result.recall, result.f_measure, result.true_pos, result.false_pos, result.false_neg
    );
    for s in &result.per_pitch {
        println!(
            "{:<8} P={:.4} R={:.4} F={:.4}  (tp {} fp {} fn {})",
            s.label, s.precision, s.recall, s.f_measure, s.true_pos, s.false_pos, s.false_neg
        );
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => FixtureSpec::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => fixtures::standard(),
    };
    std::fs::create_dir_all(&args.out)?;
    let rendered = spec.render()?;
    for clip in &rendered.training {
        audio::save_wav(clip, args.out.join(format!("{}.wav", clip.label)))?;
    }
    for (name, clip, truth) in &rendered.mixtures {
        audio::save_wav(clip, args.out.join(format!("{name}.wav")))?;
        truth.save(args.out.join(format!("{name}_truth.csv")))?;
    }
    std::fs::write(args.out.join("fixture.json"), spec.to_json()?)?;
    log::info!(
        "{} training notes and {} mixtures written to {}",
        rendered.training.len(),
        rendered.mixtures.len(),
        args.out.display()
    );
    Ok(())
}
