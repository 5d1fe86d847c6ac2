use harmonic_gp::audio::{AudioClip, GroundTruthRoll};
use harmonic_gp::fixtures::{self, SEQUENCE};
use harmonic_gp::models::SourceDecomposition;
use harmonic_gp::pipeline::{
    extract_roll, frame_count, frame_f_measure, learn, transcribe, LearnConfig, LearningMode, PianoRoll, TranscribeConfig,
    TranscriptionMode,
};
use harmonic_gp::{MarginalMoments, MsmKernel};
use proptest::prelude::*;

fn truth_c4(intervals: &[(f64, f64)]) -> GroundTruthRoll {
    let mut t = GroundTruthRoll::default();
    for &(a, b) in intervals {
        t.add("C4", 261.63, a, b).unwrap();
    }
    t
}

fn single_row(active: Vec<bool>) -> PianoRoll {
    PianoRoll::new(vec!["C4".into()], 0.01, vec![active]).unwrap()
}

fn two_pitch_kernels() -> Vec<(String, MsmKernel)> {
    let spec = fixtures::standard();
    ["C4", "E4"]
        .iter()
        .map(|l| {
            let clip = spec.training_note(l).unwrap();
            (l.to_string(), learn(&clip, LearningMode::Fl, &LearnConfig::default()).unwrap().kernel)
        })
        .collect()
}

#[test]
fn perfect_prediction_scores_one() {
    let truth = truth_c4(&[(0.02, 0.06)]);
    let pred = single_row(vec![false, false, true, true, true, true, false, false]);
    let score = frame_f_measure(&pred, &truth).unwrap();
    assert_eq!(score.f_measure, 1.0);
    assert_eq!((score.true_pos, score.false_pos, score.false_neg), (4, 0, 0));
}

#[test]
fn silent_prediction_scores_zero() {
    let truth = truth_c4(&[(0.0, 0.04)]);
    let score = frame_f_measure(&single_row(vec![false; 8]), &truth).unwrap();
    assert_eq!(score.f_measure, 0.0);
    assert_eq!(score.false_neg, 4);
}

#[test]
fn half_recall_scores_two_thirds() {
    let truth = truth_c4(&[(0.0, 0.04)]);
    let pred = single_row(vec![true, true, false, false, false, false]);
    let score = frame_f_measure(&pred, &truth).unwrap();
    assert!((score.f_measure - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(score.precision, 1.0);
    assert_eq!(score.recall, 0.5);
}

#[test]
fn mismatched_pitch_sets_are_rejected() {
    let mut truth = truth_c4(&[(0.0, 0.04)]);
    truth.add("E4", 329.63, 0.0, 0.02).unwrap();
    assert!(frame_f_measure(&single_row(vec![true; 4]), &truth).is_err());
}

fn constant_decomposition(phi: f64, n: usize) -> SourceDecomposition {
    SourceDecomposition {
        times: (0..n).map(|i| i as f64 / 1000.0).collect(),
        pitch_labels: vec!["C4".into()],
        activation_moments: vec![MarginalMoments::default()],
        component_moments: vec![MarginalMoments::default()],
        activations: vec![vec![phi; n]],
        has_silence: false,
    }
}

#[test]
fn threshold_is_strict() {
    let at = extract_roll(&constant_decomposition(0.5, 50), 0.5, 0.01).unwrap();
    assert_eq!(at.n_frames(), 5);
    assert!(at.active[0].iter().all(|&a| !a));
    let above = extract_roll(&constant_decomposition(0.5 + 1e-12, 50), 0.5, 0.01).unwrap();
    assert!(above.active[0].iter().all(|&a| a));
    assert!(extract_roll(&constant_decomposition(0.5, 50), 1.0, 0.01).is_err());
}

#[test]
fn frame_count_tolerates_rounding() {
    assert_eq!(frame_count(0.3, 0.01), 30);
    assert_eq!(frame_count(0.305, 0.01), 31);
}

#[test]
fn roll_csv_round_trips() {
    let roll = PianoRoll::new(vec!["C4".into(), "E4".into()], 0.01, vec![vec![true, false, true], vec![false, false, true]])
        .unwrap();
    assert_eq!(PianoRoll::from_csv(&roll.to_csv()).unwrap(), roll);
}

#[test]
fn silence_yields_an_empty_roll() {
    let clip = AudioClip::new(vec![0.0; 1600], 16_000.0, "silence").unwrap();
    let out = transcribe(&clip, &two_pitch_kernels(), TranscriptionMode::Sig, None, &TranscribeConfig::default()).unwrap();
    assert_eq!(out.roll.n_frames(), 10);
    assert!(out.roll.active.iter().flatten().all(|&a| !a));
}

#[test]
fn transcription_is_deterministic_for_a_seed() {
    let (seq, _) = fixtures::standard().mixture(SEQUENCE).unwrap();
    let clip = seq.slice(6.0, 6.1).unwrap();
    let kernels = two_pitch_kernels();
    let cfg = TranscribeConfig { seed: 7, ..Default::default() };
    let a = transcribe(&clip, &kernels, TranscriptionMode::Sig, None, &cfg).unwrap();
    let b = transcribe(&clip, &kernels, TranscriptionMode::Sig, None, &cfg).unwrap();
    assert_eq!(a.roll, b.roll);
    for (x, y) in a.decomposition.activations.iter().flatten().zip(b.decomposition.activations.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn two_pitch_slice_is_transcribed() {
    let (seq, truth) = fixtures::standard().mixture(SEQUENCE).unwrap();
    let kernels = two_pitch_kernels();
    let labels: Vec<String> = kernels.iter().map(|(l, _)| l.clone()).collect();
    // C4 for half a second, then E4.
    let (a, b) = (1.5, 2.5);
    let clip = seq.slice(a, b).unwrap();
    let truth = truth.restrict(&labels).unwrap().slice(a, b);
    let out = transcribe(&clip, &kernels, TranscriptionMode::Sig, None, &TranscribeConfig::default()).unwrap();
    let dec = &out.decomposition;
    let (mut sounding, mut hits) = (0, 0);
    for (m, label) in labels.iter().enumerate() {
        for (t, phi) in dec.times.iter().zip(dec.source_activation(m)) {
            let frame_mid = (t / 0.01).floor() * 0.01 + 0.005;
            if truth.is_active(label, frame_mid) {
                sounding += 1;
                hits += usize::from(*phi > 0.5);
            }
        }
    }
    assert!(hits as f64 >= 0.9 * sounding as f64, "{hits} of {sounding} sounding samples above 0.5");
    let reference = PianoRoll::from_truth(&truth, &labels, 0.01, clip.duration()).unwrap();
    let cells = reference.n_frames() * labels.len();
    let matching = out
        .roll
        .active
        .iter()
        .flatten()
        .zip(reference.active.iter().flatten())
        .filter(|(p, r)| p == r)
        .count();
    assert!(matching as f64 >= 0.95 * cells as f64, "{matching} of {cells} cells match");
}

#[test]
fn softmax_activations_sum_to_one() {
    let (seq, _) = fixtures::standard().mixture(SEQUENCE).unwrap();
    let clip = seq.slice(6.0, 6.05).unwrap();
    let out = transcribe(&clip, &two_pitch_kernels(), TranscriptionMode::Sof, None, &TranscribeConfig::default()).unwrap();
    assert!(out.decomposition.has_silence);
    assert!(out.decomposition.max_normalization_error() <= 1e-8);
}

#[test]
fn leave_one_out_needs_a_target() {
    let clip = AudioClip::new(vec![0.1; 160], 16_000.0, "x").unwrap();
    let err = transcribe(&clip, &two_pitch_kernels(), TranscriptionMode::SigLoo, None, &TranscribeConfig::default());
    assert!(matches!(err, Err(harmonic_gp::Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_ignores_pitch_order(
        rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 20), 3),
        cuts in prop::collection::vec((0usize..20, 1usize..10), 3),
    ) {
        let labels = ["C4", "E4", "G4"];
        let mut truth = GroundTruthRoll::default();
        for (l, &(a, len)) in labels.iter().zip(&cuts) {
            truth.add(l, 0.0, a as f64 * 0.01, (a + len) as f64 * 0.01).unwrap();
        }
        let forward = PianoRoll::new(labels.iter().map(|s| s.to_string()).collect(), 0.01, rows.clone()).unwrap();
        let reversed = PianoRoll::new(
            labels.iter().rev().map(|s| s.to_string()).collect(),
            0.01,
            rows.iter().rev().cloned().collect(),
        )
        .unwrap();
        let a = frame_f_measure(&forward, &truth).unwrap();
        let b = frame_f_measure(&reversed, &truth).unwrap();
        prop_assert_eq!((a.true_pos, a.false_pos, a.false_neg), (b.true_pos, b.false_pos, b.false_neg));
        prop_assert_eq!(a.f_measure.to_bits(), b.f_measure.to_bits());
    }
}
