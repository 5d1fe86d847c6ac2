use std::f64::consts::PI;

use harmonic_gp::audio::{
    encode_wav, load_wav, mix_unnormalized, parse_wav, save_wav, synth_mixture, synth_note, AudioClip, GroundTruthRoll,
    NoteSpec, ScheduledNote, SYNTH_PEAK,
};
use harmonic_gp::fixtures::{self, SEQUENCE};
use harmonic_gp::spectral_fit::magnitude_ft;
use harmonic_gp::Error;
use proptest::prelude::*;

const RATE: f64 = 16_000.0;

fn chunk_of(err: Error) -> String {
    match err {
        Error::Format { chunk, .. } => chunk,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn full_scale_sample_reads_back_exactly() {
    let clip = AudioClip::new(vec![32767.0 / 32768.0, -1.0, 0.0], RATE, "x").unwrap();
    let back = parse_wav(&encode_wav(&clip), "x").unwrap();
    assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0, 0.0]);
    assert_eq!(back.sample_rate, RATE);
}

#[test]
fn silence_round_trips_to_zeros() {
    let clip = AudioClip::new(vec![0.0; 100], RATE, "s").unwrap();
    let back = parse_wav(&encode_wav(&clip), "s").unwrap();
    assert!(back.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c4.wav");
    let clip = synth_note(261.63, 3, &[1.0, 0.5, 0.3], &[1.0, 0.7, 0.5], 0.25, RATE, 0.005).unwrap();
    save_wav(&clip, &path).unwrap();
    let back = load_wav(&path).unwrap();
    assert_eq!(back.label, "c4");
    assert_eq!(back.len(), clip.len());
    let worst = clip.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 32768.0);
}

#[test]
fn malformed_files_name_the_chunk() {
    assert_eq!(chunk_of(parse_wav(b"RIFX....WAVE", "x").unwrap_err()), "RIFF");
    let good = encode_wav(&AudioClip::new(vec![0.1; 8], RATE, "x").unwrap());

    // 24-bit PCM is unsupported.
    let mut bits = good.clone();
    bits[34..36].copy_from_slice(&24u16.to_le_bytes());
    assert_eq!(chunk_of(parse_wav(&bits, "x").unwrap_err()), "fmt ");

    // Data chunk claims more bytes than exist.
    let mut long = good.clone();
    long[40..44].copy_from_slice(&1000u32.to_le_bytes());
    assert_eq!(chunk_of(parse_wav(&long, "x").unwrap_err()), "data");

    // No data chunk at all.
    assert_eq!(chunk_of(parse_wav(&good[..36], "x").unwrap_err()), "data");
}

#[test]
fn single_harmonic_is_a_pure_sinusoid() {
    let clip = synth_note(440.0, 1, &[1.0], &[f64::INFINITY], 0.1, RATE, 0.0).unwrap();
    let raw: Vec<f64> = (0..clip.len()).map(|i| (2.0 * PI * 440.0 * i as f64 / RATE).sin()).collect();
    let gain = SYNTH_PEAK / raw.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    for (s, r) in clip.samples.iter().zip(&raw) {
        assert!((s - gain * r).abs() < 1e-12);
    }
}

#[test]
fn plucked_note_has_peaks_at_integer_multiples() {
    let spec = fixtures::standard();
    let clip = spec.training_note("C4").unwrap();
    let mags = magnitude_ft(&clip.samples, clip.sample_rate).unwrap();
    let bin = mags.bin_width();
    let local_max = |f: f64| {
        let k = (f / bin).round() as usize;
        let best = (k - 4..=k + 4).max_by(|&a, &b| mags.mags[a].total_cmp(&mags.mags[b])).unwrap();
        (mags.freqs[best], mags.mags[best])
    };
    let mut heights = Vec::new();
    for j in 1..=5 {
        let (f, h) = local_max(261.63 * j as f64);
        assert!((f - 261.63 * j as f64).abs() <= 2.0 * bin, "harmonic {j} at {f}");
        heights.push(h);
    }
    assert!(heights.windows(2).all(|w| w[1] < w[0]), "{heights:?}");
}

#[test]
fn zero_duration_is_rejected() {
    assert!(synth_note(440.0, 1, &[1.0], &[1.0], 0.0, RATE, 0.0).is_err());
    assert!(synth_note(440.0, 2, &[1.0], &[1.0], 1.0, RATE, 0.0).is_err());
    assert!(synth_note(-1.0, 1, &[1.0], &[1.0], 1.0, RATE, 0.0).is_err());
}

#[test]
fn mixture_is_sum_of_solo_renderings() {
    let a = NoteSpec::plucked("A", 220.0, 4, 1.0, 0.005);
    let b = NoteSpec::plucked("B", 330.0, 4, 1.0, 0.005);
    let notes = [
        ScheduledNote { note: a.clone(), onset_s: 0.0, offset_s: 0.5 },
        ScheduledNote { note: b.clone(), onset_s: 0.25, offset_s: 0.5 },
    ];
    let mix = mix_unnormalized(&notes, RATE, Some(0.5)).unwrap();
    let sa = a.render(0.5, RATE).unwrap().samples;
    let sb = b.render(0.25, RATE).unwrap().samples;
    for (i, m) in mix.iter().enumerate() {
        let expected = sa[i] + if i >= 4000 { sb[i - 4000] } else { 0.0 };
        assert!((m - expected).abs() < 1e-12);
    }
    let (clip, truth) = synth_mixture(&notes, RATE, Some(0.5)).unwrap();
    let peak = clip.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    assert!((peak - SYNTH_PEAK).abs() < 1e-12);
    assert!(truth.is_active("B", 0.3) && !truth.is_active("B", 0.2));
}

#[test]
fn sequence_truth_marks_the_expected_events() {
    let (clip, truth) = fixtures::standard().mixture(SEQUENCE).unwrap();
    assert!((clip.duration() - 14.0).abs() < 1e-9);
    let c4: Vec<usize> = (0..7).filter(|e| truth.is_active("C4", 2.0 * *e as f64 + 1.0)).map(|e| e + 1).collect();
    assert_eq!(c4, vec![1, 4, 5, 7]);
    assert!(truth.is_active("G4", 4.0) && !truth.is_active("G4", 3.999));
}

#[test]
fn synthesis_is_deterministic() {
    let spec = fixtures::standard();
    let a = spec.mixture(SEQUENCE).unwrap().0;
    let b = spec.mixture(SEQUENCE).unwrap().0;
    assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn truth_slice_rebases_and_clips() {
    let (_, truth) = fixtures::standard().mixture(SEQUENCE).unwrap();
    let s = truth.slice(5.0, 7.0);
    assert_eq!(s.intervals_of("G4"), &[(0.0, 1.0)]);
    assert_eq!(s.intervals_of("C4"), &[(1.0, 2.0)]);
    assert_eq!(s.labels().len(), 3);
    assert!(truth.restrict(&["F4".into()]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_round_trip_within_one_step(samples in prop::collection::vec(-1.0f64..1.0, 1..500)) {
        let clip = AudioClip::new(samples.clone(), RATE, "p").unwrap();
        let back = parse_wav(&encode_wav(&clip), "p").unwrap();
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn truth_csv_round_trips(intervals in prop::collection::vec((0u32..100, 1u32..50), 1..8)) {
        let mut roll = GroundTruthRoll::default();
        let mut cursor = 0.0;
        for (i, (gap, len)) in intervals.iter().enumerate() {
            let a = cursor + *gap as f64 * 0.01;
            let b = a + *len as f64 * 0.01;
            roll.add(if i % 2 == 0 { "C4" } else { "E4" }, if i % 2 == 0 { 261.63 } else { 329.63 }, a, b).unwrap();
            cursor = b;
        }
        prop_assert_eq!(GroundTruthRoll::from_csv(&roll.to_csv()).unwrap(), roll);
    }
}
