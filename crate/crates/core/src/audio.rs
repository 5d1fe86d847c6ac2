//! WAV input/output and synthesis of plucked-string-like test notes.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Peak level of synthesized clips.
pub const SYNTH_PEAK: f64 = 0.9;
pub const DEFAULT_SAMPLE_RATE: f64 = 16_000.0;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub label: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: f64, label: impl Into<String>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::input(format!("sample rate must be positive, got {sample_rate}")));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::input(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// `t_n = n / sample_rate`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|n| n as f64 / self.sample_rate).collect()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Samples in `[start_s, end_s)`, re-based to start at zero.
    pub fn slice(&self, start_s: f64, end_s: f64) -> Result<AudioClip> {
        if !(start_s >= 0.0 && end_s > start_s) {
            return Err(Error::input(format!("invalid slice [{start_s}, {end_s})")));
        }
        let a = ((start_s * self.sample_rate).round() as usize).min(self.len());
        let b = ((end_s * self.sample_rate).round() as usize).min(self.len());
        AudioClip::new(self.samples[a..b].to_vec(), self.sample_rate, self.label.clone())
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Codec {
    Pcm16,
    Float32,
}

/// Reads a PCM16 or 32-bit float WAV file. Multichannel files are reduced to
/// channel 0. PCM values are divided by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_wav(&bytes, label)
}

pub fn parse_wav(bytes: &[u8], label: impl Into<String>) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("RIFF", "missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<(Codec, usize, f64)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(&name, "chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::format("fmt ", "chunk shorter than 16 bytes"));
                }
                let mut tag = le_u16(body, 0);
                let channels = le_u16(body, 2) as usize;
                let rate = le_u32(body, 4) as f64;
                let bits = le_u16(body, 14);
                if tag == 0xFFFE {
                    if body.len() < 26 {
                        return Err(Error::format("fmt ", "truncated extensible format"));
                    }
                    tag = le_u16(body, 24);
                }
                let codec = match (tag, bits) {
                    (1, 16) => Codec::Pcm16,
                    (3, 32) => Codec::Float32,
                    _ => {
                        return Err(Error::format(
                            "fmt ",
                            format!("unsupported codec (format tag {tag}, {bits} bits)"),
                        ))
                    }
                };
                if channels == 0 || rate <= 0.0 {
                    return Err(Error::format("fmt ", "zero channels or sample rate"));
                }
                fmt = Some((codec, channels, rate));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (codec, channels, rate) = fmt.ok_or_else(|| Error::format("fmt ", "chunk missing"))?;
    let data = data.ok_or_else(|| Error::format("data", "chunk missing"))?;
    if channels > 1 {
        warn!("{channels}-channel WAV reduced to channel 0");
    }
    let width = match codec {
        Codec::Pcm16 => 2,
        Codec::Float32 => 4,
    };
    let frame = width * channels;
    if data.len() % frame != 0 {
        return Err(Error::format("data", "size is not a whole number of frames"));
    }
    let samples = data
        .chunks_exact(frame)
        .map(|f| match codec {
            Codec::Pcm16 => i16::from_le_bytes([f[0], f[1]]) as f64 / 32768.0,
            Codec::Float32 => (f32::from_le_bytes([f[0], f[1], f[2], f[3]]) as f64).clamp(-1.0, 1.0),
        })
        .collect::<Vec<_>>();
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::format("data", "non-finite sample"));
    }
    AudioClip::new(samples, rate, label)
}

/// Writes 16-bit PCM, quantizing `x` to `round(x · 32768)` clamped to the
/// `i16` range.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_wav(clip))?;
    Ok(())
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let rate = clip.sample_rate.round() as u32;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Parameters of one synthetic note.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoteSpec {
    pub label: String,
    pub f0_hz: f64,
    /// Amplitude of each harmonic.
    pub harmonic_amps: Vec<f64>,
    /// Exponential decay time of each harmonic in seconds (`inf` = none).
    pub harmonic_decays_s: Vec<f64>,
    #[serde(default)]
    pub attack_s: f64,
}

impl NoteSpec {
    /// Amplitudes `1/j` and decay times `decay_s / √j`.
    pub fn plucked(label: impl Into<String>, f0_hz: f64, n_harmonics: usize, decay_s: f64, attack_s: f64) -> Self {
        Self {
            label: label.into(),
            f0_hz,
            harmonic_amps: (1..=n_harmonics).map(|j| 1.0 / j as f64).collect(),
            harmonic_decays_s: (1..=n_harmonics).map(|j| decay_s / (j as f64).sqrt()).collect(),
            attack_s,
        }
    }

    pub fn render(&self, duration_s: f64, sample_rate: f64) -> Result<AudioClip> {
        synth_note(
            self.f0_hz,
            self.harmonic_amps.len(),
            &self.harmonic_amps,
            &self.harmonic_decays_s,
            duration_s,
            sample_rate,
            self.attack_s,
        )
        .map(|mut c| {
            c.label = self.label.clone();
            c
        })
    }
}

/// Unnormalized `Σ_j a_j e^{-t/τ_j} sin(2π j f0 t)` with a linear attack.
fn render_raw(
    f0_hz: f64,
    n_harmonics: usize,
    amps: &[f64],
    decays_s: &[f64],
    duration_s: f64,
    sample_rate: f64,
    attack_s: f64,
) -> Result<Vec<f64>> {
    if !(f0_hz > 0.0) {
        return Err(Error::param(format!("f0 must be positive, got {f0_hz}")));
    }
    if amps.len() != n_harmonics || decays_s.len() != n_harmonics {
        return Err(Error::param(format!(
            "{n_harmonics} harmonics but {} amplitudes and {} decays",
            amps.len(),
            decays_s.len()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::param("sample rate must be positive"));
    }
    if decays_s.iter().any(|d| !(*d > 0.0)) || !(attack_s >= 0.0) {
        return Err(Error::param("decays must be positive and attack non-negative"));
    }
    let n = (duration_s * sample_rate).round();
    if !(n >= 1.0) {
        return Err(Error::input(format!("duration {duration_s} s gives an empty clip")));
    }
    let n = n as usize;
    let nyquist = sample_rate / 2.0;
    let mut kept = Vec::new();
    for j in 1..=n_harmonics {
        let f = j as f64 * f0_hz;
        if f >= nyquist {
            warn!("dropping harmonic {j} at {f:.1} Hz (Nyquist {nyquist} Hz)");
        } else {
            kept.push((f, amps[j - 1], decays_s[j - 1]));
        }
    }
    let attack_n = attack_s * sample_rate;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let env = if attack_n > 0.0 { (i as f64 / attack_n).min(1.0) } else { 1.0 };
            env * kept
                .iter()
                .map(|&(f, a, tau)| a * (-t / tau).exp() * (2.0 * PI * f * t).sin())
                .sum::<f64>()
        })
        .collect())
}

fn peak_normalize(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// A harmonic note peak-normalized to 0.9.
pub fn synth_note(
    f0_hz: f64,
    n_harmonics: usize,
    harmonic_amps: &[f64],
    harmonic_decays_s: &[f64],
    duration_s: f64,
    sample_rate: f64,
    attack_s: f64,
) -> Result<AudioClip> {
    let raw = render_raw(f0_hz, n_harmonics, harmonic_amps, harmonic_decays_s, duration_s, sample_rate, attack_s)?;
    AudioClip::new(peak_normalize(raw, SYNTH_PEAK), sample_rate, format!("{f0_hz}Hz"))
}

/// One note of a mixture.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduledNote {
    pub note: NoteSpec,
    pub onset_s: f64,
    pub offset_s: f64,
}

/// Sum of the solo renderings placed at their onsets, before renormalization.
pub fn mix_unnormalized(notes: &[ScheduledNote], sample_rate: f64, duration_s: Option<f64>) -> Result<Vec<f64>> {
    for n in notes {
        if !(n.onset_s >= 0.0 && n.offset_s > n.onset_s) {
            return Err(Error::input(format!(
                "note {} has onset {} and offset {}",
                n.note.label, n.onset_s, n.offset_s
            )));
        }
        if let Some(d) = duration_s {
            if n.offset_s > d + 1e-9 {
                return Err(Error::input(format!("note {} ends after the clip", n.note.label)));
            }
        }
    }
    let end = duration_s.unwrap_or_else(|| notes.iter().map(|n| n.offset_s).fold(0.0, f64::max));
    let total = (end * sample_rate).round() as usize;
    if total == 0 {
        return Err(Error::input("mixture is empty"));
    }
    let mut mix = vec![0.0; total];
    for n in notes {
        let start = (n.onset_s * sample_rate).round() as usize;
        let stop = ((n.offset_s * sample_rate).round() as usize).min(total);
        let solo = n.note.render((stop - start) as f64 / sample_rate, sample_rate)?;
        for (m, s) in mix[start..stop].iter_mut().zip(&solo.samples) {
            *m += s;
        }
    }
    Ok(mix)
}

/// Mixture of notes renormalized to peak 0.9, with its ground truth.
pub fn synth_mixture(
    notes: &[ScheduledNote],
    sample_rate: f64,
    duration_s: Option<f64>,
) -> Result<(AudioClip, GroundTruthRoll)> {
    let mix = mix_unnormalized(notes, sample_rate, duration_s)?;
    let clip = AudioClip::new(peak_normalize(mix, SYNTH_PEAK), sample_rate, "mixture")?;
    let mut truth = GroundTruthRoll::default();
    for n in notes {
        truth.add(&n.note.label, n.note.f0_hz, n.onset_s, n.offset_s)?;
    }
    Ok((clip, truth))
}

/// Reference note intervals per pitch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthRoll {
    /// `(label, fundamental Hz)` in first-seen order.
    pub pitches: Vec<(String, f64)>,
    /// Sorted `(onset, offset)` intervals, one list per pitch.
    pub intervals: Vec<Vec<(f64, f64)>>,
}

impl GroundTruthRoll {
    pub fn add(&mut self, label: &str, f0_hz: f64, onset_s: f64, offset_s: f64) -> Result<()> {
        if !(onset_s >= 0.0 && offset_s > onset_s) {
            return Err(Error::input(format!("interval [{onset_s}, {offset_s}) for {label} is empty")));
        }
        let idx = match self.pitches.iter().position(|(l, _)| l == label) {
            Some(i) => i,
            None => {
                self.pitches.push((label.to_string(), f0_hz));
                self.intervals.push(Vec::new());
                self.pitches.len() - 1
            }
        };
        let list = &mut self.intervals[idx];
        if list.iter().any(|&(a, b)| onset_s < b && a < offset_s) {
            return Err(Error::input(format!("overlapping intervals for {label}")));
        }
        list.push((onset_s, offset_s));
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.pitches.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn intervals_of(&self, label: &str) -> &[(f64, f64)] {
        self.pitches
            .iter()
            .position(|(l, _)| l == label)
            .map(|i| self.intervals[i].as_slice())
            .unwrap_or(&[])
    }

    /// Whether `label` sounds at time `t` (`onset ≤ t < offset`).
    pub fn is_active(&self, label: &str, t: f64) -> bool {
        self.intervals_of(label).iter().any(|&(a, b)| a <= t && t < b)
    }

    /// Intervals clipped to `[start_s, end_s)` and shifted to start at zero.
    /// Every pitch is kept, even when it has no interval left.
    pub fn slice(&self, start_s: f64, end_s: f64) -> GroundTruthRoll {
        let intervals = self
            .intervals
            .iter()
            .map(|list| {
                list.iter()
                    .filter_map(|&(a, b)| {
                        let (a, b) = (a.max(start_s), b.min(end_s));
                        (b > a).then_some((a - start_s, b - start_s))
                    })
                    .collect()
            })
            .collect();
        GroundTruthRoll {
            pitches: self.pitches.clone(),
            intervals,
        }
    }

    /// Keeps only the named pitches, in the given order.
    pub fn restrict(&self, labels: &[String]) -> Result<GroundTruthRoll> {
        let mut out = GroundTruthRoll::default();
        for l in labels {
            let i = self
                .pitches
                .iter()
                .position(|(p, _)| p == l)
                .ok_or_else(|| Error::input(format!("pitch {l} not in ground truth")))?;
            out.pitches.push(self.pitches[i].clone());
            out.intervals.push(self.intervals[i].clone());
        }
        Ok(out)
    }

    /// CSV with header `pitch_label,f0_hz,onset_s,offset_s`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pitch_label,f0_hz,onset_s,offset_s\n");
        for ((label, f0), list) in self.pitches.iter().zip(&self.intervals) {
            for (a, b) in list {
                s.push_str(&format!("{label},{f0},{a},{b}\n"));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut roll = GroundTruthRoll::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("pitch_label")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::input(format!("truth line {} needs 4 columns", i + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::input(format!("truth line {}: bad number {s:?}", i + 1)))
            };
            roll.add(cols[0], num(cols[1])?, num(cols[2])?, num(cols[3])?)?;
        }
        Ok(roll)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}
