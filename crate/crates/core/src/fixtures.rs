//! Synthetic note sets standing in for recorded guitar audio.
//!
//! A [`FixtureSpec`] lists pitches and mixtures; [`FixtureSpec::render`]
//! produces a 2 s training note per pitch and every mixture with its ground
//! truth. The standard sequence plays C4, E4, G4, C4+E4, C4+G4, E4+G4 and
//! C4+E4+G4 for 2 s each.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{synth_mixture, AudioClip, GroundTruthRoll, NoteSpec, ScheduledNote, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const TRAINING_DURATION_S: f64 = 2.0;

/// A pitch of the fixture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchFixture {
    pub label: String,
    pub f0_hz: f64,
    #[serde(default = "default_harmonics")]
    pub n_harmonics: usize,
    /// Decay time of the fundamental; harmonic `j` decays in `decay_s / √j`.
    #[serde(default = "default_decay")]
    pub decay_s: f64,
    #[serde(default = "default_attack")]
    pub attack_s: f64,
}

fn default_harmonics() -> usize {
    10
}

fn default_decay() -> f64 {
    1.5
}

fn default_attack() -> f64 {
    0.005
}

impl PitchFixture {
    pub fn new(label: &str, f0_hz: f64) -> Self {
        Self {
            label: label.to_string(),
            f0_hz,
            n_harmonics: default_harmonics(),
            decay_s: default_decay(),
            attack_s: default_attack(),
        }
    }

    pub fn note(&self) -> NoteSpec {
        NoteSpec::plucked(self.label.clone(), self.f0_hz, self.n_harmonics, self.decay_s, self.attack_s)
    }
}

/// Pitches sounding together over `[onset_s, offset_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFixture {
    pub pitches: Vec<String>,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFixture {
    pub name: String,
    pub duration_s: f64,
    pub events: Vec<EventFixture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_training")]
    pub training_duration_s: f64,
    pub pitches: Vec<PitchFixture>,
    #[serde(default)]
    pub mixtures: Vec<MixtureFixture>,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn default_training() -> f64 {
    TRAINING_DURATION_S
}

/// Rendered fixture set.
#[derive(Debug, Clone)]
pub struct RenderedFixtures {
    pub training: Vec<AudioClip>,
    pub mixtures: Vec<(String, AudioClip, GroundTruthRoll)>,
}

impl FixtureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitches.is_empty() {
            return Err(Error::Config("fixture needs at least one pitch".into()));
        }
        for m in &self.mixtures {
            for e in &m.events {
                for p in &e.pitches {
                    if self.pitch(p).is_none() {
                        return Err(Error::Config(format!("mixture {} uses unknown pitch {p}", m.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn pitch(&self, label: &str) -> Option<&PitchFixture> {
        self.pitches.iter().find(|p| p.label == label)
    }

    pub fn labels(&self) -> Vec<String> {
        self.pitches.iter().map(|p| p.label.clone()).collect()
    }

    pub fn training_note(&self, label: &str) -> Result<AudioClip> {
        let p = self
            .pitch(label)
            .ok_or_else(|| Error::input(format!("unknown pitch {label}")))?;
        p.note().render(self.training_duration_s, self.sample_rate)
    }

    pub fn mixture(&self, name: &str) -> Result<(AudioClip, GroundTruthRoll)> {
        let m = self
            .mixtures
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::input(format!("unknown mixture {name}")))?;
        let mut notes = Vec::new();
        for e in &m.events {
            for p in &e.pitches {
                let pf = self.pitch(p).ok_or_else(|| Error::input(format!("unknown pitch {p}")))?;
                notes.push(ScheduledNote {
                    note: pf.note(),
                    onset_s: e.onset_s,
                    offset_s: e.offset_s,
                });
            }
        }
        let (mut clip, mut truth) = synth_mixture(&notes, self.sample_rate, Some(m.duration_s))?;
        clip.label = m.name.clone();
        // List every fixture pitch, sounding or not.
        for p in &self.pitches {
            if !truth.pitches.iter().any(|(l, _)| l == &p.label) {
                truth.pitches.push((p.label.clone(), p.f0_hz));
                truth.intervals.push(Vec::new());
            }
        }
        let order = self.labels();
        Ok((clip, truth.restrict(&order)?))
    }

    pub fn render(&self) -> Result<RenderedFixtures> {
        let training = self
            .pitches
            .iter()
            .map(|p| self.training_note(&p.label))
            .collect::<Result<Vec<_>>>()?;
        let mixtures = self
            .mixtures
            .iter()
            .map(|m| self.mixture(&m.name).map(|(c, t)| (m.name.clone(), c, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RenderedFixtures { training, mixtures })
    }
}

pub const SEQUENCE: &str = "sequence";
pub const TRIAD: &str = "triad";

/// C4, E4 and G4 with the 14 s event sequence and a 4 s triad mixture
/// (C4 | E4+G4 | C4+E4 | C4+E4+G4, one second each).
pub fn standard() -> FixtureSpec {
    let ev = |p: &[&str], a: f64, b: f64| EventFixture {
        pitches: p.iter().map(|s| s.to_string()).collect(),
        onset_s: a,
        offset_s: b,
    };
    let sequence: Vec<&[&str]> = vec![
        &["C4"],
        &["E4"],
        &["G4"],
        &["C4", "E4"],
        &["C4", "G4"],
        &["E4", "G4"],
        &["C4", "E4", "G4"],
    ];
    FixtureSpec {
        sample_rate: DEFAULT_SAMPLE_RATE,
        training_duration_s: TRAINING_DURATION_S,
        pitches: vec![
            PitchFixture::new("C4", 261.63),
            PitchFixture::new("E4", 329.63),
            PitchFixture::new("G4", 392.00),
        ],
        mixtures: vec![
            MixtureFixture {
                name: SEQUENCE.into(),
                duration_s: 14.0,
                events: sequence
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ev(p, 2.0 * i as f64, 2.0 * (i + 1) as f64))
                    .collect(),
            },
            MixtureFixture {
                name: TRIAD.into(),
                duration_s: 4.0,
                events: vec![
                    ev(&["C4"], 0.0, 1.0),
                    ev(&["E4", "G4"], 1.0, 2.0),
                    ev(&["C4", "E4"], 2.0, 3.0),
                    ev(&["C4", "E4", "G4"], 3.0, 4.0),
                ],
            },
        ],
    }
}

/// Segments of the sequence used for the two-pitch (C4/E4) evaluation.
pub const TWO_PITCH_SEGMENTS: [(f64, f64); 2] = [(0.0, 4.0), (6.0, 8.0)];
