//! Performed-note score model shared by every stage of the pipeline.
//!
//! Time is measured in beats (quarter note = 1.0). Onsets and durations are
//! kept as `f64` and quantized to ticks only when written to a MIDI file.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Default tempo when a file carries no tempo meta event (120 bpm).
pub const DEFAULT_US_PER_QUARTER: u32 = 500_000;

/// Default tick resolution used when writing.
pub const DEFAULT_TICKS_PER_QUARTER: u16 = 480;

/// Beats per bar. Nanyin material is handled on a 4/4 grid throughout.
pub const BEATS_PER_BAR: f64 = 4.0;

/// The four ensemble instruments, in generation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Pipa,
    Sanxian,
    Dongxiao,
    Erxian,
}

impl Instrument {
    pub const ALL: [Instrument; 4] = [
        Instrument::Pipa,
        Instrument::Sanxian,
        Instrument::Dongxiao,
        Instrument::Erxian,
    ];

    pub fn index(self) -> u8 {
        match self {
            Instrument::Pipa => 0,
            Instrument::Sanxian => 1,
            Instrument::Dongxiao => 2,
            Instrument::Erxian => 3,
        }
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Pipa => "Pipa",
            Instrument::Sanxian => "Sanxian",
            Instrument::Dongxiao => "Dongxiao",
            Instrument::Erxian => "Erxian",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|i| i.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown instrument `{s}`"))
    }
}

/// What a note contributes to the texture.
///
/// `Main` notes carry the (possibly varied) melody, `Ornament` notes are
/// rule-generated decorations and `Nianzhi` notes are the repeated plucks
/// that follow the head note of an expanded nianzhi gesture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum NoteRole {
    #[default]
    Main,
    Ornament,
    Nianzhi,
}

impl NoteRole {
    pub fn index(self) -> u8 {
        match self {
            NoteRole::Main => 0,
            NoteRole::Ornament => 1,
            NoteRole::Nianzhi => 2,
        }
    }

    pub fn from_index(index: u8) -> Option<Self> {
        match index {
            0 => Some(NoteRole::Main),
            1 => Some(NoteRole::Ornament),
            2 => Some(NoteRole::Nianzhi),
            _ => None,
        }
    }
}

/// One performed note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
    pub velocity: u8,
    pub instrument: Instrument,
    #[serde(default)]
    pub role: NoteRole,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: f64, duration: f64, velocity: u8, instrument: Instrument) -> Self {
        Self {
            pitch,
            onset,
            duration,
            velocity,
            instrument,
            role: NoteRole::Main,
        }
    }

    pub fn with_role(mut self, role: NoteRole) -> Self {
        self.role = role;
        self
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    /// Checks the field ranges every stage relies on.
    pub fn is_valid(&self) -> bool {
        self.pitch <= 127
            && (1..=127).contains(&self.velocity)
            && self.duration.is_finite()
            && self.duration > 0.0
            && self.onset.is_finite()
            && self.onset >= 0.0
    }
}

/// Orders notes by onset, then pitch.
pub fn note_order(a: &NoteEvent, b: &NoteEvent) -> std::cmp::Ordering {
    a.onset
        .total_cmp(&b.onset)
        .then(a.pitch.cmp(&b.pitch))
        .then(a.role.cmp(&b.role))
        .then(a.duration.total_cmp(&b.duration))
        .then(a.velocity.cmp(&b.velocity))
}

pub fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(note_order);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoChange {
    pub onset: f64,
    pub us_per_quarter: u32,
}

/// A multi-track score keyed by instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tracks: BTreeMap<Instrument, Vec<NoteEvent>>,
    pub ticks_per_quarter: u16,
    pub tempo_map: Vec<TempoChange>,
}

impl Default for Score {
    fn default() -> Self {
        Self::new()
    }
}

impl Score {
    pub fn new() -> Self {
        Self {
            tracks: BTreeMap::new(),
            ticks_per_quarter: DEFAULT_TICKS_PER_QUARTER,
            tempo_map: vec![TempoChange {
                onset: 0.0,
                us_per_quarter: DEFAULT_US_PER_QUARTER,
            }],
        }
    }

    /// Builds a single-instrument score; notes are sorted.
    pub fn single_track(instrument: Instrument, mut notes: Vec<NoteEvent>) -> Self {
        for n in &mut notes {
            n.instrument = instrument;
        }
        sort_notes(&mut notes);
        let mut score = Self::new();
        score.tracks.insert(instrument, notes);
        score
    }

    pub fn with_tempo(mut self, us_per_quarter: u32) -> Self {
        self.tempo_map = vec![TempoChange {
            onset: 0.0,
            us_per_quarter,
        }];
        self
    }

    pub fn track(&self, instrument: Instrument) -> &[NoteEvent] {
        self.tracks.get(&instrument).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn note_count(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn all_notes(&self) -> impl Iterator<Item = &NoteEvent> {
        self.tracks.values().flatten()
    }

    /// Latest note end in beats, or 0 for an empty score.
    pub fn end_beat(&self) -> f64 {
        self.all_notes().map(NoteEvent::end).fold(0.0, f64::max)
    }

    /// Restores the sort invariants after in-place edits.
    pub fn normalize(&mut self) {
        for notes in self.tracks.values_mut() {
            sort_notes(notes);
        }
        self.tempo_map.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        if self.tempo_map.first().is_none_or(|t| t.onset > 0.0) {
            self.tempo_map.insert(
                0,
                TempoChange {
                    onset: 0.0,
                    us_per_quarter: DEFAULT_US_PER_QUARTER,
                },
            );
        }
    }

    /// Checks the documented invariants: valid notes, sorted tracks, and a
    /// tempo map starting at beat 0.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.ticks_per_quarter == 0 {
            return Err("ticks_per_quarter must be positive".into());
        }
        for (inst, notes) in &self.tracks {
            for (i, n) in notes.iter().enumerate() {
                if !n.is_valid() {
                    return Err(format!("{inst} note {i} is invalid: {n:?}"));
                }
                if n.instrument != *inst {
                    return Err(format!("{inst} note {i} tagged {}", n.instrument));
                }
            }
            if notes
                .windows(2)
                .any(|w| (w[0].onset, w[0].pitch) > (w[1].onset, w[1].pitch))
            {
                return Err(format!("{inst} track not sorted"));
            }
        }
        match self.tempo_map.first() {
            Some(t) if t.onset == 0.0 => {}
            _ => return Err("tempo map must start at beat 0".into()),
        }
        if self.tempo_map.windows(2).any(|w| w[0].onset > w[1].onset) {
            return Err("tempo map not sorted".into());
        }
        Ok(())
    }

    /// Wall-clock seconds elapsed at `beat`, integrating the tempo map.
    pub fn seconds_at(&self, beat: f64) -> f64 {
        let mut seconds = 0.0;
        let mut last_beat = 0.0;
        let mut tempo = DEFAULT_US_PER_QUARTER;
        for change in &self.tempo_map {
            if change.onset >= beat {
                break;
            }
            seconds += (change.onset - last_beat) * tempo as f64 / 1e6;
            last_beat = change.onset;
            tempo = change.us_per_quarter;
        }
        seconds + (beat - last_beat) * tempo as f64 / 1e6
    }

    pub fn duration_seconds(&self) -> f64 {
        self.seconds_at(self.end_beat())
    }
}

/// Number of bars touched by the onsets of `notes` (bar of the last onset,
/// plus one). Empty input has zero bars.
pub fn bar_count(notes: &[NoteEvent]) -> usize {
    notes
        .iter()
        .map(|n| (n.onset / BEATS_PER_BAR + 1e-9).floor() as usize + 1)
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_follow_tempo_changes() {
        let mut s = Score::new();
        s.tempo_map.push(TempoChange {
            onset: 8.0,
            us_per_quarter: 1_000_000,
        });
        assert!((s.seconds_at(8.0) - 4.0).abs() < 1e-12);
        assert!((s.seconds_at(10.0) - 6.0).abs() < 1e-12);
        assert!((s.seconds_at(2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_prepends_default_tempo() {
        let mut s = Score::new();
        s.tempo_map = vec![TempoChange {
            onset: 4.0,
            us_per_quarter: 600_000,
        }];
        s.normalize();
        assert_eq!(s.tempo_map[0].onset, 0.0);
        assert_eq!(s.tempo_map.len(), 2);
        assert!(s.check_invariants().is_ok());
    }

    #[test]
    fn bar_count_uses_last_onset() {
        let n = |onset| NoteEvent::new(60, onset, 1.0, 80, Instrument::Pipa);
        assert_eq!(bar_count(&[]), 0);
        assert_eq!(bar_count(&[n(0.0), n(3.9)]), 1);
        assert_eq!(bar_count(&[n(0.0), n(4.0)]), 2);
    }

    #[test]
    fn instrument_names_parse() {
        for i in Instrument::ALL {
            assert_eq!(i.name().to_lowercase().parse::<Instrument>().unwrap(), i);
            assert_eq!(Instrument::from_index(i.index()), Some(i));
        }
    }
}
