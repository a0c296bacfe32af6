//! NanyinTok: REMI-style tokens with GongQe pitches, modal masking,
//! nianzhi technique tokens and per-note microtiming.
//!
//! Stream grammar, checked on every encode:
//!
//! ```text
//! stream := ( BAR | note )*
//! note   := TECH_NIANZHI? POSITION (PITCH | UNK) VELOCITY DURATION MICROTIMING
//! ```
//!
//! At least one `BAR` precedes the first `POSITION`. Onsets are rebuilt as
//! `bar * 4 + position / 4 + microtiming / 64` beats.

mod mode;
mod nianzhi;
mod vocab;

pub use mode::{mode_contains, Mode, ModeError, Register};
pub use nianzhi::{detect_nianzhi, NianzhiCategory, NianzhiDetectConfig, NianzhiSpan};
pub use vocab::{
    class_pitch, gongqe_to_midi, in_gongqe_set, midi_to_gongqe, pitch_class_index, Token,
    Vocabulary, DURATION_BINS, DURATION_STEP, GONGQE_PITCHES, MICROTIMING_MAX, MICROTIMING_STEP,
    PITCH_CLASSES, POSITIONS_PER_BAR, POSITION_STEP, UNK_CLASS, VELOCITY_BINS, VELOCITY_BIN_WIDTH,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Instrument, NoteEvent, Score, BEATS_PER_BAR};

#[derive(Debug, Error, PartialEq)]
pub enum TokenError {
    #[error("score has no notes to encode")]
    EmptyScore,
    #[error("malformed token stream at token {index}: {reason}")]
    MalformedStream { index: usize, reason: String },
    #[error("token text line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// An ordered token stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One `KIND=VALUE` token per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 12);
        for t in &self.tokens {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the line format; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, TokenError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            tokens.push(line.parse().map_err(|reason| TokenError::Parse {
                line: i + 1,
                reason,
            })?);
        }
        Ok(Self { tokens })
    }

    /// JSON array of `{"kind": ..., "value": ...}` objects.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("token serialization is infallible")
    }

    pub fn from_json(json: &str) -> Result<Self, TokenError> {
        serde_json::from_str(json).map_err(|e| TokenError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        self.tokens
            .iter()
            .map(|t| vocab.id(t).expect("tokens are always in the vocabulary"))
            .collect()
    }
}

/// Encoder/decoder bound to one mode.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub mode: Mode,
    pub vocab: Vocabulary,
    pub nianzhi: NianzhiDetectConfig,
}

impl Tokenizer {
    pub fn new(mode: Mode, nianzhi: NianzhiDetectConfig) -> Self {
        let vocab = Vocabulary::build(std::slice::from_ref(&mode));
        Self { mode, vocab, nianzhi }
    }

    /// Encodes the pipa track (or the only non-empty track) of `score`.
    pub fn encode(&self, score: &Score) -> Result<TokenSeq, TokenError> {
        let notes = primary_track(score);
        self.encode_notes(notes)
    }

    /// Encodes a sorted note list.
    pub fn encode_notes(&self, notes: &[NoteEvent]) -> Result<TokenSeq, TokenError> {
        if notes.is_empty() {
            return Err(TokenError::EmptyScore);
        }
        let spans = detect_nianzhi(notes, &self.nianzhi);
        let mut span_iter = spans.iter().peekable();
        let mut tokens = Vec::with_capacity(notes.len() * 6 + 4);
        let mut current_bar: i64 = -1;
        for (i, note) in notes.iter().enumerate() {
            let q = quantize_onset(note.onset);
            while current_bar < q.bar as i64 {
                tokens.push(Token::Bar);
                current_bar += 1;
            }
            if let Some(span) = span_iter.next_if(|s| s.start_index == i) {
                tokens.push(Token::TechNianzhi(span.category));
            }
            tokens.push(Token::Position(q.position));
            tokens.push(self.pitch_token(note.pitch));
            tokens.push(Token::Velocity(velocity_bin(note.velocity)));
            tokens.push(Token::Duration(duration_bin(note.duration)));
            tokens.push(Token::Microtiming(q.microtiming));
        }
        let seq = TokenSeq { tokens };
        check_grammar(&seq)?;
        Ok(seq)
    }

    /// In-mode GongQe pitches become `PITCH`, everything else `UNK`.
    pub fn pitch_token(&self, pitch: u8) -> Token {
        if in_gongqe_set(pitch) && self.mode.contains(pitch) {
            Token::Pitch(pitch)
        } else {
            Token::Unk
        }
    }

    /// Rebuilds a pipa score. `UNK` decodes to the highest in-mode GongQe
    /// pitch below the previous decoded pitch (d¹ when there is none), or the
    /// lowest in-mode pitch when nothing lies below.
    pub fn decode(&self, seq: &TokenSeq) -> Result<Score, TokenError> {
        check_grammar(seq)?;
        let in_mode: Vec<u8> = GONGQE_PITCHES
            .iter()
            .map(|&(_, m)| m)
            .filter(|&m| self.mode.contains(m))
            .collect();
        let mut notes = Vec::new();
        let mut bar: i64 = -1;
        let mut previous: Option<u8> = None;
        let toks = &seq.tokens;
        let mut i = 0;
        while i < toks.len() {
            match toks[i] {
                Token::Bar => bar += 1,
                Token::TechNianzhi(_) => {}
                Token::Position(pos) => {
                    let pitch = match toks[i + 1] {
                        Token::Pitch(p) => p,
                        _ => {
                            let reference = previous.unwrap_or(62);
                            in_mode
                                .iter()
                                .rev()
                                .copied()
                                .find(|&p| p < reference)
                                .or_else(|| in_mode.first().copied())
                                .unwrap_or(reference)
                        }
                    };
                    let Token::Velocity(vb) = toks[i + 2] else { unreachable!() };
                    let Token::Duration(db) = toks[i + 3] else { unreachable!() };
                    let micro = match toks.get(i + 4) {
                        Some(Token::Microtiming(m)) => {
                            i += 1;
                            *m
                        }
                        _ => 0,
                    };
                    let onset = bar as f64 * BEATS_PER_BAR
                        + pos as f64 * POSITION_STEP
                        + micro as f64 * MICROTIMING_STEP;
                    notes.push(NoteEvent::new(
                        pitch,
                        onset.max(0.0),
                        db as f64 * DURATION_STEP,
                        bin_velocity(vb),
                        Instrument::Pipa,
                    ));
                    previous = Some(pitch);
                    i += 3;
                }
                _ => unreachable!("grammar checked"),
            }
            i += 1;
        }
        Ok(Score::single_track(Instrument::Pipa, notes))
    }
}

/// The track tokenized for training: pipa if present, else the first
/// non-empty track.
pub fn primary_track(score: &Score) -> &[NoteEvent] {
    let pipa = score.track(Instrument::Pipa);
    if !pipa.is_empty() {
        return pipa;
    }
    score
        .tracks
        .values()
        .find(|t| !t.is_empty())
        .map(Vec::as_slice)
        .unwrap_or(&[])
}

/// Validates the stream grammar without decoding.
pub fn check_grammar(seq: &TokenSeq) -> Result<(), TokenError> {
    let toks = &seq.tokens;
    let err = |index: usize, reason: &str| TokenError::MalformedStream {
        index,
        reason: reason.to_string(),
    };
    let mut seen_bar = false;
    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            Token::Bar => seen_bar = true,
            Token::TechNianzhi(_) => {
                if !matches!(toks.get(i + 1), Some(Token::Position(_))) {
                    return Err(err(i, "TECH_NIANZHI must precede a POSITION"));
                }
            }
            Token::Position(_) => {
                if !seen_bar {
                    return Err(err(i, "POSITION before any BAR"));
                }
                if !matches!(toks.get(i + 1), Some(Token::Pitch(_) | Token::Unk)) {
                    return Err(err(i, "POSITION not followed by PITCH"));
                }
                if !matches!(toks.get(i + 2), Some(Token::Velocity(_))) {
                    return Err(err(i + 1, "dangling PITCH: missing VELOCITY"));
                }
                if !matches!(toks.get(i + 3), Some(Token::Duration(_))) {
                    return Err(err(i + 1, "dangling PITCH: missing DURATION"));
                }
                i += 3;
                if matches!(toks.get(i + 1), Some(Token::Microtiming(_))) {
                    i += 1;
                }
            }
            Token::Pitch(_) | Token::Unk => return Err(err(i, "PITCH without POSITION")),
            Token::Velocity(_) => return Err(err(i, "VELOCITY without PITCH")),
            Token::Duration(_) => return Err(err(i, "DURATION without PITCH")),
            Token::Microtiming(_) => return Err(err(i, "MICROTIMING without note")),
        }
        i += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QuantizedOnset {
    bar: u64,
    position: u8,
    microtiming: i8,
}

fn quantize_onset(onset: f64) -> QuantizedOnset {
    let onset = onset.max(0.0);
    let grid = (onset / POSITION_STEP).round() as u64;
    let deviation = onset - grid as f64 * POSITION_STEP;
    let micro = (deviation / MICROTIMING_STEP).round() as i64;
    QuantizedOnset {
        bar: grid / POSITIONS_PER_BAR as u64,
        position: (grid % POSITIONS_PER_BAR as u64) as u8,
        microtiming: micro.clamp(-(MICROTIMING_MAX as i64), MICROTIMING_MAX as i64) as i8,
    }
}

pub fn velocity_bin(velocity: u8) -> u8 {
    (velocity.clamp(1, 127) - 1) / VELOCITY_BIN_WIDTH
}

pub fn bin_velocity(bin: u8) -> u8 {
    bin.min(VELOCITY_BINS - 1) * VELOCITY_BIN_WIDTH + 5
}

pub fn duration_bin(duration: f64) -> u8 {
    (duration / DURATION_STEP)
        .round()
        .clamp(1.0, DURATION_BINS as f64) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tk() -> Tokenizer {
        Tokenizer::new(Mode::wu_kong(), NianzhiDetectConfig::default())
    }

    fn pipa(notes: Vec<NoteEvent>) -> Score {
        Score::single_track(Instrument::Pipa, notes)
    }

    fn n(pitch: u8, onset: f64, duration: f64, velocity: u8) -> NoteEvent {
        NoteEvent::new(pitch, onset, duration, velocity, Instrument::Pipa)
    }

    #[test]
    fn single_note_layout() {
        let seq = tk().encode(&pipa(vec![n(62, 0.0, 1.0, 100)])).unwrap();
        let kinds: Vec<_> = seq.tokens.iter().map(Token::kind).collect();
        assert_eq!(kinds, ["BAR", "POSITION", "PITCH", "VELOCITY", "DURATION", "MICROTIMING"]);
    }

    #[test]
    fn out_of_mode_pitch_is_unk() {
        let seq = tk().encode(&pipa(vec![n(54, 0.0, 1.0, 100)])).unwrap();
        assert_eq!(seq.tokens[2], Token::Unk);
        // in the GongQe set but outside Wu-Kong
        let seq = tk().encode(&pipa(vec![n(65, 0.0, 1.0, 100)])).unwrap();
        assert_eq!(seq.tokens[2], Token::Unk);
    }

    #[test]
    fn tech_token_precedes_span() {
        let notes = vec![
            n(57, 0.0, 1.0, 90),
            n(62, 1.0, 0.1, 100),
            n(62, 1.2, 0.1, 90),
            n(62, 1.4, 0.1, 80),
        ];
        let seq = tk().encode(&pipa(notes.clone())).unwrap();
        let tech: Vec<usize> = seq
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t, Token::TechNianzhi(_)))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(tech.len(), 1);
        // re-scan: the next POSITION after the tech token belongs to note 1
        let positions_before = seq.tokens[..tech[0]]
            .iter()
            .filter(|t| matches!(t, Token::Position(_)))
            .count();
        let spans = detect_nianzhi(&notes, &NianzhiDetectConfig::default());
        assert_eq!(positions_before, spans[0].start_index);
        assert_eq!(seq.tokens[tech[0]], Token::TechNianzhi(NianzhiCategory::Standard));
    }

    #[test]
    fn empty_score_errors() {
        assert_eq!(tk().encode(&Score::new()), Err(TokenError::EmptyScore));
    }

    #[test]
    fn malformed_streams() {
        let t = tk();
        let dangling = TokenSeq {
            tokens: vec![Token::Bar, Token::Position(0), Token::Pitch(62)],
        };
        assert!(matches!(t.decode(&dangling), Err(TokenError::MalformedStream { .. })));
        let no_bar = TokenSeq {
            tokens: vec![Token::Position(0), Token::Pitch(62), Token::Velocity(3), Token::Duration(8)],
        };
        assert!(matches!(t.decode(&no_bar), Err(TokenError::MalformedStream { .. })));
        let bare = TokenSeq {
            tokens: vec![Token::Bar, Token::Pitch(62)],
        };
        assert!(matches!(t.decode(&bare), Err(TokenError::MalformedStream { .. })));
    }

    #[test]
    fn unk_decodes_below_previous_note() {
        let t = tk();
        let notes = vec![n(67, 0.0, 1.0, 90), n(54, 1.0, 1.0, 90)];
        let decoded = t.decode(&t.encode(&pipa(notes)).unwrap()).unwrap();
        let got: Vec<u8> = decoded.track(Instrument::Pipa).iter().map(|n| n.pitch).collect();
        // nearest in-mode GongQe pitch below g¹ (67) is e¹ (64)
        assert_eq!(got, vec![67, 64]);
    }

    #[test]
    fn microtiming_recovers_off_grid_onset() {
        let t = tk();
        let notes = vec![n(62, 4.0 + 0.25 + 3.0 / 64.0, 0.5, 64)];
        let decoded = t.decode(&t.encode(&pipa(notes.clone())).unwrap()).unwrap();
        let d = decoded.track(Instrument::Pipa)[0];
        assert!((d.onset - notes[0].onset).abs() < 1e-12);
    }

    #[test]
    fn empty_bars_are_emitted() {
        let seq = tk().encode(&pipa(vec![n(62, 9.0, 1.0, 90)])).unwrap();
        assert_eq!(seq.tokens.iter().filter(|t| **t == Token::Bar).count(), 3);
    }

    #[test]
    fn text_and_json_formats() {
        let t = tk();
        let seq = t
            .encode(&pipa(vec![n(62, 0.0, 1.0, 100), n(54, 1.0, 0.5, 70)]))
            .unwrap();
        assert_eq!(TokenSeq::from_text(&seq.to_text()).unwrap(), seq);
        assert_eq!(TokenSeq::from_json(&seq.to_json()).unwrap(), seq);
        assert!(seq.to_json().starts_with("[{\"kind\":\"BAR\",\"value\":0}"));
        assert!(TokenSeq::from_text("BAR=0\nPITCH=999\n").is_err());
    }

    #[test]
    fn bins_cover_ranges() {
        for v in 1..=127u8 {
            let back = bin_velocity(velocity_bin(v));
            assert!((back as i32 - v as i32).abs() <= 4, "{v} -> {back}");
        }
        assert_eq!(duration_bin(0.01), 1);
        assert_eq!(duration_bin(10.0), 32);
    }
}
