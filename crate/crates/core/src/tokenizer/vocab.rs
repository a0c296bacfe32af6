use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mode::Mode;
use super::nianzhi::NianzhiCategory;

/// The GongQe pitch set (Helmholtz names, c¹ = MIDI 60).
pub const GONGQE_PITCHES: [(&str, u8); 23] = [
    ("d", 50),
    ("e", 52),
    ("f", 53),
    ("#f", 54),
    ("g", 55),
    ("a", 57),
    ("b", 59),
    ("c1", 60),
    ("#c1", 61),
    ("d1", 62),
    ("e1", 64),
    ("f1", 65),
    ("#f1", 66),
    ("g1", 67),
    ("a1", 69),
    ("bb1", 70),
    ("b1", 71),
    ("c2", 72),
    ("d2", 74),
    ("e2", 76),
    ("g2", 79),
    ("a2", 81),
    ("b2", 83),
];

pub const POSITIONS_PER_BAR: u8 = 16;
pub const POSITION_STEP: f64 = 0.25;
pub const VELOCITY_BINS: u8 = 16;
pub const VELOCITY_BIN_WIDTH: u8 = 8;
pub const DURATION_BINS: u8 = 32;
pub const DURATION_STEP: f64 = 0.125;
pub const MICROTIMING_STEP: f64 = 1.0 / 64.0;
/// Largest microtiming code magnitude: 1/8 beat in 1/64 steps.
pub const MICROTIMING_MAX: i8 = 8;

/// MIDI pitch for a GongQe symbol.
pub fn gongqe_to_midi(symbol: &str) -> Option<u8> {
    GONGQE_PITCHES
        .iter()
        .find(|(s, _)| *s == symbol)
        .map(|&(_, m)| m)
}

pub fn midi_to_gongqe(pitch: u8) -> Option<&'static str> {
    GONGQE_PITCHES
        .iter()
        .find(|(_, m)| *m == pitch)
        .map(|&(s, _)| s)
}

pub fn in_gongqe_set(pitch: u8) -> bool {
    GONGQE_PITCHES.iter().any(|&(_, m)| m == pitch)
}

/// One NanyinTok token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Bar,
    /// Sixteenth-note slot within the bar, 0..16.
    Position(u8),
    /// MIDI pitch from the GongQe set.
    Pitch(u8),
    /// Velocity bin, 0..16.
    Velocity(u8),
    /// Duration in eighths of a beat, 1..=32.
    Duration(u8),
    TechNianzhi(NianzhiCategory),
    /// Onset deviation from the position grid in 1/64 beats, -8..=8.
    Microtiming(i8),
    Unk,
}

impl Token {
    pub fn kind(&self) -> &'static str {
        match self {
            Token::Bar => "BAR",
            Token::Position(_) => "POSITION",
            Token::Pitch(_) => "PITCH",
            Token::Velocity(_) => "VELOCITY",
            Token::Duration(_) => "DURATION",
            Token::TechNianzhi(_) => "TECH_NIANZHI",
            Token::Microtiming(_) => "MICROTIMING",
            Token::Unk => "UNK",
        }
    }

    pub fn value(&self) -> i32 {
        match *self {
            Token::Bar | Token::Unk => 0,
            Token::Position(v) | Token::Pitch(v) | Token::Velocity(v) | Token::Duration(v) => v as i32,
            Token::TechNianzhi(c) => c.code() as i32,
            Token::Microtiming(m) => m as i32,
        }
    }

    /// Rebuilds a token from its kind name and value, checking ranges.
    pub fn from_parts(kind: &str, value: i32) -> Option<Self> {
        let byte = u8::try_from(value).ok();
        let token = match kind {
            "BAR" if value == 0 => Token::Bar,
            "UNK" if value == 0 => Token::Unk,
            "POSITION" => Token::Position(byte.filter(|&v| v < POSITIONS_PER_BAR)?),
            "PITCH" => Token::Pitch(byte.filter(|&v| in_gongqe_set(v))?),
            "VELOCITY" => Token::Velocity(byte.filter(|&v| v < VELOCITY_BINS)?),
            "DURATION" => Token::Duration(byte.filter(|&v| (1..=DURATION_BINS).contains(&v))?),
            "TECH_NIANZHI" => Token::TechNianzhi(NianzhiCategory::from_code(byte?)?),
            "MICROTIMING" if (-(MICROTIMING_MAX as i32)..=MICROTIMING_MAX as i32).contains(&value) => {
                Token::Microtiming(value as i8)
            }
            _ => return None,
        };
        Some(token)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.kind(), self.value())
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .trim()
            .split_once('=')
            .ok_or_else(|| format!("expected KIND=VALUE, got `{s}`"))?;
        let value: i32 = value
            .trim()
            .parse()
            .map_err(|_| format!("bad token value in `{s}`"))?;
        Token::from_parts(kind.trim(), value).ok_or_else(|| format!("invalid token `{s}`"))
    }
}

#[derive(Serialize, Deserialize)]
struct TokenRepr {
    kind: String,
    value: i32,
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TokenRepr {
            kind: self.kind().to_string(),
            value: self.value(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TokenRepr::deserialize(deserializer)?;
        Token::from_parts(&repr.kind, repr.value)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid token {}={}", repr.kind, repr.value)))
    }
}

/// Dense id assignment for every token the tokenizer can emit.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, usize>,
    modes: Vec<String>,
}

impl Vocabulary {
    /// Builds the fixed vocabulary. The pitch inventory is the GongQe set
    /// regardless of mode; `modes` only records which modes it serves.
    pub fn build(modes: &[Mode]) -> Self {
        let mut tokens = vec![Token::Bar];
        tokens.extend((0..POSITIONS_PER_BAR).map(Token::Position));
        tokens.extend(GONGQE_PITCHES.iter().map(|&(_, m)| Token::Pitch(m)));
        tokens.extend((0..VELOCITY_BINS).map(Token::Velocity));
        tokens.extend((1..=DURATION_BINS).map(Token::Duration));
        tokens.extend(NianzhiCategory::ALL.iter().map(|&c| Token::TechNianzhi(c)));
        tokens.extend((-MICROTIMING_MAX..=MICROTIMING_MAX).map(Token::Microtiming));
        tokens.push(Token::Unk);
        let ids = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        Self {
            tokens,
            ids,
            modes: modes.iter().map(|m| m.name.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &Token) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<Token> {
        self.tokens.get(id).copied()
    }

    pub fn pitch_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, Token::Pitch(_))).count()
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }
}

/// Number of pitch classes the skeletal-melody predictor chooses from: the
/// GongQe pitches plus UNK.
pub const PITCH_CLASSES: usize = GONGQE_PITCHES.len() + 1;
pub const UNK_CLASS: usize = GONGQE_PITCHES.len();

/// Predictor class for a pitch under `mode`; out-of-mode and out-of-set
/// pitches collapse to [`UNK_CLASS`].
pub fn pitch_class_index(pitch: u8, mode: &Mode) -> usize {
    if !mode.contains(pitch) {
        return UNK_CLASS;
    }
    GONGQE_PITCHES
        .iter()
        .position(|&(_, m)| m == pitch)
        .unwrap_or(UNK_CLASS)
}

/// MIDI pitch of a predictor class, `None` for UNK.
pub fn class_pitch(class: usize) -> Option<u8> {
    GONGQE_PITCHES.get(class).map(|&(_, m)| m)
}
