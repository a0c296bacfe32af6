use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A pitch range with the pentatonic pitch classes allowed inside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub low: u8,
    pub high: u8,
    pub pitch_classes: BTreeSet<u8>,
}

impl Register {
    pub fn new(low: u8, high: u8, pitch_classes: impl IntoIterator<Item = u8>) -> Self {
        Self {
            low,
            high,
            pitch_classes: pitch_classes.into_iter().collect(),
        }
    }

    pub fn contains(&self, pitch: u8) -> bool {
        (self.low..=self.high).contains(&pitch) && self.pitch_classes.contains(&(pitch % 12))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModeError {
    #[error("mode `{0}` has no registers")]
    Empty(String),
    #[error("mode `{mode}` register {index} must have exactly 5 pitch classes in 0..12")]
    NotPentatonic { mode: String, index: usize },
    #[error("mode `{mode}` register {index} has low > high")]
    InvertedRange { mode: String, index: usize },
    #[error("mode `{mode}` registers are not ordered by range")]
    Unordered { mode: String },
}

/// A Nanyin mode: one or more pentatonic registers.
///
/// Registers are ordered by pitch. Adjacent registers may share a boundary
/// zone; a pitch in the shared zone is in the mode if either register
/// accepts it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub name: String,
    pub registers: Vec<Register>,
}

impl Mode {
    pub fn new(name: impl Into<String>, registers: Vec<Register>) -> Result<Self, ModeError> {
        let mode = Self {
            name: name.into(),
            registers,
        };
        mode.validate()?;
        Ok(mode)
    }

    /// Wu-Kong: C-pentatonic lower register d..a¹ and G-pentatonic upper
    /// register d¹..b².
    pub fn wu_kong() -> Self {
        Self {
            name: "wukong".into(),
            registers: vec![
                Register::new(50, 69, [0, 2, 4, 7, 9]),
                Register::new(62, 83, [7, 9, 11, 2, 4]),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), ModeError> {
        if self.registers.is_empty() {
            return Err(ModeError::Empty(self.name.clone()));
        }
        for (index, r) in self.registers.iter().enumerate() {
            if r.pitch_classes.len() != 5 || r.pitch_classes.iter().any(|&pc| pc >= 12) {
                return Err(ModeError::NotPentatonic {
                    mode: self.name.clone(),
                    index,
                });
            }
            if r.low > r.high {
                return Err(ModeError::InvertedRange {
                    mode: self.name.clone(),
                    index,
                });
            }
        }
        if self
            .registers
            .windows(2)
            .any(|w| w[0].low >= w[1].low || w[0].high >= w[1].high)
        {
            return Err(ModeError::Unordered {
                mode: self.name.clone(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, pitch: u8) -> bool {
        self.registers.iter().any(|r| r.contains(pitch))
    }
}

/// True iff some register of `mode` covers `pitch` and admits its class.
pub fn mode_contains(mode: &Mode, pitch: u8) -> bool {
    mode.contains(pitch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wu_kong_membership() {
        let m = Mode::wu_kong();
        assert!(m.validate().is_ok());
        assert!(mode_contains(&m, 50));
        assert!(!mode_contains(&m, 54));
        assert!(mode_contains(&m, 83));
        // f¹ (65) is outside both pentatonic sets
        assert!(!mode_contains(&m, 65));
        // b (59) is below the upper register and not C-pentatonic
        assert!(!mode_contains(&m, 59));
        // b¹ (71) comes from the upper register
        assert!(mode_contains(&m, 71));
        // c² (72) is above the lower register and not G-pentatonic
        assert!(!mode_contains(&m, 72));
    }

    #[test]
    fn membership_matches_register_table() {
        let m = Mode::wu_kong();
        for pitch in 0..=127u8 {
            let lower = (50..=69).contains(&pitch) && [0, 2, 4, 7, 9].contains(&(pitch % 12));
            let upper = (62..=83).contains(&pitch) && [7, 9, 11, 2, 4].contains(&(pitch % 12));
            assert_eq!(m.contains(pitch), lower || upper, "pitch {pitch}");
        }
    }

    #[test]
    fn rejects_non_pentatonic_register() {
        let err = Mode::new("bad", vec![Register::new(50, 70, [0, 2, 4, 7])]).unwrap_err();
        assert!(matches!(err, ModeError::NotPentatonic { .. }));
        assert!(matches!(Mode::new("e", vec![]), Err(ModeError::Empty(_))));
        let unordered = Mode::new(
            "u",
            vec![
                Register::new(62, 83, [7, 9, 11, 2, 4]),
                Register::new(50, 69, [0, 2, 4, 7, 9]),
            ],
        );
        assert!(matches!(unordered, Err(ModeError::Unordered { .. })));
    }
}
