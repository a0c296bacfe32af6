use serde::{Deserialize, Serialize};

use crate::score::NoteEvent;

/// Speed class of a nianzhi gesture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NianzhiCategory {
    Fast,
    Standard,
    Slow,
}

impl NianzhiCategory {
    pub const ALL: [NianzhiCategory; 3] = [
        NianzhiCategory::Fast,
        NianzhiCategory::Standard,
        NianzhiCategory::Slow,
    ];

    pub fn code(self) -> u8 {
        match self {
            NianzhiCategory::Fast => 0,
            NianzhiCategory::Standard => 1,
            NianzhiCategory::Slow => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// A run of repeated same-pitch plucks in a sorted note list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NianzhiSpan {
    pub start_index: usize,
    pub repetitions: usize,
    pub category: NianzhiCategory,
}

impl NianzhiSpan {
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start_index..self.start_index + self.repetitions
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices().contains(&index)
    }

    /// `[first onset, last end)` of the span in beats.
    pub fn beat_range(&self, notes: &[NoteEvent]) -> (f64, f64) {
        let run = &notes[self.indices()];
        let end = run.iter().map(NoteEvent::end).fold(f64::MIN, f64::max);
        (run[0].onset, end)
    }
}

/// Detection thresholds, all in beats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NianzhiDetectConfig {
    pub min_repetitions: usize,
    pub max_ioi: f64,
    pub fast_below: f64,
    pub slow_above: f64,
}

impl Default for NianzhiDetectConfig {
    fn default() -> Self {
        Self {
            min_repetitions: 3,
            max_ioi: 0.5,
            fast_below: 0.15,
            slow_above: 0.3,
        }
    }
}

impl NianzhiDetectConfig {
    fn linked(&self, a: &NoteEvent, b: &NoteEvent) -> bool {
        let ioi = b.onset - a.onset;
        a.pitch == b.pitch && ioi > 0.0 && ioi <= self.max_ioi + 1e-12 && b.velocity <= a.velocity
    }

    pub fn categorize(&self, mean_ioi: f64) -> NianzhiCategory {
        if mean_ioi < self.fast_below {
            NianzhiCategory::Fast
        } else if mean_ioi > self.slow_above {
            NianzhiCategory::Slow
        } else {
            NianzhiCategory::Standard
        }
    }
}

/// Finds maximal runs of at least `min_repetitions` consecutive notes that
/// share a pitch, follow each other within `max_ioi` beats and never rise in
/// velocity. `notes` must be sorted by onset.
pub fn detect_nianzhi(notes: &[NoteEvent], cfg: &NianzhiDetectConfig) -> Vec<NianzhiSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    while start < notes.len() {
        let mut end = start + 1;
        while end < notes.len() && cfg.linked(&notes[end - 1], &notes[end]) {
            end += 1;
        }
        let len = end - start;
        if len >= cfg.min_repetitions.max(2) {
            let mean_ioi = (notes[end - 1].onset - notes[start].onset) / (len - 1) as f64;
            spans.push(NianzhiSpan {
                start_index: start,
                repetitions: len,
                category: cfg.categorize(mean_ioi),
            });
        }
        start = end;
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Instrument;
    use proptest::prelude::*;

    fn n(pitch: u8, onset: f64, velocity: u8) -> NoteEvent {
        NoteEvent::new(pitch, onset, 0.1, velocity, Instrument::Pipa)
    }

    #[test]
    fn fast_decrescendo_run() {
        let notes: Vec<_> = [100, 90, 80, 70]
            .iter()
            .enumerate()
            .map(|(i, &v)| n(62, i as f64 * 0.1, v))
            .collect();
        let spans = detect_nianzhi(&notes, &NianzhiDetectConfig::default());
        assert_eq!(
            spans,
            vec![NianzhiSpan {
                start_index: 0,
                repetitions: 4,
                category: NianzhiCategory::Fast
            }]
        );
    }

    #[test]
    fn two_notes_are_not_a_span() {
        let notes = vec![n(62, 0.0, 100), n(62, 0.2, 90)];
        assert!(detect_nianzhi(&notes, &NianzhiDetectConfig::default()).is_empty());
    }

    #[test]
    fn rising_velocity_is_not_a_span() {
        let notes = vec![n(62, 0.0, 70), n(62, 0.2, 80), n(62, 0.4, 90)];
        assert!(detect_nianzhi(&notes, &NianzhiDetectConfig::default()).is_empty());
    }

    #[test]
    fn categories_follow_mean_ioi() {
        let cfg = NianzhiDetectConfig::default();
        let run = |ioi: f64| -> Vec<NoteEvent> {
            (0..3).map(|i| n(67, i as f64 * ioi, 90 - i as u8)).collect()
        };
        assert_eq!(detect_nianzhi(&run(0.2), &cfg)[0].category, NianzhiCategory::Standard);
        assert_eq!(detect_nianzhi(&run(0.4), &cfg)[0].category, NianzhiCategory::Slow);
        assert!(detect_nianzhi(&run(0.6), &cfg).is_empty());
    }

    /// Every interval that satisfies the run conditions, kept only when no
    /// other valid interval strictly contains it.
    fn exhaustive(notes: &[NoteEvent], cfg: &NianzhiDetectConfig) -> Vec<(usize, usize)> {
        let valid = |a: usize, b: usize| {
            b - a + 1 >= cfg.min_repetitions
                && (a..b).all(|i| {
                    let (x, y) = (&notes[i], &notes[i + 1]);
                    x.pitch == y.pitch
                        && y.onset - x.onset > 0.0
                        && y.onset - x.onset <= cfg.max_ioi
                        && y.velocity <= x.velocity
                })
        };
        let mut all = Vec::new();
        for a in 0..notes.len() {
            for b in a..notes.len() {
                if valid(a, b) {
                    all.push((a, b));
                }
            }
        }
        all.iter()
            .copied()
            .filter(|&(a, b)| !all.iter().any(|&(c, d)| c <= a && b <= d && (c, d) != (a, b)))
            .collect()
    }

    proptest! {
        #[test]
        fn spans_match_exhaustive_scan(
            steps in prop::collection::vec((0u8..3, 0u8..4, 60u8..110), 1..=12)
        ) {
            let mut onset = 0.0;
            let notes: Vec<NoteEvent> = steps
                .iter()
                .map(|&(p, gap, v)| {
                    // dyadic gaps keep onsets exact, so IOI == 0.5 is tested without rounding
                    onset += [0.125, 0.25, 0.5, 0.75][gap as usize];
                    n(60 + p, onset, v)
                })
                .collect();
            let cfg = NianzhiDetectConfig::default();
            let got: Vec<(usize, usize)> = detect_nianzhi(&notes, &cfg)
                .iter()
                .map(|s| (s.start_index, s.start_index + s.repetitions - 1))
                .collect();
            prop_assert_eq!(got, exhaustive(&notes, &cfg));
        }
    }
}
