//! Seeded synthetic scores and graph datasets for tests, demos and the CLI.

use rand::Rng;

use crate::nianzhi::{expand_nianzhi, max_expandable_duration, NianzhiPrediction, DEFAULT_DECAY, NIANZHI_PITCH_RANGE};
use crate::graph::{convert, monophonic, GraphConfig, GraphError, HeteroGraph};
use crate::score::{Instrument, NoteEvent, Score};
use crate::tokenizer::{detect_nianzhi, Mode, NianzhiDetectConfig, GONGQE_PITCHES};

/// GongQe pitches that `mode` admits, ascending.
pub fn in_mode_pitches(mode: &Mode) -> Vec<u8> {
    GONGQE_PITCHES.iter().map(|&(_, p)| p).filter(|&p| mode.contains(p)).collect()
}

/// A monophonic pipa line of `n` in-mode notes on a quarter-beat grid,
/// moving mostly by step.
pub fn random_melody<R: Rng + ?Sized>(n: usize, mode: &Mode, rng: &mut R) -> Vec<NoteEvent> {
    let pitches = in_mode_pitches(mode);
    let mut at = rng.random_range(0..pitches.len());
    let mut onset = 0.0;
    let mut notes = Vec::with_capacity(n);
    for _ in 0..n {
        let ioi = [0.5, 1.0, 1.0, 1.5, 2.0][rng.random_range(0..5)];
        let duration = ioi * [0.5, 0.75, 1.0][rng.random_range(0..3)];
        let velocity = rng.random_range(50..=110);
        notes.push(NoteEvent::new(pitches[at], onset, duration, velocity, Instrument::Pipa));
        onset += ioi;
        let step: i32 = [-2, -1, -1, 1, 1, 2][rng.random_range(0..6)];
        at = (at as i32 + step).clamp(0, pitches.len() as i32 - 1) as usize;
    }
    notes
}

/// Like [`random_melody`] but each note in the nianzhi pitch window that
/// is long enough (at least 0.75 beat) and short enough to stay detectable
/// is expanded into a decaying run with probability `run_rate`.
pub fn melody_with_runs<R: Rng + ?Sized>(n: usize, run_rate: f64, mode: &Mode, rng: &mut R) -> Vec<NoteEvent> {
    let (lo, hi) = NIANZHI_PITCH_RANGE;
    let max_ioi = NianzhiDetectConfig::default().max_ioi;
    let mut out = Vec::new();
    for note in random_melody(n, mode, rng) {
        let reps = rng.random_range(3..=4);
        let eligible = (lo..=hi).contains(&note.pitch)
            && note.duration >= 0.75
            && note.duration <= max_expandable_duration(reps, DEFAULT_DECAY, max_ioi);
        if eligible && rng.random::<f64>() < run_rate {
            let pred = NianzhiPrediction::new(1.0, reps, DEFAULT_DECAY);
            out.extend(expand_nianzhi(&note, &pred).expect("prediction is accepted"));
        } else {
            out.push(note);
        }
    }
    out
}

pub fn random_score<R: Rng + ?Sized>(n: usize, mode: &Mode, rng: &mut R) -> Score {
    Score::single_track(Instrument::Pipa, random_melody(n, mode, rng))
}

/// Melody whose next pitch is a fixed function of the current pitch class:
/// it cycles upward through one in-mode pitch per class, starting at c¹.
pub fn cyclic_melody<R: Rng + ?Sized>(n: usize, mode: &Mode, rng: &mut R) -> Vec<NoteEvent> {
    let mut cycle: Vec<u8> = Vec::new();
    for p in in_mode_pitches(mode).into_iter().filter(|&p| p >= 60) {
        if cycle.iter().all(|&c| c % 12 != p % 12) {
            cycle.push(p);
        }
    }
    let mut at = rng.random_range(0..cycle.len());
    let mut onset = 0.0;
    (0..n)
        .map(|_| {
            let ioi = [0.5, 1.0, 1.5][rng.random_range(0..3)];
            let note = NoteEvent::new(cycle[at], onset, ioi * 0.75, rng.random_range(60..=100), Instrument::Pipa);
            onset += ioi;
            at = (at + 1) % cycle.len();
            note
        })
        .collect()
}

/// Full rule-injected graph for a note line.
pub fn graph_for<R: Rng + ?Sized>(
    notes: &[NoteEvent],
    mode: &Mode,
    cfg: &GraphConfig,
    rng: &mut R,
) -> Result<HeteroGraph, GraphError> {
    let line = monophonic(notes);
    let spans = detect_nianzhi(&line, &NianzhiDetectConfig::default());
    convert(&line, &spans, mode, cfg, rng)
}

/// `count` learnable graphs of `notes` cyclic-melody notes each.
pub fn toy_graphs<R: Rng + ?Sized>(count: usize, notes: usize, mode: &Mode, rng: &mut R) -> Vec<HeteroGraph> {
    (0..count)
        .map(|_| {
            let line = cyclic_melody(notes, mode, rng);
            graph_for(&line, mode, &GraphConfig::default(), rng).expect("synthetic lines are monophonic")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn melodies_are_in_mode_and_sorted() {
        let mode = Mode::wu_kong();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_melody(50, &mode, &mut rng);
        assert!(m.iter().all(|n| mode.contains(n.pitch)));
        assert!(m.windows(2).all(|w| w[1].onset > w[0].onset));
        let runs = melody_with_runs(40, 0.3, &mode, &mut rng);
        assert!(runs.windows(2).all(|w| w[1].onset > w[0].onset));
        assert!(!detect_nianzhi(&runs, &NianzhiDetectConfig::default()).is_empty());
    }

    #[test]
    fn toy_graphs_are_valid_and_seeded() {
        let mode = Mode::wu_kong();
        let a = toy_graphs(3, 10, &mode, &mut ChaCha8Rng::seed_from_u64(1));
        let b = toy_graphs(3, 10, &mode, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        for g in &a {
            g.validate().unwrap();
            assert_eq!(g.notes.len(), 10);
        }
    }
}
