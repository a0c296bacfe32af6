//! Nianzhi placement: a recurrent position detector, its three-term loss,
//! pseudo-labels mined from existing runs, and the decaying expansion of a
//! single note into a run of repeated plucks.

mod detector;

pub use detector::{
    detector_loss, encode_notes, train_detector, DetectorConfig, DetectorOutputs, DetectorTrainConfig,
    NianzhiDetector, NOTE_FEATURES,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{NoteEvent, NoteRole};
use crate::tokenizer::{detect_nianzhi, NianzhiDetectConfig};

/// Minimum position probability for a nianzhi to be placed.
pub const POSITION_THRESHOLD: f64 = 0.7;
/// Pitch window in which nianzhi may be placed.
pub const NIANZHI_PITCH_RANGE: (u8, u8) = (55, 85);
pub const POSITION_WEIGHT: f64 = 0.35;
pub const SPEED_WEIGHT: f64 = 0.25;
pub const INTENSITY_WEIGHT: f64 = 0.15;
pub const DEFAULT_DECAY: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NianzhiError {
    #[error("invalid nianzhi prediction: {0}")]
    InvalidPrediction(String),
    #[error("detector: {0}")]
    Detector(String),
}

/// Placement decision for one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NianzhiPrediction {
    pub position_prob: f64,
    pub repetitions: usize,
    /// Relative loudness of each pluck, first pluck 1.
    pub intensity_curve: Vec<f64>,
    pub decay_rate: f64,
}

impl NianzhiPrediction {
    pub fn new(position_prob: f64, repetitions: usize, decay_rate: f64) -> Self {
        Self {
            position_prob,
            repetitions,
            intensity_curve: (0..repetitions).map(|i| decay_rate.powi(i as i32)).collect(),
            decay_rate,
        }
    }

    pub fn accepted(&self) -> bool {
        self.position_prob >= POSITION_THRESHOLD
    }

    fn check(&self) -> Result<(), NianzhiError> {
        if !self.accepted() {
            return Err(NianzhiError::InvalidPrediction(format!(
                "position probability {} below {POSITION_THRESHOLD}",
                self.position_prob
            )));
        }
        if !(3..=4).contains(&self.repetitions) {
            return Err(NianzhiError::InvalidPrediction(format!("{} repetitions", self.repetitions)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(NianzhiError::InvalidPrediction(format!("decay rate {}", self.decay_rate)));
        }
        if self.intensity_curve.len() != self.repetitions {
            return Err(NianzhiError::InvalidPrediction("intensity curve length".into()));
        }
        Ok(())
    }
}

/// Settings for turning detector output into placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NianzhiConfig {
    pub threshold: f64,
    pub decay_rate: f64,
    pub detect: NianzhiDetectConfig,
}

impl Default for NianzhiConfig {
    fn default() -> Self {
        Self {
            threshold: POSITION_THRESHOLD,
            decay_rate: DEFAULT_DECAY,
            detect: NianzhiDetectConfig::default(),
        }
    }
}

/// Longest note whose `k`-pluck expansion at decay `r` keeps every gap
/// within `max_ioi`, so the run is still recognised as nianzhi.
pub fn max_expandable_duration(k: usize, r: f64, max_ioi: f64) -> f64 {
    let total: f64 = (0..k).map(|j| r.powi(j as i32)).sum();
    let longest_gap = (0..k.saturating_sub(1)).map(|j| r.powi(j as i32)).fold(0.0, f64::max);
    if longest_gap == 0.0 {
        f64::INFINITY
    } else {
        max_ioi * total / longest_gap
    }
}

/// Splits `note` into `repetitions` same-pitch plucks. Pluck `i` gets
/// velocity `round(v0 * r^i)` (at least 1) and a share `r^i / sum r^j` of the
/// original duration; the plucks tile the original note exactly. The first
/// pluck keeps the note's role and the rest are tagged as nianzhi.
pub fn expand_nianzhi(note: &NoteEvent, pred: &NianzhiPrediction) -> Result<Vec<NoteEvent>, NianzhiError> {
    pred.check()?;
    let k = pred.repetitions;
    let r = pred.decay_rate;
    let total: f64 = (0..k).map(|j| r.powi(j as i32)).sum();
    let end = note.end();
    let mut onset = note.onset;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let share = r.powi(i as i32) / total;
        let duration = if i + 1 == k { end - onset } else { note.duration * share };
        let velocity = (note.velocity as f64 * r.powi(i as i32)).round().clamp(1.0, 127.0) as u8;
        out.push(NoteEvent {
            pitch: note.pitch,
            onset,
            duration,
            velocity,
            instrument: note.instrument,
            role: if i == 0 { note.role } else { NoteRole::Nianzhi },
        });
        onset += duration;
    }
    Ok(out)
}

/// Per-note training targets, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NianzhiTargets {
    /// 1 where a run starts.
    pub position: Vec<f64>,
    /// Speed class code / 2 (fast 0, standard 0.5, slow 1); 0 off-run.
    pub speed: Vec<f64>,
    /// Mean per-pluck velocity ratio of the run; 0 off-run.
    pub intensity: Vec<f64>,
}

impl NianzhiTargets {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }
}

/// Per-note head outputs of the detector, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NianzhiScores {
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub intensity: Vec<f64>,
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `0.35 * BCE(position) + 0.25 * MSE(speed) + 0.15 * MSE(intensity)`, each
/// term averaged over notes.
///
/// # Panics
/// If the six sequences differ in length.
pub fn loss_nianzhi(pred: &NianzhiScores, target: &NianzhiTargets) -> f64 {
    let n = target.len();
    for len in [pred.position.len(), pred.speed.len(), pred.intensity.len(), target.speed.len(), target.intensity.len()] {
        assert_eq!(len, n, "prediction and target sequences must align");
    }
    if n == 0 {
        return 0.0;
    }
    let position = pred.position.iter().zip(&target.position).map(|(&p, &y)| bce(p, y)).sum::<f64>() / n as f64;
    POSITION_WEIGHT * position
        + SPEED_WEIGHT * mse(&pred.speed, &target.speed)
        + INTENSITY_WEIGHT * mse(&pred.intensity, &target.intensity)
}

/// Collapses every detected run in a sorted line back into one note that
/// spans it and labels that note. Returns the collapsed line and targets.
pub fn pseudo_labels(notes: &[NoteEvent], cfg: &NianzhiDetectConfig) -> (Vec<NoteEvent>, NianzhiTargets) {
    let spans = detect_nianzhi(notes, cfg);
    let mut line = Vec::with_capacity(notes.len());
    let mut targets = NianzhiTargets::default();
    let mut i = 0;
    let mut spans = spans.iter().peekable();
    while i < notes.len() {
        match spans.peek() {
            Some(span) if span.start_index == i => {
                let run = &notes[span.indices()];
                let (start, end) = span.beat_range(notes);
                let mut head = run[0];
                head.duration = end - start;
                head.role = NoteRole::Main;
                line.push(head);
                let ratio = run[run.len() - 1].velocity as f64 / run[0].velocity as f64;
                targets.position.push(1.0);
                targets.speed.push(span.category.code() as f64 / 2.0);
                targets.intensity.push(ratio.powf(1.0 / (run.len() - 1) as f64).clamp(0.0, 1.0));
                i += span.repetitions;
                spans.next();
            }
            _ => {
                line.push(notes[i]);
                targets.position.push(0.0);
                targets.speed.push(0.0);
                targets.intensity.push(0.0);
                i += 1;
            }
        }
    }
    (line, targets)
}

/// Candidate notes: detector score at least `cfg.threshold` and pitch inside
/// [`NIANZHI_PITCH_RANGE`]. Returns `(index, score)` pairs in order.
pub fn detect_positions(notes: &[NoteEvent], detector: &NianzhiDetector, cfg: &NianzhiConfig) -> Vec<(usize, f64)> {
    if notes.is_empty() {
        return Vec::new();
    }
    let scores = detector.score(notes);
    candidates(notes, &scores.position, cfg.threshold)
}

fn candidates(notes: &[NoteEvent], position: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    let (lo, hi) = NIANZHI_PITCH_RANGE;
    notes
        .iter()
        .zip(position)
        .enumerate()
        .filter(|(_, (n, &p))| p >= threshold && (lo..=hi).contains(&n.pitch))
        .map(|(i, (_, &p))| (i, p))
        .collect()
}

/// Placements for a sorted line. A trained detector picks 4 plucks for fast
/// or standard runs and 3 for slow ones; an untrained one draws 3 or 4
/// uniformly. Candidates too long to expand into a detectable run are
/// skipped.
pub fn predict_nianzhi<R: Rng + ?Sized>(
    notes: &[NoteEvent],
    detector: &NianzhiDetector,
    cfg: &NianzhiConfig,
    rng: &mut R,
) -> Vec<(usize, NianzhiPrediction)> {
    if notes.is_empty() {
        return Vec::new();
    }
    let scores = detector.score(notes);
    candidates(notes, &scores.position, cfg.threshold)
        .into_iter()
        .filter_map(|(i, p)| {
            let reps = if detector.trained {
                if scores.speed[i] < 0.75 {
                    4
                } else {
                    3
                }
            } else {
                rng.random_range(3..=4)
            };
            let limit = max_expandable_duration(reps, cfg.decay_rate, cfg.detect.max_ioi);
            (notes[i].duration <= limit).then(|| (i, NianzhiPrediction::new(p, reps, cfg.decay_rate)))
        })
        .collect()
}

/// Replaces each predicted note of a sorted line by its expansion.
pub fn apply_nianzhi(notes: &[NoteEvent], predictions: &[(usize, NianzhiPrediction)]) -> Result<Vec<NoteEvent>, NianzhiError> {
    let mut out = Vec::with_capacity(notes.len() + predictions.len() * 3);
    let mut preds = predictions.iter().peekable();
    for (i, note) in notes.iter().enumerate() {
        match preds.peek() {
            Some((j, pred)) if *j == i => {
                out.extend(expand_nianzhi(note, pred)?);
                preds.next();
            }
            _ => out.push(*note),
        }
    }
    Ok(out)
}
