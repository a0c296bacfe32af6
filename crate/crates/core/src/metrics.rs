//! Evaluation: class-weighted F1 over pitch classes, its in-mode
//! restriction, and the ornament rationality score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ornament::{ornament_metrics, OrnamentConfig};
use crate::score::{NoteEvent, NoteRole, Score};
use crate::tokenizer::{class_pitch, Mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions for {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("no target lies inside the mode")]
    NoInModeTargets,
}

/// Class weights proportional to each class's frequency in `targets`.
pub fn frequency_weights(targets: &[usize]) -> BTreeMap<usize, f64> {
    let mut w = BTreeMap::new();
    for &t in targets {
        *w.entry(t).or_insert(0.0) += 1.0;
    }
    w
}

/// Per-class F1 averaged with normalized `weights`. Classes missing from
/// `weights` count with weight 0; an empty input or all-zero weights give 0.
pub fn weighted_f1(preds: &[usize], targets: &[usize], weights: &BTreeMap<usize, f64>) -> Result<f64, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    let total: f64 = weights.values().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    // Weighted sum divided once, so perfect predictions give exactly 1.
    let mut f1_sum = 0.0;
    for (&class, &w) in weights {
        if w <= 0.0 {
            continue;
        }
        let tp = preds.iter().zip(targets).filter(|(&p, &t)| p == class && t == class).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
        let actual = targets.iter().filter(|&&t| t == class).count() as f64;
        let f1 = if predicted + actual == 0.0 { 0.0 } else { 2.0 * tp / (predicted + actual) };
        f1_sum += w * f1;
    }
    Ok((f1_sum / total).clamp(0.0, 1.0))
}

/// [`weighted_f1`] over the positions whose target class is an in-mode
/// pitch; other positions are dropped from predictions and targets alike.
pub fn mode_aware_f1(
    preds: &[usize],
    targets: &[usize],
    weights: &BTreeMap<usize, f64>,
    mode: &Mode,
) -> Result<f64, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    let keep: Vec<usize> = (0..targets.len())
        .filter(|&i| class_pitch(targets[i]).is_some_and(|p| mode.contains(p)))
        .collect();
    if keep.is_empty() {
        return Err(MetricsError::NoInModeTargets);
    }
    let p: Vec<usize> = keep.iter().map(|&i| preds[i]).collect();
    let t: Vec<usize> = keep.iter().map(|&i| targets[i]).collect();
    weighted_f1(&p, &t, weights)
}

/// Component weights and tolerances of the ornament rationality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrsConfig {
    pub stylistic_weight: f64,
    pub structural_weight: f64,
    /// Coherent ornaments lie within this many semitones of the mean pitch
    /// around their host.
    pub coherence_semitones: f64,
    /// Main notes on each side of the host in that neighbourhood.
    pub neighborhood: usize,
    /// Grid spacing and tolerance for rhythmic alignment, in beats.
    pub grid: f64,
    pub grid_tolerance: f64,
    pub density_band: [f64; 2],
    pub evenness_target: f64,
    pub coverage_target: f64,
}

impl Default for OrsConfig {
    fn default() -> Self {
        let o = OrnamentConfig::default();
        Self {
            stylistic_weight: 0.5,
            structural_weight: 0.5,
            coherence_semitones: 4.0,
            neighborhood: 2,
            grid: 0.25,
            grid_tolerance: 0.05,
            density_band: o.density_range,
            evenness_target: o.evenness_target,
            coverage_target: o.coverage_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrsReport {
    pub ors: f64,
    pub stylistic: f64,
    pub structural: f64,
    pub coherence: f64,
    pub alignment: f64,
    pub density: f64,
    pub evenness: f64,
    pub coverage: f64,
}

/// `1 − min(1, |value − target| / target)`.
pub fn closeness(value: f64, target: f64) -> f64 {
    if target <= 0.0 {
        return if value == target { 1.0 } else { 0.0 };
    }
    1.0 - ((value - target).abs() / target).min(1.0)
}

/// Closeness to a band: 1 inside it, otherwise closeness to the nearer end.
pub fn band_closeness(value: f64, [lo, hi]: [f64; 2]) -> f64 {
    if (lo..=hi).contains(&value) {
        1.0
    } else if value < lo {
        closeness(value, lo)
    } else {
        closeness(value, hi)
    }
}

/// Host of each ornament: the main note with the nearest onset.
fn host_index(mains: &[&NoteEvent], ornament: &NoteEvent) -> usize {
    let mut best = 0;
    for (i, m) in mains.iter().enumerate() {
        if (m.onset - ornament.onset).abs() < (mains[best].onset - ornament.onset).abs() {
            best = i;
        }
    }
    best
}

/// Rationality of the ornaments on one line.
///
/// Stylistic part: mean of coherence (share of ornaments within 4 semitones
/// of the mean main pitch around the host) and alignment (share whose onset
/// lies within 0.05 beat of the quarter-beat grid).
/// Structural part: mean closeness of density to its band and of evenness
/// and coverage to their targets. Without ornaments every part is 0.
pub fn line_rationality(line: &[NoteEvent], cfg: &OrsConfig) -> OrsReport {
    let mains: Vec<&NoteEvent> = line.iter().filter(|n| n.role == NoteRole::Main).collect();
    let ornaments: Vec<&NoteEvent> = line.iter().filter(|n| n.role == NoteRole::Ornament).collect();
    if ornaments.is_empty() || mains.is_empty() {
        return OrsReport {
            ors: 0.0,
            stylistic: 0.0,
            structural: 0.0,
            coherence: 0.0,
            alignment: 0.0,
            density: 0.0,
            evenness: 0.0,
            coverage: 0.0,
        };
    }
    let mut coherent = 0usize;
    let mut aligned = 0usize;
    for o in &ornaments {
        let h = host_index(&mains, o);
        let lo = h.saturating_sub(cfg.neighborhood);
        let hi = (h + cfg.neighborhood + 1).min(mains.len());
        let mean = mains[lo..hi].iter().map(|n| n.pitch as f64).sum::<f64>() / (hi - lo) as f64;
        if (o.pitch as f64 - mean).abs() <= cfg.coherence_semitones {
            coherent += 1;
        }
        let off_grid = |beat: f64| {
            let r = beat / cfg.grid;
            (r - r.round()).abs() * cfg.grid
        };
        if off_grid(o.onset) <= cfg.grid_tolerance + 1e-9 {
            aligned += 1;
        }
    }
    let n = ornaments.len() as f64;
    let coherence = coherent as f64 / n;
    let alignment = aligned as f64 / n;
    let m = ornament_metrics(line);
    let density = band_closeness(m.density, cfg.density_band);
    let evenness = closeness(m.evenness, cfg.evenness_target);
    let coverage = closeness(m.coverage, cfg.coverage_target);
    let stylistic = (coherence + alignment) / 2.0;
    let structural = (density + evenness + coverage) / 3.0;
    let wsum = cfg.stylistic_weight + cfg.structural_weight;
    let ors = if wsum > 0.0 {
        (cfg.stylistic_weight * stylistic + cfg.structural_weight * structural) / wsum
    } else {
        0.0
    };
    OrsReport {
        ors: ors.clamp(0.0, 1.0),
        stylistic,
        structural,
        coherence,
        alignment,
        density,
        evenness,
        coverage,
    }
}

/// Mean rationality over the tracks of `score` that carry ornaments; the
/// zero report when none do.
pub fn ornament_rationality_score(score: &Score, cfg: &OrsConfig) -> OrsReport {
    let reports: Vec<OrsReport> = score
        .tracks
        .values()
        .filter(|t| t.iter().any(|n| n.role == NoteRole::Ornament))
        .map(|t| line_rationality(t, cfg))
        .collect();
    if reports.is_empty() {
        return line_rationality(&[], cfg);
    }
    let k = reports.len() as f64;
    let avg = |f: fn(&OrsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    OrsReport {
        ors: avg(|r| r.ors),
        stylistic: avg(|r| r.stylistic),
        structural: avg(|r| r.structural),
        coherence: avg(|r| r.coherence),
        alignment: avg(|r| r.alignment),
        density: avg(|r| r.density),
        evenness: avg(|r| r.evenness),
        coverage: avg(|r| r.coverage),
    }
}
