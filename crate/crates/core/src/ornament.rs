//! Rule-guided ornamentation of a melody line: interval tables, grace and
//! after-note geometry, the probabilistic placement pass with spacing and
//! density limits, special-note seeding and the ornament statistics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::OrnamentType;
use crate::score::{sort_notes, NoteEvent, NoteRole, BEATS_PER_BAR};

/// Width of the windows used by the coverage statistic, in beats.
pub const COVERAGE_WINDOW: f64 = 4.0;

const PC_CSHARP: u8 = 1;
const PC_D: u8 = 2;
const PC_FSHARP: u8 = 6;
const PC_A: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrnamentError {
    #[error("ornament interval {interval:+} from pitch {pitch} leaves the MIDI range")]
    PitchOverflow { pitch: u8, interval: i8 },
}

/// Factors and interval table of one ornament type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrnamentSpec {
    pub ornament_type: OrnamentType,
    pub duration_factor: f64,
    pub velocity_factor: f64,
    /// `(semitones above the host, probability)`, probabilities summing to 1.
    pub interval_table: Vec<(i8, f64)>,
}

impl OrnamentSpec {
    /// Default spec of `t`. With `lower_second` the +2 weight is shared
    /// equally with −2.
    pub fn for_type(t: OrnamentType, lower_second: bool) -> Self {
        let (duration_factor, velocity_factor) = match t {
            OrnamentType::Standard | OrnamentType::MelodicIntegration => (0.3, 0.9),
            OrnamentType::LightAppoggiatura => (0.2, 0.8),
        };
        let interval_table = if lower_second {
            vec![(2, 0.45), (-2, 0.45), (3, 0.1)]
        } else {
            vec![(2, 0.9), (3, 0.1)]
        };
        Self {
            ornament_type: t,
            duration_factor,
            velocity_factor,
            interval_table,
        }
    }

    fn interval_bounds(&self) -> (i8, i8) {
        let lo = self.interval_table.iter().map(|e| e.0).min().unwrap_or(0);
        let hi = self.interval_table.iter().map(|e| e.0).max().unwrap_or(0);
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrnamentConfig {
    pub ornament_probability: f64,
    /// Minimum distance between ornament onsets, in grid units.
    pub min_gap_units: u32,
    /// Grid unit in beats.
    pub grid_unit: f64,
    pub density_range: [f64; 2],
    pub coverage_target: f64,
    pub evenness_target: f64,
    /// Lead of a grace note before its host, in beats.
    pub grace_offset: f64,
    pub context_window: usize,
    /// Local IOI median below which ornaments become light appoggiaturas.
    pub light_ioi_median: f64,
    pub temperature: f64,
    /// Score of not seeding a special note at an eligible position.
    pub special_skip_score: f64,
    /// Also draw the lower major second.
    pub lower_second: bool,
}

impl Default for OrnamentConfig {
    fn default() -> Self {
        Self {
            ornament_probability: 0.4,
            min_gap_units: 3,
            grid_unit: 0.25,
            density_range: [0.2, 0.6],
            coverage_target: 0.7,
            evenness_target: 0.8,
            grace_offset: 0.015,
            context_window: 6,
            light_ioi_median: 0.25,
            temperature: 0.8,
            special_skip_score: 1.0,
            lower_second: false,
        }
    }
}

impl OrnamentConfig {
    pub fn min_gap_beats(&self) -> f64 {
        self.min_gap_units as f64 * self.grid_unit
    }
}

/// Ornament pitch for a uniform draw `u` in `[0, 1)`, walking the table's
/// cumulative probabilities.
pub fn select_ornament_pitch_with_draw(main_pitch: u8, spec: &OrnamentSpec, u: f64) -> Result<u8, OrnamentError> {
    let (lo, hi) = spec.interval_bounds();
    for interval in [lo, hi] {
        let p = main_pitch as i32 + interval as i32;
        if !(0..=127).contains(&p) {
            return Err(OrnamentError::PitchOverflow {
                pitch: main_pitch,
                interval,
            });
        }
    }
    let mut acc = 0.0;
    let mut chosen = spec.interval_table.last().map_or(0, |e| e.0);
    for &(interval, p) in &spec.interval_table {
        acc += p;
        if u < acc {
            chosen = interval;
            break;
        }
    }
    Ok((main_pitch as i32 + chosen as i32) as u8)
}

pub fn select_ornament_pitch<R: Rng + ?Sized>(main_pitch: u8, spec: &OrnamentSpec, rng: &mut R) -> Result<u8, OrnamentError> {
    select_ornament_pitch_with_draw(main_pitch, spec, rng.random::<f64>())
}

/// Where an ornament sits relative to its host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrnamentKind {
    /// Starts just before the host onset.
    Grace,
    /// Ends just after the host ends.
    AfterNote,
}

/// Standard and light ornaments are graces; melodic integration ornaments
/// lead out of the host into the next note.
pub fn placement_kind(t: OrnamentType) -> OrnamentKind {
    match t {
        OrnamentType::MelodicIntegration => OrnamentKind::AfterNote,
        _ => OrnamentKind::Grace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub note: NoteEvent,
    /// The onset would have been negative and was moved to 0.
    pub clamped: bool,
}

/// Builds the ornament note for `host`. Duration and velocity scale by the
/// spec factors; a grace starts `grace_offset` before the host and an
/// after-note ends `grace_offset` after it.
pub fn place_ornament(host: &NoteEvent, pitch: u8, kind: OrnamentKind, spec: &OrnamentSpec, cfg: &OrnamentConfig) -> Placement {
    let duration = host.duration * spec.duration_factor;
    let velocity = (host.velocity as f64 * spec.velocity_factor).round().clamp(1.0, 127.0) as u8;
    let onset = match kind {
        OrnamentKind::Grace => host.onset - cfg.grace_offset,
        OrnamentKind::AfterNote => host.end() + cfg.grace_offset - duration,
    };
    let clamped = onset < 0.0;
    if clamped {
        log::warn!("ornament onset {onset} before beat 0 clamped to 0");
    }
    Placement {
        note: NoteEvent {
            pitch,
            onset: onset.max(0.0),
            duration,
            velocity,
            instrument: host.instrument,
            role: NoteRole::Ornament,
        },
        clamped,
    }
}

/// An ornament together with the index of its host in the input line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedOrnament {
    pub host: usize,
    pub note: NoteEvent,
    pub ornament_type: OrnamentType,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Median gap between consecutive onsets in the `window` notes around `i`.
pub fn local_ioi_median(melody: &[NoteEvent], i: usize, window: usize) -> Option<f64> {
    let end = (i.saturating_sub(window / 2) + window).min(melody.len());
    let start = end.saturating_sub(window);
    median(melody[start..end].windows(2).map(|w| w[1].onset - w[0].onset).collect())
}

/// Main notes that can host an ornament: not the head of a nianzhi run.
fn hosts(melody: &[NoteEvent]) -> Vec<usize> {
    (0..melody.len())
        .filter(|&i| {
            let n = &melody[i];
            let heads_run = melody
                .get(i + 1)
                .is_some_and(|next| next.role == NoteRole::Nianzhi && next.pitch == n.pitch);
            n.role == NoteRole::Main && !heads_run
        })
        .collect()
}

/// Chooses ornaments for a sorted line. Each host is tried with probability
/// `ornament_probability`; ornament onsets stay at least `min_gap_beats`
/// apart; the count is capped at the top of `density_range` and, when the
/// first pass falls short of its bottom, topped up from untried hosts in
/// random order while spacing allows. After-notes that would start in a
/// later bar than their host are dropped.
pub fn choose_ornaments<R: Rng + ?Sized>(
    melody: &[NoteEvent],
    style: OrnamentType,
    cfg: &OrnamentConfig,
    rng: &mut R,
) -> Vec<PlacedOrnament> {
    let main_notes = melody.iter().filter(|n| n.role == NoteRole::Main).count();
    let [lo, hi] = cfg.density_range;
    let max_count = (hi * main_notes as f64 + 1e-9).floor() as usize;
    let min_count = ((lo * main_notes as f64 - 1e-9).ceil() as usize).min(max_count);
    let gap = cfg.min_gap_beats() - 1e-9;
    let mut placed: Vec<PlacedOrnament> = Vec::new();

    let try_place = |i: usize, placed: &mut Vec<PlacedOrnament>, rng: &mut R| {
        let dense = local_ioi_median(melody, i, cfg.context_window).is_some_and(|m| m < cfg.light_ioi_median);
        let t = if dense { OrnamentType::LightAppoggiatura } else { style };
        let spec = OrnamentSpec::for_type(t, cfg.lower_second);
        let Ok(pitch) = select_ornament_pitch(melody[i].pitch, &spec, rng) else {
            return;
        };
        let note = place_ornament(&melody[i], pitch, placement_kind(style), &spec, cfg).note;
        let bar = |beat: f64| (beat / BEATS_PER_BAR + 1e-9).floor();
        if note.onset > melody[i].onset && bar(note.onset) != bar(melody[i].onset) {
            return;
        }
        if placed.iter().all(|p| (p.note.onset - note.onset).abs() >= gap) {
            placed.push(PlacedOrnament {
                host: i,
                note,
                ornament_type: t,
            });
        }
    };

    let candidates = hosts(melody);
    let mut untried = Vec::new();
    for &i in &candidates {
        let draw = rng.random::<f64>();
        if placed.len() >= max_count {
            continue;
        }
        if draw < cfg.ornament_probability {
            try_place(i, &mut placed, rng);
        } else {
            untried.push(i);
        }
    }
    if placed.len() < min_count {
        untried.shuffle(rng);
        for i in untried {
            if placed.len() >= min_count {
                break;
            }
            try_place(i, &mut placed, rng);
        }
    }
    placed.sort_by(|a, b| a.note.onset.total_cmp(&b.note.onset).then(a.host.cmp(&b.host)));
    placed
}

/// The melody with its chosen ornaments merged in, sorted.
pub fn apply_ornamentation<R: Rng + ?Sized>(
    melody: &[NoteEvent],
    style: OrnamentType,
    cfg: &OrnamentConfig,
    rng: &mut R,
) -> Vec<NoteEvent> {
    let placed = choose_ornaments(melody, style, cfg, rng);
    let mut out: Vec<NoteEvent> = melody.to_vec();
    out.extend(placed.iter().map(|p| p.note));
    sort_notes(&mut out);
    out
}

/// Index drawn from `softmax(scores / temperature)`; the first maximum when
/// the temperature is (near) zero.
pub fn softmax_choice<R: Rng + ?Sized>(scores: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(!scores.is_empty(), "nothing to choose from");
    if temperature <= 1e-9 {
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return scores.iter().position(|&s| s == best).unwrap_or(0);
    }
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - top) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    scores.len() - 1
}

/// C♯ and F♯ in the octave of `melody[i]` with their suitability scores:
/// +1 when the preceding main note completes an A–C♯ or D–F♯ pair, +0.5
/// within 4 semitones of the mean of the last six main notes, −1 when the
/// pitch already sounded among the previous six notes (`recent`).
pub fn special_candidates(melody: &[NoteEvent], i: usize, recent: &[u8]) -> Vec<(u8, f64)> {
    let host = &melody[i];
    let base = host.pitch / 12 * 12;
    let mains: Vec<&NoteEvent> = melody[..=i].iter().filter(|n| n.role == NoteRole::Main).collect();
    let previous = mains.len().checked_sub(2).map(|k| mains[k].pitch % 12);
    let tail = &mains[mains.len().saturating_sub(6)..];
    let mean = tail.iter().map(|n| n.pitch as f64).sum::<f64>() / tail.len() as f64;
    [PC_CSHARP, PC_FSHARP]
        .into_iter()
        .filter_map(|pc| {
            let pitch = base.checked_add(pc).filter(|&p| p <= 127)?;
            let mut score = 0.0;
            if matches!((previous, pc), (Some(PC_A), PC_CSHARP) | (Some(PC_D), PC_FSHARP)) {
                score += 1.0;
            }
            if (pitch as f64 - mean).abs() <= 4.0 {
                score += 0.5;
            }
            if recent.contains(&pitch) {
                score -= 1.0;
            }
            Some((pitch, score))
        })
        .collect()
}

/// Special-note ornaments for a sorted line. A main note is eligible when
/// one of its candidates completes a pair (score at least 1); the choice
/// between skipping and each candidate is a temperature softmax. Emitted
/// notes share the host onset and use the standard factors.
pub fn special_note_seed<R: Rng + ?Sized>(melody: &[NoteEvent], cfg: &OrnamentConfig, rng: &mut R) -> Vec<NoteEvent> {
    let spec = OrnamentSpec::for_type(OrnamentType::Standard, false);
    let mut emitted: Vec<NoteEvent> = Vec::new();
    for i in 0..melody.len() {
        if melody[i].role != NoteRole::Main {
            continue;
        }
        let window_start = melody[i].onset;
        let mut recent: Vec<u8> = melody[i.saturating_sub(6)..i].iter().map(|n| n.pitch).collect();
        let earliest = melody[i.saturating_sub(6)].onset;
        recent.extend(emitted.iter().filter(|n| n.onset >= earliest && n.onset < window_start).map(|n| n.pitch));
        let candidates = special_candidates(melody, i, &recent);
        if !candidates.iter().any(|c| c.1 >= 1.0) {
            continue;
        }
        let mut scores = vec![cfg.special_skip_score];
        scores.extend(candidates.iter().map(|c| c.1));
        let pick = softmax_choice(&scores, cfg.temperature, rng);
        if pick == 0 {
            continue;
        }
        let host = &melody[i];
        let mut note = place_ornament(host, candidates[pick - 1].0, OrnamentKind::Grace, &spec, cfg).note;
        note.onset = host.onset;
        emitted.push(note);
    }
    emitted
}

/// Density, coverage and evenness of the ornaments in a tagged line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrnamentMetrics {
    /// Ornaments per main note.
    pub density: f64,
    /// Fraction of 4-beat windows holding at least one ornament onset.
    pub coverage: f64,
    /// `1 − normalized Gini` of the gaps between ornament onsets; 0 with
    /// fewer than two ornaments.
    pub evenness: f64,
}

/// Gini coefficient scaled so its maximum for `n` values is 1.
pub fn normalized_gini(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let mut diff = 0.0;
    for a in values {
        for b in values {
            diff += (a - b).abs();
        }
    }
    let gini = diff / (2.0 * (n * n) as f64 * mean);
    (gini * n as f64 / (n - 1) as f64).clamp(0.0, 1.0)
}

pub fn ornament_metrics(notes: &[NoteEvent]) -> OrnamentMetrics {
    let main = notes.iter().filter(|n| n.role == NoteRole::Main).count();
    let mut onsets: Vec<f64> = notes.iter().filter(|n| n.role == NoteRole::Ornament).map(|n| n.onset).collect();
    onsets.sort_by(f64::total_cmp);
    let density = if main == 0 { 0.0 } else { onsets.len() as f64 / main as f64 };
    let end = notes.iter().map(NoteEvent::end).fold(0.0, f64::max);
    let windows = ((end / COVERAGE_WINDOW).ceil() as usize).max(1);
    let mut hit = vec![false; windows];
    for &o in &onsets {
        hit[((o / COVERAGE_WINDOW).floor() as usize).min(windows - 1)] = true;
    }
    let coverage = hit.iter().filter(|&&h| h).count() as f64 / windows as f64;
    let evenness = if onsets.len() < 2 {
        0.0
    } else {
        let gaps: Vec<f64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
        1.0 - normalized_gini(&gaps)
    };
    OrnamentMetrics {
        density,
        coverage,
        evenness,
    }
}
