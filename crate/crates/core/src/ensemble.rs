//! Four-instrument heterophonic decoding of a pipa skeleton.
//!
//! Instruments are produced in a fixed order. Each one starts from the
//! skeleton; non-pipa parts let the pitch model vary individual notes with
//! the already generated parts attached to the graph as extra chains. The
//! pipa part receives nianzhi runs, every part receives ornaments at a
//! sampled density, and the instrument transform is applied last. A
//! refinement pass then regenerates every part against the full ensemble.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{predict_probs, GnnError, ModelParams, PreparedGraph};
use crate::graph::{add_conditioning_chain, convert, monophonic, GraphConfig, GraphError, OrnamentType};
use crate::nianzhi::{apply_nianzhi, predict_nianzhi, NianzhiConfig, NianzhiDetector, NianzhiError};
use crate::ornament::{choose_ornaments, ornament_metrics, special_note_seed, OrnamentConfig, OrnamentMetrics};
use crate::score::{sort_notes, Instrument, NoteEvent, NoteRole, Score, BEATS_PER_BAR};
use crate::synth::in_mode_pitches;
use crate::tokenizer::{detect_nianzhi, pitch_class_index, Mode};

/// Generation order; each part conditions the ones after it.
pub const ENSEMBLE_ORDER: [Instrument; 4] = [
    Instrument::Pipa,
    Instrument::Sanxian,
    Instrument::Dongxiao,
    Instrument::Erxian,
];

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("skeleton must hold exactly one non-empty track, found {0}")]
    NotSingleTrack(usize),
    #[error("{instrument} transform moves pitch {pitch} out of the MIDI range")]
    PitchOutOfRange { instrument: Instrument, pitch: u8 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Nianzhi(#[from] NianzhiError),
    #[error("invalid ensemble config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub density_mean: f64,
    pub density_sd: f64,
    pub refinement_passes: usize,
    /// Chance that a non-pipa note is re-chosen by the pitch model.
    pub variation_rate: f64,
    /// Largest distance in semitones of a varied pitch from the skeleton.
    pub variation_span: u8,
    pub style: OrnamentType,
    /// Seed C♯/F♯ special notes on the pipa part.
    pub special_notes: bool,
    pub ornament: OrnamentConfig,
    pub nianzhi: NianzhiConfig,
    pub graph: GraphConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            density_mean: 0.6,
            density_sd: 0.1,
            refinement_passes: 1,
            variation_rate: 0.25,
            variation_span: 3,
            style: OrnamentType::Standard,
            special_notes: false,
            ornament: OrnamentConfig::default(),
            nianzhi: NianzhiConfig::default(),
            graph: GraphConfig::default(),
        }
    }
}

/// Draws an ornament density from `Normal(mean, sd)`. Returns the raw draw
/// and the draw clamped to the ornament density band.
pub fn sample_density<R: Rng + ?Sized>(cfg: &EnsembleConfig, rng: &mut R) -> Result<(f64, f64), EnsembleError> {
    let normal = Normal::new(cfg.density_mean, cfg.density_sd).map_err(|e| EnsembleError::Config(e.to_string()))?;
    let raw = normal.sample(rng);
    let [lo, hi] = cfg.ornament.density_range;
    Ok((raw, raw.clamp(lo, hi)))
}

/// Instrument idiom: sanxian notes are 20% shorter, dongxiao plays an
/// octave lower, erxian an octave higher, pipa unchanged. Notes are
/// retagged with `instrument`.
pub fn instrument_transform(melody: &[NoteEvent], instrument: Instrument) -> Result<Vec<NoteEvent>, EnsembleError> {
    melody
        .iter()
        .map(|n| {
            let mut out = *n;
            out.instrument = instrument;
            match instrument {
                Instrument::Pipa => {}
                Instrument::Sanxian => out.duration *= 0.8,
                Instrument::Dongxiao | Instrument::Erxian => {
                    let shift: i32 = if instrument == Instrument::Dongxiao { -12 } else { 12 };
                    let p = n.pitch as i32 + shift;
                    if !(0..=127).contains(&p) {
                        return Err(EnsembleError::PitchOutOfRange {
                            instrument,
                            pitch: n.pitch,
                        });
                    }
                    out.pitch = p as u8;
                }
            }
            Ok(out)
        })
        .collect()
}

/// What happened to one part in its latest generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub instrument: Instrument,
    pub density_draw: f64,
    pub density_cap: f64,
    pub varied_notes: usize,
    pub nianzhi_runs: usize,
    pub ornaments: usize,
    pub special_notes: usize,
    pub metrics: OrnamentMetrics,
    /// The part before its instrument transform.
    pub pre_transform: Vec<NoteEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub skeleton_notes: usize,
    pub passes: usize,
    pub tracks: Vec<TrackReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub score: Score,
    pub report: EnsembleReport,
}

/// Shared inputs of every part.
struct Context<'a> {
    skeleton: &'a [NoteEvent],
    model: &'a ModelParams,
    detector: &'a NianzhiDetector,
    mode: &'a Mode,
    cfg: &'a EnsembleConfig,
}

fn bar_of(beat: f64) -> f64 {
    (beat / BEATS_PER_BAR + 1e-9).floor()
}

/// Re-chooses some skeleton pitches from the model's next-note
/// distribution, restricted to in-mode pitches near the skeleton pitch.
fn vary<R: Rng + ?Sized>(
    ctx: &Context,
    line: &[NoteEvent],
    others: &[&[NoteEvent]],
    rng: &mut R,
) -> Result<(Vec<NoteEvent>, usize), EnsembleError> {
    let spans = detect_nianzhi(line, &ctx.cfg.nianzhi.detect);
    let mut g = convert(line, &spans, ctx.mode, &ctx.cfg.graph, rng)?;
    let mut chain = 1u8;
    for part in others {
        let main: Vec<NoteEvent> = part.iter().filter(|n| n.role == NoteRole::Main).copied().collect();
        let main = monophonic(&main);
        if !main.is_empty() {
            g = add_conditioning_chain(&g, &main, chain)?;
            chain += 1;
        }
    }
    let probs = predict_probs(ctx.model, &PreparedGraph::new(&g, ctx.mode)?)?;
    let palette = in_mode_pitches(ctx.mode);
    let mut out = line.to_vec();
    let mut varied = 0;
    for j in 1..out.len() {
        if rng.random::<f64>() >= ctx.cfg.variation_rate {
            continue;
        }
        let home = line[j].pitch;
        let options: Vec<(u8, f64)> = palette
            .iter()
            .filter(|&&p| p.abs_diff(home) <= ctx.cfg.variation_span)
            .map(|&p| (p, probs.get(j - 1, pitch_class_index(p, ctx.mode))))
            .collect();
        let total: f64 = options.iter().map(|o| o.1).sum();
        if options.is_empty() || !(total > 0.0) {
            continue;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = options[options.len() - 1].0;
        for &(p, w) in &options {
            if u < w {
                pick = p;
                break;
            }
            u -= w;
        }
        if pick != home {
            out[j].pitch = pick;
            varied += 1;
        }
    }
    Ok((out, varied))
}

fn generate_part<R: Rng + ?Sized>(
    ctx: &Context,
    instrument: Instrument,
    others: &[&[NoteEvent]],
    rng: &mut R,
) -> Result<(Vec<NoteEvent>, TrackReport), EnsembleError> {
    let cfg = ctx.cfg;
    let mut line: Vec<NoteEvent> = ctx
        .skeleton
        .iter()
        .map(|n| NoteEvent {
            instrument,
            role: NoteRole::Main,
            ..*n
        })
        .collect();
    let mut varied = 0;
    if instrument != Instrument::Pipa && !line.is_empty() {
        let (v, count) = vary(ctx, &line, others, rng)?;
        line = v;
        varied = count;
    }
    let (density_draw, density_cap) = sample_density(cfg, rng)?;
    let mut nianzhi_runs = 0;
    if instrument == Instrument::Pipa {
        let predictions: Vec<_> = predict_nianzhi(&line, ctx.detector, &cfg.nianzhi, rng)
            .into_iter()
            .filter(|(i, _)| bar_of(line[*i].end() - 1e-9) == bar_of(line[*i].onset))
            .collect();
        nianzhi_runs = predictions.len();
        line = apply_nianzhi(&line, &predictions)?;
    }
    let mut ocfg = cfg.ornament.clone();
    ocfg.density_range = [ocfg.density_range[0].min(density_cap), density_cap];
    let ornaments = choose_ornaments(&line, cfg.style, &ocfg, rng);
    let specials = if instrument == Instrument::Pipa && cfg.special_notes {
        special_note_seed(&line, &ocfg, rng)
    } else {
        Vec::new()
    };
    let mut pre = line;
    pre.extend(ornaments.iter().map(|p| p.note));
    pre.extend(specials.iter().copied());
    sort_notes(&mut pre);
    let part = instrument_transform(&pre, instrument)?;
    let report = TrackReport {
        instrument,
        density_draw,
        density_cap,
        varied_notes: varied,
        nianzhi_runs,
        ornaments: ornaments.len(),
        special_notes: specials.len(),
        metrics: ornament_metrics(&pre),
        pre_transform: pre,
    };
    Ok((part, report))
}

/// Decodes the ensemble for a one-track skeleton. The result is a pure
/// function of the inputs and the RNG state.
pub fn generate_ensemble<R: Rng + ?Sized>(
    skeleton: &Score,
    model: &ModelParams,
    detector: &NianzhiDetector,
    mode: &Mode,
    cfg: &EnsembleConfig,
    rng: &mut R,
) -> Result<Ensemble, EnsembleError> {
    let filled: Vec<&Vec<NoteEvent>> = skeleton.tracks.values().filter(|t| !t.is_empty()).collect();
    if filled.len() != 1 {
        return Err(EnsembleError::NotSingleTrack(filled.len()));
    }
    let line: Vec<NoteEvent> = monophonic(filled[0])
        .into_iter()
        .filter(|n| n.role == NoteRole::Main)
        .map(|n| NoteEvent {
            instrument: Instrument::Pipa,
            ..n
        })
        .collect();
    let ctx = Context {
        skeleton: &line,
        model,
        detector,
        mode,
        cfg,
    };
    let mut parts: Vec<Vec<NoteEvent>> = Vec::with_capacity(4);
    let mut reports: Vec<TrackReport> = Vec::with_capacity(4);
    for &inst in &ENSEMBLE_ORDER {
        let others: Vec<&[NoteEvent]> = parts.iter().map(Vec::as_slice).collect();
        let (part, report) = generate_part(&ctx, inst, &others, rng)?;
        parts.push(part);
        reports.push(report);
    }
    for _ in 0..cfg.refinement_passes {
        for k in 0..ENSEMBLE_ORDER.len() {
            let others: Vec<&[NoteEvent]> = (0..parts.len()).filter(|&j| j != k).map(|j| parts[j].as_slice()).collect();
            let (part, report) = generate_part(&ctx, ENSEMBLE_ORDER[k], &others, rng)?;
            parts[k] = part;
            reports[k] = report;
        }
    }
    let mut score = Score::new();
    score.ticks_per_quarter = skeleton.ticks_per_quarter;
    score.tempo_map = skeleton.tempo_map.clone();
    for (inst, part) in ENSEMBLE_ORDER.iter().zip(parts) {
        score.tracks.insert(*inst, part);
    }
    Ok(Ensemble {
        score,
        report: EnsembleReport {
            skeleton_notes: line.len(),
            passes: 1 + cfg.refinement_passes,
            tracks: reports,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::ModelConfig;
    use crate::nianzhi::{pseudo_labels, train_detector, DetectorConfig, DetectorTrainConfig};
    use crate::score::bar_count;
    use crate::synth::{melody_with_runs, random_melody};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixtures(seed: u64) -> (ModelParams, NianzhiDetector, Mode) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelParams::init(ModelConfig { hidden: 8, ..Default::default() }, &mut rng).unwrap();
        let det = NianzhiDetector::init(DetectorConfig { hidden: 4 }, &mut rng);
        (model, det, Mode::wu_kong())
    }

    #[test]
    fn transforms() {
        let line = vec![
            NoteEvent::new(62, 0.0, 1.0, 90, Instrument::Pipa),
            NoteEvent::new(67, 1.0, 0.5, 80, Instrument::Pipa),
        ];
        assert_eq!(instrument_transform(&line, Instrument::Pipa).unwrap(), line);
        let s = instrument_transform(&line, Instrument::Sanxian).unwrap();
        assert!((s[0].duration - 0.8).abs() < 1e-12);
        assert_eq!(s[0].instrument, Instrument::Sanxian);
        assert_eq!(instrument_transform(&line, Instrument::Dongxiao).unwrap()[0].pitch, 50);
        assert_eq!(instrument_transform(&line, Instrument::Erxian).unwrap()[1].pitch, 79);
        let low = [NoteEvent::new(5, 0.0, 1.0, 90, Instrument::Pipa)];
        assert_eq!(
            instrument_transform(&low, Instrument::Dongxiao),
            Err(EnsembleError::PitchOutOfRange {
                instrument: Instrument::Dongxiao,
                pitch: 5
            })
        );
    }

    #[test]
    fn density_draws_center_on_mean() {
        let cfg = EnsembleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<(f64, f64)> = (0..1000).map(|_| sample_density(&cfg, &mut rng).unwrap()).collect();
        let mean = draws.iter().map(|d| d.0).sum::<f64>() / 1000.0;
        assert!((mean - 0.6).abs() < 0.02, "{mean}");
        assert!(draws.iter().all(|d| (0.2..=0.6).contains(&d.1)));
    }

    #[test]
    fn ensemble_structure_and_alignment() {
        let (model, det, mode) = fixtures(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let skeleton = Score::single_track(Instrument::Pipa, random_melody(24, &mode, &mut rng));
        let cfg = EnsembleConfig::default();
        let out = generate_ensemble(&skeleton, &model, &det, &mode, &cfg, &mut rng).unwrap();
        let insts: Vec<Instrument> = out.score.tracks.keys().copied().collect();
        assert_eq!(insts, ENSEMBLE_ORDER);
        out.score.check_invariants().unwrap();
        let bars = bar_count(skeleton.track(Instrument::Pipa));
        for (inst, notes) in &out.score.tracks {
            assert_eq!(bar_count(notes), bars, "{inst}");
        }
        for t in &out.report.tracks {
            let part = out.score.track(t.instrument);
            assert_eq!(part, instrument_transform(&t.pre_transform, t.instrument).unwrap().as_slice());
            assert!(t.density_cap <= 0.6 && t.metrics.density <= t.density_cap + 1e-9);
        }
        let pipa: Vec<u8> = out.score.track(Instrument::Pipa).iter().filter(|n| n.role == NoteRole::Main).map(|n| n.pitch).collect();
        let skel: Vec<u8> = skeleton.track(Instrument::Pipa).iter().map(|n| n.pitch).collect();
        assert_eq!(pipa, skel);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let (model, det, mode) = fixtures(2);
        let skeleton = Score::single_track(Instrument::Pipa, random_melody(16, &mode, &mut ChaCha8Rng::seed_from_u64(5)));
        let cfg = EnsembleConfig {
            special_notes: true,
            ..Default::default()
        };
        let run = |seed| generate_ensemble(&skeleton, &model, &det, &mode, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(7), run(7));
        assert_ne!(run(7).score, run(8).score);
    }

    #[test]
    fn trained_detector_adds_runs_that_collapse_to_the_skeleton() {
        let mode = Mode::wu_kong();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<_> = (0..24)
            .map(|_| pseudo_labels(&melody_with_runs(24, 0.9, &mode, &mut rng), &Default::default()))
            .collect();
        let tc = DetectorTrainConfig {
            epochs: 40,
            lr: 0.02,
            ..Default::default()
        };
        let (det, _) = train_detector(&data, &tc, &mut rng).unwrap();
        let model = ModelParams::init(ModelConfig { hidden: 8, ..Default::default() }, &mut rng).unwrap();
        let skeleton = Score::single_track(Instrument::Pipa, random_melody(40, &mode, &mut rng));
        let out = generate_ensemble(&skeleton, &model, &det, &mode, &EnsembleConfig::default(), &mut rng).unwrap();
        let pipa = &out.report.tracks[0];
        assert!(pipa.nianzhi_runs > 0);
        let collapsed: Vec<u8> = pipa.pre_transform.iter().filter(|n| n.role == NoteRole::Main).map(|n| n.pitch).collect();
        let skel: Vec<u8> = skeleton.track(Instrument::Pipa).iter().map(|n| n.pitch).collect();
        assert_eq!(collapsed, skel);
    }

    #[test]
    fn rejects_multi_track_skeleton() {
        let (model, det, mode) = fixtures(3);
        let mut s = Score::single_track(Instrument::Pipa, random_melody(4, &mode, &mut ChaCha8Rng::seed_from_u64(0)));
        s.tracks.insert(Instrument::Erxian, random_melody(4, &mode, &mut ChaCha8Rng::seed_from_u64(1)));
        let err = generate_ensemble(&s, &model, &det, &mode, &EnsembleConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(err.unwrap_err(), EnsembleError::NotSingleTrack(2));
    }
}
