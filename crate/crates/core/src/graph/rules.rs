use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_graph_from_notes, Edge, EdgeKind, GraphError, HeteroGraph, NodeRef, OrnamentFeature,
    OrnamentType, TechFeature, TechKind,
};
use crate::score::NoteEvent;
use crate::tokenizer::Mode;
use crate::tokenizer::NianzhiSpan;

/// Rule-injection constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub target_density: f64,
    /// Initial weight of a freshly placed decorative edge.
    pub decorative_weight: f64,
    pub upper_second_probability: f64,
    /// Grace-note onset offset relative to the host, in beats.
    pub grace_offset: f64,
    pub pentatonic_boost: f64,
    /// How far ahead (beats) a nianzhi counts as upcoming.
    pub lookahead_beats: f64,
    /// Minimum rest (beats) after a note that ends a phrase.
    pub phrase_rest: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            target_density: 0.6,
            decorative_weight: 0.5,
            upper_second_probability: 0.9,
            grace_offset: -0.015,
            pentatonic_boost: 2.0,
            lookahead_beats: 4.0,
            phrase_rest: 0.5,
        }
    }
}

/// Adds ornaments on uniformly sampled eligible hosts (not in a nianzhi
/// span, not already decorated) until the ornament/note ratio reaches
/// `target_density` or hosts run out.
pub fn place_ornaments<R: Rng + ?Sized>(
    g: &HeteroGraph,
    target_density: f64,
    cfg: &GraphConfig,
    rng: &mut R,
) -> HeteroGraph {
    let mut out = g.clone();
    out.rules_applied.ornaments_placed = true;
    let n = g.notes.len();
    let wanted = (target_density.clamp(0.0, 1.0) * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let needed = wanted.saturating_sub(g.ornaments.len());
    if needed == 0 {
        return out;
    }
    let decorated: Vec<usize> = (0..g.ornaments.len()).filter_map(|o| g.ornament_host(o)).collect();
    let mut eligible: Vec<usize> = (0..n)
        .filter(|&i| !g.notes[i].is_nianzhi() && !decorated.contains(&i))
        .collect();
    eligible.shuffle(rng);
    eligible.truncate(needed);
    eligible.sort_unstable();
    for host in eligible {
        let hp = g.notes[host].pitch as i16;
        let up = rng.random::<f64>() < cfg.upper_second_probability;
        let mut pitch = if up { hp + 2 } else { hp - 2 };
        if !(0..=127).contains(&pitch) {
            pitch = if up { hp - 2 } else { hp + 2 };
        }
        let o = out.ornaments.len();
        out.ornaments.push(OrnamentFeature {
            ornament_type: OrnamentType::Standard,
            weight: cfg.decorative_weight,
            pitch: pitch as u8,
            offset: cfg.grace_offset,
        });
        out.edges.push(Edge {
            src: NodeRef::Ornament(o),
            dst: NodeRef::Note(host),
            kind: EdgeKind::Decorative,
            weight: cfg.decorative_weight,
        });
    }
    out.canonicalize();
    out
}

/// One boosted decorative edge: its position in `edges`, the weight before
/// the boost and the raw boosted weight before renormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostRecord {
    pub edge: usize,
    pub before: f64,
    pub boosted: f64,
}

pub fn inject_pentatonic_enhancement(g: &HeteroGraph, mode: &Mode, boost: f64) -> HeteroGraph {
    inject_pentatonic_enhancement_with_report(g, mode, boost).0
}

/// Multiplies the weight of every decorative edge whose ornament and host
/// pitches are both in `mode` by `boost`. Afterwards, for every host whose
/// largest incoming decorative weight exceeds 1, all its decorative weights
/// are divided by that maximum.
pub fn inject_pentatonic_enhancement_with_report(
    g: &HeteroGraph,
    mode: &Mode,
    boost: f64,
) -> (HeteroGraph, Vec<BoostRecord>) {
    let mut out = g.clone();
    out.rules_applied.pentatonic_enhanced = true;
    let mut report = Vec::new();
    for (k, e) in out.edges.iter_mut().enumerate() {
        if let (EdgeKind::Decorative, NodeRef::Ornament(o), NodeRef::Note(h)) = (e.kind, e.src, e.dst) {
            if mode.contains(g.ornaments[o].pitch) && mode.contains(g.notes[h].pitch) {
                let before = e.weight;
                e.weight *= boost;
                report.push(BoostRecord {
                    edge: k,
                    before,
                    boosted: e.weight,
                });
            }
        }
    }
    let mut host_max = vec![0.0f64; out.notes.len()];
    for e in out.edges_of(EdgeKind::Decorative) {
        if let NodeRef::Note(h) = e.dst {
            host_max[h] = host_max[h].max(e.weight);
        }
    }
    for e in out.edges.iter_mut() {
        if let (EdgeKind::Decorative, NodeRef::Ornament(o), NodeRef::Note(h)) = (e.kind, e.src, e.dst) {
            if host_max[h] > 1.0 {
                e.weight /= host_max[h];
            }
            out.ornaments[o].weight = e.weight.clamp(0.0, 1.0);
        }
    }
    (out, report)
}

/// Adds Guan markers before each nianzhi and Jie markers on phrase-final
/// notes that no nianzhi follows.
pub fn apply_technique_rules(g: &HeteroGraph, cfg: &GraphConfig) -> HeteroGraph {
    let mut out = g.clone();
    out.rules_applied.techniques_applied = true;
    let span_starts: Vec<usize> = (0..g.techs.len())
        .filter(|&t| g.techs[t].tech_kind == TechKind::Nianzhi)
        .filter_map(|t| {
            g.edges
                .iter()
                .filter_map(|e| match (e.kind, e.src, e.dst) {
                    (EdgeKind::Trigger, NodeRef::Tech(x), NodeRef::Note(n)) if x == t => Some(n),
                    _ => None,
                })
                .min_by(|&a, &b| g.notes[a].onset.total_cmp(&g.notes[b].onset))
        })
        .collect();

    let add = |out: &mut HeteroGraph, kind: TechKind, params: [f64; 3], note: usize| {
        let t = out.techs.len();
        out.techs.push(TechFeature {
            tech_kind: kind,
            params,
        });
        out.edges.push(Edge {
            src: NodeRef::Tech(t),
            dst: NodeRef::Note(note),
            kind: EdgeKind::Trigger,
            weight: 1.0,
        });
    };

    for chain in g.chains() {
        let order = g.chain_notes(chain);
        let pos = |note: usize| order.iter().position(|&i| i == note);
        for &s in &span_starts {
            let Some(p) = pos(s) else { continue };
            if p == 0 {
                continue;
            }
            let prev = order[p - 1];
            let lead = g.notes[s].onset - g.notes[prev].onset;
            if lead <= cfg.lookahead_beats + 1e-9 {
                add(&mut out, TechKind::DiantiaoGuan, [lead / cfg.lookahead_beats, 0.0, 0.0], prev);
            }
        }
        for (p, &i) in order.iter().enumerate() {
            let note = &g.notes[i];
            if note.is_nianzhi() {
                continue;
            }
            let rest = match order.get(p + 1) {
                Some(&j) => g.notes[j].onset - (note.onset + note.duration),
                None => f64::INFINITY,
            };
            if rest < cfg.phrase_rest - 1e-9 {
                continue;
            }
            let nianzhi_follows = span_starts.iter().any(|&s| {
                let d = g.notes[s].onset - note.onset;
                d > 0.0 && d <= cfg.lookahead_beats + 1e-9
            });
            if !nianzhi_follows {
                let r = rest.min(cfg.lookahead_beats) / cfg.lookahead_beats;
                add(&mut out, TechKind::DiantiaoJie, [r, 0.0, 0.0], i);
            }
        }
    }
    out.canonicalize();
    out
}

/// Full conversion: build, place ornaments, enhance, then technique rules.
/// Each transform runs exactly once and the result is re-validated after
/// every step.
pub fn convert<R: Rng + ?Sized>(
    notes: &[NoteEvent],
    spans: &[NianzhiSpan],
    mode: &Mode,
    cfg: &GraphConfig,
    rng: &mut R,
) -> Result<HeteroGraph, GraphError> {
    let g = build_graph_from_notes(notes, spans)?;
    if g.rules_applied.ornaments_placed {
        return Err(GraphError::RuleAlreadyApplied("place_ornaments"));
    }
    let g = place_ornaments(&g, cfg.target_density, cfg, rng);
    g.validate()?;
    if g.rules_applied.pentatonic_enhanced {
        return Err(GraphError::RuleAlreadyApplied("pentatonic_enhancement"));
    }
    let g = inject_pentatonic_enhancement(&g, mode, cfg.pentatonic_boost);
    g.validate()?;
    if g.rules_applied.techniques_applied {
        return Err(GraphError::RuleAlreadyApplied("technique_rules"));
    }
    let g = apply_technique_rules(&g, cfg);
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Instrument;
    use crate::tokenizer::NianzhiCategory;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(pitches: &[u8]) -> Vec<NoteEvent> {
        pitches
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent::new(p, i as f64, 0.5, 80, Instrument::Pipa))
            .collect()
    }

    fn span(start: usize, reps: usize) -> NianzhiSpan {
        NianzhiSpan {
            start_index: start,
            repetitions: reps,
            category: NianzhiCategory::Standard,
        }
    }

    fn decorated(host_pitch: u8, orn_pitch: u8, weight: f64) -> HeteroGraph {
        let mut g = build_graph_from_notes(&line(&[host_pitch]), &[]).unwrap();
        g.ornaments.push(OrnamentFeature {
            ornament_type: OrnamentType::Standard,
            weight,
            pitch: orn_pitch,
            offset: -0.015,
        });
        g.edges.push(Edge {
            src: NodeRef::Ornament(0),
            dst: NodeRef::Note(0),
            kind: EdgeKind::Decorative,
            weight,
        });
        g
    }

    #[test]
    fn in_mode_edge_doubles() {
        let g = decorated(62, 64, 0.4);
        let (h, report) = inject_pentatonic_enhancement_with_report(&g, &Mode::wu_kong(), 2.0);
        assert_eq!(h.edges_of(EdgeKind::Decorative).next().unwrap().weight, 0.8);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].boosted, 2.0 * report[0].before);
        h.validate().unwrap();
    }

    #[test]
    fn out_of_mode_edge_is_untouched() {
        // pitch class 6 (f#) is outside both Wu-Kong registers
        let g = decorated(64, 66, 0.4);
        let h = inject_pentatonic_enhancement(&g, &Mode::wu_kong(), 2.0);
        assert_eq!(h.edges, g.edges);
        let bare = build_graph_from_notes(&line(&[60, 62]), &[]).unwrap();
        let h = inject_pentatonic_enhancement(&bare, &Mode::wu_kong(), 2.0);
        assert_eq!(h.edges, bare.edges);
        assert_eq!(h.ornaments, bare.ornaments);
    }

    #[test]
    fn boost_over_one_is_renormalized() {
        let g = decorated(62, 64, 0.7);
        let h = inject_pentatonic_enhancement(&g, &Mode::wu_kong(), 2.0);
        assert_eq!(h.edges_of(EdgeKind::Decorative).next().unwrap().weight, 1.0);
        let twice = inject_pentatonic_enhancement(&inject_pentatonic_enhancement(&decorated(62, 64, 0.2), &Mode::wu_kong(), 2.0), &Mode::wu_kong(), 2.0);
        assert!((twice.ornaments[0].weight - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ten_notes_get_six_ornaments() {
        let g = build_graph_from_notes(&line(&[60, 62, 64, 67, 69, 60, 62, 64, 67, 69]), &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = place_ornaments(&g, 0.6, &GraphConfig::default(), &mut rng);
        assert_eq!(h.ornaments.len(), 6);
        h.validate().unwrap();
        let hosts: Vec<usize> = (0..6).map(|o| h.ornament_host(o).unwrap()).collect();
        let mut uniq = hosts.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
        let z = place_ornaments(&g, 0.0, &GraphConfig::default(), &mut rng);
        assert_eq!(z.notes, g.notes);
        assert_eq!(z.edges, g.edges);
        assert!(z.ornaments.is_empty());
    }

    #[test]
    fn span_notes_never_host() {
        let g = build_graph_from_notes(&line(&[60, 62, 62, 62, 64]), &[span(1, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = place_ornaments(&g, 1.0, &GraphConfig::default(), &mut rng);
        assert_eq!(h.ornaments.len(), 2);
        for o in 0..2 {
            let host = h.ornament_host(o).unwrap();
            assert!(host == 0 || host == 4);
        }
    }

    #[test]
    fn upper_second_frequency() {
        let notes = line(&[60; 100].iter().enumerate().map(|(i, _)| 60 + (i % 5) as u8).collect::<Vec<_>>());
        let notes: Vec<NoteEvent> = notes;
        let g = build_graph_from_notes(&notes, &[]).unwrap();
        let (mut up, mut total) = (0usize, 0usize);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = place_ornaments(&g, 1.0, &GraphConfig::default(), &mut rng);
            for o in 0..h.ornaments.len() {
                let host = h.ornament_host(o).unwrap();
                total += 1;
                if h.ornaments[o].pitch == h.notes[host].pitch + 2 {
                    up += 1;
                }
            }
        }
        assert_eq!(total, 10_000);
        let frac = up as f64 / total as f64;
        assert!((frac - 0.9).abs() <= 0.02, "upper fraction {frac}");
    }

    #[test]
    fn guan_precedes_span() {
        let notes = line(&[60, 62, 64, 67, 69, 72, 72, 72]);
        let g = build_graph_from_notes(&notes, &[span(5, 3)]).unwrap();
        let h = apply_technique_rules(&g, &GraphConfig::default());
        let guans: Vec<usize> = h
            .edges_of(EdgeKind::Trigger)
            .filter_map(|e| match (e.src, e.dst) {
                (NodeRef::Tech(t), NodeRef::Note(n)) if h.techs[t].tech_kind == TechKind::DiantiaoGuan => Some(n),
                _ => None,
            })
            .collect();
        assert_eq!(guans, vec![4]);
        h.validate().unwrap();

        let g0 = build_graph_from_notes(&line(&[72, 72, 72, 60]), &[span(0, 3)]).unwrap();
        let h0 = apply_technique_rules(&g0, &GraphConfig::default());
        assert!(!h0.techs.iter().any(|t| t.tech_kind == TechKind::DiantiaoGuan));
    }

    #[test]
    fn jie_on_last_note_without_spans() {
        let g = build_graph_from_notes(&line(&[60, 62, 64]), &[]).unwrap();
        let h = apply_technique_rules(&g, &GraphConfig::default());
        // each note is followed by a 0.5-beat rest, so all are phrase-final
        let jie: Vec<usize> = h
            .edges_of(EdgeKind::Trigger)
            .filter_map(|e| match (e.src, e.dst) {
                (NodeRef::Tech(t), NodeRef::Note(n)) if h.techs[t].tech_kind == TechKind::DiantiaoJie => Some(n),
                _ => None,
            })
            .collect();
        assert!(jie.contains(&2));

        let legato: Vec<NoteEvent> = (0..4)
            .map(|i| NoteEvent::new(60 + i as u8, i as f64, 1.0, 80, Instrument::Pipa))
            .collect();
        let h = apply_technique_rules(&build_graph_from_notes(&legato, &[]).unwrap(), &GraphConfig::default());
        assert_eq!(h.techs.len(), 1);
        assert!(h.edges.iter().any(|e| e.src == NodeRef::Tech(0) && e.dst == NodeRef::Note(3)));
    }

    #[test]
    fn jie_suppressed_before_nianzhi() {
        let notes = line(&[60, 62, 62, 62]);
        let g = build_graph_from_notes(&notes, &[span(1, 3)]).unwrap();
        let h = apply_technique_rules(&g, &GraphConfig::default());
        assert!(!h.edges.iter().any(|e| e.kind == EdgeKind::Trigger
            && e.dst == NodeRef::Note(0)
            && matches!(e.src, NodeRef::Tech(t) if h.techs[t].tech_kind == TechKind::DiantiaoJie)));
    }

    #[test]
    fn pipeline_rejects_reapplication_and_stays_valid() {
        let notes = line(&[60, 62, 64, 67, 69, 72, 72, 72, 74]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = convert(&notes, &[span(5, 3)], &Mode::wu_kong(), &GraphConfig::default(), &mut rng).unwrap();
        assert!(g.rules_applied.ornaments_placed && g.rules_applied.pentatonic_enhanced && g.rules_applied.techniques_applied);
        g.validate().unwrap();
    }

    proptest! {
        #[test]
        fn density_lands_within_one_note(
            pitches in prop::collection::vec(55u8..80, 2..40),
            target in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let g = build_graph_from_notes(&line(&pitches), &[]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = place_ornaments(&g, target, &GraphConfig::default(), &mut rng);
            h.validate().unwrap();
            let n = pitches.len() as f64;
            let d = h.ornaments.len() as f64 / n;
            prop_assert!(d >= target - 1e-9 && d <= target + 1.0 / n + 1e-9, "density {} target {}", d, target);
            let e = inject_pentatonic_enhancement(&h, &Mode::wu_kong(), 2.0);
            e.validate().unwrap();
            apply_technique_rules(&e, &GraphConfig::default()).validate().unwrap();
        }
    }
}
