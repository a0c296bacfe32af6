use super::{Edge, EdgeKind, GraphError, HeteroGraph, NodeRef, NoteFeature, TechFeature, TechKind};
use crate::score::{sort_notes, NoteEvent, Score};
use crate::tokenizer::NianzhiSpan;

/// Reduces a track to a single line: among notes sharing an onset only the
/// highest pitch survives.
pub fn monophonic(notes: &[NoteEvent]) -> Vec<NoteEvent> {
    let mut sorted = notes.to_vec();
    sort_notes(&mut sorted);
    let mut out: Vec<NoteEvent> = Vec::with_capacity(sorted.len());
    for n in sorted {
        match out.last_mut() {
            Some(last) if (last.onset - n.onset).abs() < 1e-9 => {
                if n.pitch > last.pitch {
                    *last = n;
                }
            }
            _ => out.push(n),
        }
    }
    out
}

/// Builds the graph for the primary track of `score`.
pub fn build_graph(score: &Score, spans: &[NianzhiSpan]) -> Result<HeteroGraph, GraphError> {
    build_graph_from_notes(crate::tokenizer::primary_track(score), spans)
}

/// `notes` must be sorted by onset with no two sharing an onset; span
/// indices refer to this order.
pub fn build_graph_from_notes(
    notes: &[NoteEvent],
    spans: &[NianzhiSpan],
) -> Result<HeteroGraph, GraphError> {
    if notes.is_empty() {
        return Err(GraphError::EmptyScore);
    }
    for i in 1..notes.len() {
        if !(notes[i].onset > notes[i - 1].onset) {
            return Err(GraphError::NotMonophonic(i - 1, i));
        }
    }
    let mut g = HeteroGraph {
        notes: notes
            .iter()
            .map(|n| NoteFeature {
                pitch: n.pitch,
                velocity: n.velocity,
                onset: n.onset,
                duration: n.duration,
                nianzhi: [0.0; 3],
                chain: 0,
            })
            .collect(),
        ..Default::default()
    };
    for i in 1..notes.len() {
        g.edges.push(Edge {
            src: NodeRef::Note(i - 1),
            dst: NodeRef::Note(i),
            kind: EdgeKind::Temporal,
            weight: 1.0,
        });
    }
    for span in spans {
        let idx = span.indices();
        if idx.end > notes.len() || span.repetitions == 0 {
            return Err(GraphError::Invalid(format!("span {span:?} exceeds the note list")));
        }
        let run = &notes[idx.clone()];
        let iois: Vec<f64> = (0..run.len())
            .map(|k| {
                if k + 1 < run.len() {
                    run[k + 1].onset - run[k].onset
                } else if k > 0 {
                    run[k].onset - run[k - 1].onset
                } else {
                    0.0
                }
            })
            .collect();
        let vels: Vec<f64> = run.iter().map(|n| n.velocity as f64).collect();
        let speed = min_max(&iois);
        let intensity = min_max(&vels);
        for (k, i) in idx.clone().enumerate() {
            g.notes[i].nianzhi = [1.0, speed[k], intensity[k]];
        }
        let mean_ioi = if run.len() > 1 {
            (run[run.len() - 1].onset - run[0].onset) / (run.len() - 1) as f64
        } else {
            0.0
        };
        let tech = g.techs.len();
        g.techs.push(TechFeature {
            tech_kind: TechKind::Nianzhi,
            params: [
                span.category.code() as f64 / 2.0,
                (span.repetitions as f64 / 4.0).min(1.0),
                mean_ioi,
            ],
        });
        for i in idx {
            g.edges.push(Edge {
                src: NodeRef::Tech(tech),
                dst: NodeRef::Note(i),
                kind: EdgeKind::Trigger,
                weight: 1.0,
            });
        }
    }
    g.canonicalize();
    g.validate()?;
    Ok(g)
}

/// Appends `notes` (sorted, one per onset) as temporal chain `chain`. Each
/// new note is linked both ways to every note of another chain that shares
/// its onset.
pub fn add_conditioning_chain(g: &HeteroGraph, notes: &[NoteEvent], chain: u8) -> Result<HeteroGraph, GraphError> {
    if chain == 0 || g.notes.iter().any(|n| n.chain == chain) {
        return Err(GraphError::Invalid(format!("chain {chain} is reserved or already present")));
    }
    if notes.is_empty() {
        return Err(GraphError::EmptyScore);
    }
    for i in 1..notes.len() {
        if !(notes[i].onset > notes[i - 1].onset) {
            return Err(GraphError::NotMonophonic(i - 1, i));
        }
    }
    let mut out = g.clone();
    let first = out.notes.len();
    for (k, n) in notes.iter().enumerate() {
        let id = first + k;
        for (j, other) in g.notes.iter().enumerate() {
            if (other.onset - n.onset).abs() <= 1e-9 {
                for (src, dst) in [(j, id), (id, j)] {
                    out.edges.push(Edge {
                        src: NodeRef::Note(src),
                        dst: NodeRef::Note(dst),
                        kind: EdgeKind::Temporal,
                        weight: 1.0,
                    });
                }
            }
        }
        out.notes.push(NoteFeature {
            pitch: n.pitch,
            velocity: n.velocity,
            onset: n.onset,
            duration: n.duration,
            nianzhi: [0.0; 3],
            chain,
        });
        if k > 0 {
            out.edges.push(Edge {
                src: NodeRef::Note(id - 1),
                dst: NodeRef::Note(id),
                kind: EdgeKind::Temporal,
                weight: 1.0,
            });
        }
    }
    out.canonicalize();
    out.validate()?;
    Ok(out)
}

/// Min-max scaling to [0,1]; a constant slice maps to zeros.
fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Instrument;
    use crate::tokenizer::{detect_nianzhi, NianzhiCategory, NianzhiDetectConfig};

    fn line(pitches: &[u8]) -> Vec<NoteEvent> {
        pitches
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent::new(p, i as f64, 0.5, 80, Instrument::Pipa))
            .collect()
    }

    #[test]
    fn conditioning_chain_links_shared_onsets() {
        let g = build_graph_from_notes(&line(&[60, 62, 64]), &[]).unwrap();
        let other: Vec<NoteEvent> = [(67, 0.0), (69, 1.5), (72, 2.0)]
            .iter()
            .map(|&(p, t)| NoteEvent::new(p, t, 0.5, 70, Instrument::Sanxian))
            .collect();
        let h = add_conditioning_chain(&g, &other, 1).unwrap();
        assert_eq!(h.chains(), [0, 1]);
        assert_eq!(h.chain_notes(1), [3, 4, 5]);
        let cross: Vec<(NodeRef, NodeRef)> = h
            .edges_of(EdgeKind::Temporal)
            .filter(|e| match (e.src, e.dst) {
                (NodeRef::Note(a), NodeRef::Note(b)) => h.notes[a].chain != h.notes[b].chain,
                _ => false,
            })
            .map(|e| (e.src, e.dst))
            .collect();
        assert_eq!(
            cross,
            [
                (NodeRef::Note(0), NodeRef::Note(3)),
                (NodeRef::Note(2), NodeRef::Note(5)),
                (NodeRef::Note(3), NodeRef::Note(0)),
                (NodeRef::Note(5), NodeRef::Note(2)),
            ]
        );
        assert!(add_conditioning_chain(&h, &other, 1).is_err());
        assert!(add_conditioning_chain(&h, &other, 0).is_err());
    }

    #[test]
    fn five_notes_make_a_chain() {
        let g = build_graph(&Score::single_track(Instrument::Pipa, line(&[62, 64, 67, 69, 71])), &[]).unwrap();
        assert_eq!(g.notes.len(), 5);
        assert_eq!(g.edges_of(EdgeKind::Temporal).count(), 4);
        assert!(g.techs.is_empty() && g.ornaments.is_empty());
        assert!(g.notes.iter().all(|n| n.nianzhi == [0.0; 3]));
        assert!(g.edges.iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn span_gets_one_tech_node() {
        let mut notes = line(&[60, 62]);
        for (k, v) in [100u8, 90, 70].iter().enumerate() {
            notes.push(NoteEvent::new(67, 2.0 + 0.1 * k as f64 + 0.05 * (k * k) as f64, 0.1, *v, Instrument::Pipa));
        }
        notes.push(NoteEvent::new(69, 4.0, 1.0, 80, Instrument::Pipa));
        let spans = detect_nianzhi(&notes, &NianzhiDetectConfig::default());
        assert_eq!(spans.len(), 1);
        let g = build_graph_from_notes(&notes, &spans).unwrap();
        assert_eq!(g.techs.len(), 1);
        assert_eq!(g.techs[0].tech_kind, TechKind::Nianzhi);
        let triggers: Vec<_> = g.edges_of(EdgeKind::Trigger).collect();
        assert_eq!(triggers.len(), spans[0].repetitions);
        // iois 0.15, 0.25, 0.25 → speed 0, 1, 1; velocities 100, 90, 70 → 1, 2/3, 0
        let v: Vec<[f64; 3]> = g.notes[2..5].iter().map(|n| n.nianzhi).collect();
        let expect = [[1.0, 0.0, 1.0], [1.0, 1.0, 2.0 / 3.0], [1.0, 1.0, 0.0]];
        for (a, b) in v.iter().zip(expect.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
        assert_eq!(g.notes[0].nianzhi, [0.0; 3]);
        assert_eq!(g.notes[5].nianzhi, [0.0; 3]);
        assert_eq!(spans[0].category, NianzhiCategory::Standard);
    }

    #[test]
    fn empty_and_chordal_inputs_are_rejected() {
        assert_eq!(build_graph_from_notes(&[], &[]), Err(GraphError::EmptyScore));
        let chord = vec![
            NoteEvent::new(60, 0.0, 1.0, 80, Instrument::Pipa),
            NoteEvent::new(64, 0.0, 1.0, 80, Instrument::Pipa),
        ];
        assert_eq!(build_graph_from_notes(&chord, &[]), Err(GraphError::NotMonophonic(0, 1)));
        let mono = monophonic(&chord);
        assert_eq!(mono.len(), 1);
        assert_eq!(mono[0].pitch, 64);
    }
}
