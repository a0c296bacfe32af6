use std::f64::consts::TAU;

use super::tensor::Tensor2D;
use super::GnnError;
use crate::graph::{HeteroGraph, NodeRef};
use crate::score::BEATS_PER_BAR;
use crate::tokenizer::{pitch_class_index, Mode};

/// Width of a node feature row:
///
/// | cols   | content                                        |
/// |--------|------------------------------------------------|
/// | 0..3   | node type one-hot (note, ornament, tech)       |
/// | 3      | pitch, `(p - 50) / 33`                         |
/// | 4..16  | pitch class one-hot                            |
/// | 16     | velocity / 127                                 |
/// | 17     | duration in beats / 4, capped at 1             |
/// | 18..20 | sin/cos of the position within the bar         |
/// | 20..23 | nianzhi vector                                 |
/// | 23     | ornament weight                                |
/// | 24..27 | ornament type one-hot                          |
/// | 27..30 | technique kind one-hot                         |
/// | 30..33 | technique parameters                           |
pub const INPUT_DIM: usize = 33;

fn pitch_cols(row: &mut [f64], pitch: u8) {
    row[3] = (pitch as f64 - 50.0) / 33.0;
    row[4 + (pitch % 12) as usize] = 1.0;
}

fn position_cols(row: &mut [f64], onset: f64) {
    let phase = TAU * onset.rem_euclid(BEATS_PER_BAR) / BEATS_PER_BAR;
    row[18] = phase.sin();
    row[19] = phase.cos();
}

/// Feature matrix in flat node order (notes, ornaments, techs).
pub fn node_features(g: &HeteroGraph) -> Tensor2D {
    let mut x = Tensor2D::zeros(g.node_count(), INPUT_DIM);
    for (i, n) in g.notes.iter().enumerate() {
        let row = x.row_mut(g.flat_index(NodeRef::Note(i)));
        row[0] = 1.0;
        pitch_cols(row, n.pitch);
        row[16] = n.velocity as f64 / 127.0;
        row[17] = (n.duration / 4.0).min(1.0);
        position_cols(row, n.onset);
        row[20..23].copy_from_slice(&n.nianzhi);
    }
    for (o, orn) in g.ornaments.iter().enumerate() {
        let host_onset = g.ornament_host(o).map_or(0.0, |h| g.notes[h].onset);
        let row = x.row_mut(g.flat_index(NodeRef::Ornament(o)));
        row[1] = 1.0;
        pitch_cols(row, orn.pitch);
        position_cols(row, host_onset + orn.offset);
        row[23] = orn.weight;
        row[24 + orn.ornament_type.index()] = 1.0;
    }
    for (t, tech) in g.techs.iter().enumerate() {
        let row = x.row_mut(g.flat_index(NodeRef::Tech(t)));
        row[2] = 1.0;
        row[27 + tech.tech_kind.index()] = 1.0;
        row[30..33].copy_from_slice(&tech.params);
    }
    x
}

/// Message-passing edges in flat indices, plus one self-loop per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weight: Vec<f64>,
}

impl Topology {
    pub fn from_graph(g: &HeteroGraph) -> Self {
        let n = g.node_count();
        let mut t = Topology {
            nodes: n,
            src: Vec::with_capacity(g.edges.len() + n),
            dst: Vec::with_capacity(g.edges.len() + n),
            weight: Vec::with_capacity(g.edges.len() + n),
        };
        for e in &g.edges {
            t.src.push(g.flat_index(e.src));
            t.dst.push(g.flat_index(e.dst));
            t.weight.push(e.weight);
        }
        t.add_self_loops();
        t
    }

    /// Edge list given directly; self-loops are appended.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut t = Topology {
            nodes,
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            weight: edges.iter().map(|e| e.2).collect(),
        };
        t.add_self_loops();
        t
    }

    fn add_self_loops(&mut self) {
        for i in 0..self.nodes {
            self.src.push(i);
            self.dst.push(i);
            self.weight.push(1.0);
        }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// Everything the model needs from one graph, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub features: Tensor2D,
    pub topology: Topology,
    /// Flat indices of the chain-0 notes in temporal order.
    pub sequence: Vec<usize>,
    /// Class of the next chain-0 note for every sequence position but the
    /// last.
    pub targets: Vec<usize>,
}

impl PreparedGraph {
    pub fn new(g: &HeteroGraph, mode: &Mode) -> Result<Self, GnnError> {
        if g.notes.is_empty() {
            return Err(GnnError::NoTargets);
        }
        let sequence = g.chain_notes(0);
        let targets = sequence
            .windows(2)
            .map(|w| pitch_class_index(g.notes[w[1]].pitch, mode))
            .collect();
        Ok(Self {
            features: node_features(g),
            topology: Topology::from_graph(g),
            sequence: sequence.iter().map(|&i| g.flat_index(NodeRef::Note(i))).collect(),
            targets,
        })
    }

    pub fn target_count(&self) -> usize {
        self.targets.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph_from_notes;
    use crate::score::{Instrument, NoteEvent};
    use crate::tokenizer::UNK_CLASS;

    #[test]
    fn features_and_targets() {
        let notes: Vec<NoteEvent> = [62u8, 64, 66]
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent::new(p, i as f64, 1.0, 127, Instrument::Pipa))
            .collect();
        let g = build_graph_from_notes(&notes, &[]).unwrap();
        let p = PreparedGraph::new(&g, &Mode::wu_kong()).unwrap();
        assert_eq!(p.features.shape(), (3, INPUT_DIM));
        assert_eq!(p.features.get(0, 0), 1.0);
        assert_eq!(p.features.get(0, 4 + 2), 1.0);
        assert_eq!(p.features.get(0, 16), 1.0);
        assert!((p.features.get(1, 18) - 1.0).abs() < 1e-12);
        // 64 is in mode, 66 (f#) is not
        assert_eq!(p.targets, vec![pitch_class_index(64, &Mode::wu_kong()), UNK_CLASS]);
        assert_eq!(p.topology.edge_count(), 2 + 3);
    }
}
