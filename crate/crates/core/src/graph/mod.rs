//! Heterogeneous note/ornament/technique graphs and the rule-injection
//! transforms applied to them.
//!
//! Node kinds: `Note` (one per performed note), `Ornament` (decorations
//! attached to a host note) and `Tech` (nianzhi and diantiao technique
//! markers). Edge kinds: `Temporal` (note to next note), `Decorative`
//! (ornament to host) and `Trigger` (technique to the notes or ornaments it
//! affects).

mod build;
mod io;
mod rules;

pub use build::{add_conditioning_chain, build_graph, build_graph_from_notes, monophonic};
pub use io::{deserialize_graph, serialize_graph, GRAPH_SCHEMA_VERSION};
pub use rules::{
    apply_technique_rules, convert, inject_pentatonic_enhancement,
    inject_pentatonic_enhancement_with_report, place_ornaments, BoostRecord, GraphConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("score has no notes")]
    EmptyScore,
    #[error("notes {0} and {1} share an onset; the graph needs a monophonic line")]
    NotMonophonic(usize, usize),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("rule `{0}` was already applied to this graph")]
    RuleAlreadyApplied(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Note(usize),
    Ornament(usize),
    Tech(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Temporal,
    Decorative,
    Trigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteFeature {
    pub pitch: u8,
    pub velocity: u8,
    pub onset: f64,
    pub duration: f64,
    /// `[is_nianzhi, speed_change, intensity_pattern]`.
    pub nianzhi: [f64; 3],
    /// Temporal chain the note belongs to. Chain 0 is the line being
    /// modelled; other chains carry conditioning context.
    #[serde(default)]
    pub chain: u8,
}

impl NoteFeature {
    pub fn is_nianzhi(&self) -> bool {
        self.nianzhi[0] == 1.0
    }
}

/// Ornament families with their own duration and velocity factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OrnamentType {
    Standard,
    LightAppoggiatura,
    MelodicIntegration,
}

impl OrnamentType {
    pub const ALL: [OrnamentType; 3] = [
        OrnamentType::Standard,
        OrnamentType::LightAppoggiatura,
        OrnamentType::MelodicIntegration,
    ];

    pub fn index(self) -> usize {
        match self {
            OrnamentType::Standard => 0,
            OrnamentType::LightAppoggiatura => 1,
            OrnamentType::MelodicIntegration => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrnamentFeature {
    pub ornament_type: OrnamentType,
    pub weight: f64,
    pub pitch: u8,
    /// Onset offset in beats relative to the host note.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TechKind {
    Nianzhi,
    DiantiaoGuan,
    DiantiaoJie,
}

impl TechKind {
    pub fn index(self) -> usize {
        match self {
            TechKind::Nianzhi => 0,
            TechKind::DiantiaoGuan => 1,
            TechKind::DiantiaoJie => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechFeature {
    pub tech_kind: TechKind,
    pub params: [f64; 3],
}

/// Which rule-injection transforms have run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RulesApplied {
    pub ornaments_placed: bool,
    pub pentatonic_enhanced: bool,
    pub techniques_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub notes: Vec<NoteFeature>,
    pub ornaments: Vec<OrnamentFeature>,
    pub techs: Vec<TechFeature>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub rules_applied: RulesApplied,
}

impl HeteroGraph {
    pub fn node_count(&self) -> usize {
        self.notes.len() + self.ornaments.len() + self.techs.len()
    }

    /// Flat index used by the neural layers: notes, then ornaments, then
    /// techs.
    pub fn flat_index(&self, node: NodeRef) -> usize {
        match node {
            NodeRef::Note(i) => i,
            NodeRef::Ornament(i) => self.notes.len() + i,
            NodeRef::Tech(i) => self.notes.len() + self.ornaments.len() + i,
        }
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    /// Host note of an ornament, via its decorative edge.
    pub fn ornament_host(&self, ornament: usize) -> Option<usize> {
        self.edges.iter().find_map(|e| match (e.kind, e.src, e.dst) {
            (EdgeKind::Decorative, NodeRef::Ornament(o), NodeRef::Note(n)) if o == ornament => Some(n),
            _ => None,
        })
    }

    /// Note indices of chain `chain` in temporal order.
    pub fn chain_notes(&self, chain: u8) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.notes.len())
            .filter(|&i| self.notes[i].chain == chain)
            .collect();
        idx.sort_by(|&a, &b| self.notes[a].onset.total_cmp(&self.notes[b].onset).then(a.cmp(&b)));
        idx
    }

    pub fn chains(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.notes.iter().map(|n| n.chain).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Sorts edges into canonical `(kind, src, dst)` order.
    pub fn canonicalize(&mut self) {
        self.edges
            .sort_by(|a, b| (a.kind, a.src, a.dst).cmp(&(b.kind, b.src, b.dst)));
    }

    /// Checks every structural invariant:
    ///
    /// - edge endpoints exist, weights are finite and non-negative;
    /// - temporal edges join notes; within a chain they form one path of
    ///   strictly increasing onsets, across chains they join notes sharing an
    ///   onset;
    /// - decorative edges run ornament to note, trigger edges run tech to note
    ///   or ornament;
    /// - nianzhi vectors and ornament weights are in range.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| Err(GraphError::Invalid(msg));
        let exists = |r: NodeRef| match r {
            NodeRef::Note(i) => i < self.notes.len(),
            NodeRef::Ornament(i) => i < self.ornaments.len(),
            NodeRef::Tech(i) => i < self.techs.len(),
        };
        for (k, n) in self.notes.iter().enumerate() {
            let v = n.nianzhi;
            if v[0] != 0.0 && v[0] != 1.0 {
                return bad(format!("note {k}: is_nianzhi = {}", v[0]));
            }
            if v[0] == 0.0 && (v[1] != 0.0 || v[2] != 0.0) {
                return bad(format!("note {k}: nianzhi components set without flag"));
            }
            if !(0.0..=1.0).contains(&v[1]) || !(0.0..=1.0).contains(&v[2]) {
                return bad(format!("note {k}: nianzhi components out of [0,1]"));
            }
            if !(n.duration > 0.0) || !n.onset.is_finite() {
                return bad(format!("note {k}: bad timing"));
            }
        }
        for (k, o) in self.ornaments.iter().enumerate() {
            if !(0.0..=1.0).contains(&o.weight) {
                return bad(format!("ornament {k}: weight {} out of [0,1]", o.weight));
            }
        }

        let mut out_deg = vec![0usize; self.notes.len()];
        let mut in_deg = vec![0usize; self.notes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            if !exists(e.src) || !exists(e.dst) {
                return bad(format!("edge {k} dangles: {:?} -> {:?}", e.src, e.dst));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return bad(format!("edge {k} has weight {}", e.weight));
            }
            match (e.kind, e.src, e.dst) {
                (EdgeKind::Temporal, NodeRef::Note(a), NodeRef::Note(b)) => {
                    let (na, nb) = (&self.notes[a], &self.notes[b]);
                    if na.chain == nb.chain {
                        if !(nb.onset > na.onset) {
                            return bad(format!("temporal edge {a}->{b} not forward in time"));
                        }
                        out_deg[a] += 1;
                        in_deg[b] += 1;
                    } else if (nb.onset - na.onset).abs() > 1e-9 {
                        return bad(format!("cross-chain temporal edge {a}->{b} without shared onset"));
                    }
                }
                (EdgeKind::Decorative, NodeRef::Ornament(_), NodeRef::Note(_)) => {}
                (EdgeKind::Trigger, NodeRef::Tech(_), NodeRef::Note(_) | NodeRef::Ornament(_)) => {}
                (kind, src, dst) => return bad(format!("edge {k}: {kind:?} {src:?} -> {dst:?} not allowed")),
            }
        }
        for chain in self.chains() {
            let order = self.chain_notes(chain);
            let heads = order.iter().filter(|&&i| in_deg[i] == 0).count();
            let edges: usize = order.iter().map(|&i| out_deg[i]).sum();
            if order.iter().any(|&i| in_deg[i] > 1 || out_deg[i] > 1)
                || heads != 1
                || edges + 1 != order.len()
            {
                return bad(format!("chain {chain}: temporal edges do not form a single path"));
            }
            // walk it
            let mut at = order[0];
            let mut visited = 1;
            while let Some(next) = self.edges.iter().find_map(|e| match (e.kind, e.src, e.dst) {
                (EdgeKind::Temporal, NodeRef::Note(a), NodeRef::Note(b))
                    if a == at && self.notes[b].chain == chain =>
                {
                    Some(b)
                }
                _ => None,
            }) {
                at = next;
                visited += 1;
            }
            if visited != order.len() {
                return bad(format!("chain {chain}: path does not cover all notes"));
            }
        }
        Ok(())
    }
}
