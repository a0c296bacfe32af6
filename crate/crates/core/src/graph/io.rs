//! Graph JSON, schema version 1.
//!
//! ```text
//! {
//!   "version": 1,
//!   "notes":     [{pitch, velocity, onset, duration, nianzhi: [f, f, f], chain}],
//!   "ornaments": [{ornament_type, weight, pitch, offset}],
//!   "techs":     [{tech_kind, params: [f, f, f]}],
//!   "edges":     [{src: {"Note"|"Ornament"|"Tech": index}, dst, kind, weight}],
//!   "rules_applied": {ornaments_placed, pentatonic_enhanced, techniques_applied}
//! }
//! ```
//!
//! Onsets, durations and offsets are in beats. Edges are written in
//! canonical `(kind, src, dst)` order so equal graphs give equal bytes.

use serde::{Deserialize, Serialize};

use super::{Edge, GraphError, HeteroGraph, NoteFeature, OrnamentFeature, RulesApplied, TechFeature};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    notes: Vec<NoteFeature>,
    ornaments: Vec<OrnamentFeature>,
    techs: Vec<TechFeature>,
    edges: Vec<Edge>,
    #[serde(default)]
    rules_applied: RulesApplied,
}

pub fn serialize_graph(g: &HeteroGraph) -> Vec<u8> {
    let mut g = g.clone();
    g.canonicalize();
    let file = GraphFile {
        version: GRAPH_SCHEMA_VERSION,
        notes: g.notes,
        ornaments: g.ornaments,
        techs: g.techs,
        edges: g.edges,
        rules_applied: g.rules_applied,
    };
    serde_json::to_vec_pretty(&file).expect("graph serialization cannot fail")
}

pub fn deserialize_graph(bytes: &[u8]) -> Result<HeteroGraph, GraphError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| GraphError::SchemaMismatch(e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == GRAPH_SCHEMA_VERSION as u64 => {}
        other => {
            return Err(GraphError::SchemaMismatch(format!(
                "expected version {GRAPH_SCHEMA_VERSION}, found {other:?}"
            )))
        }
    }
    let file: GraphFile =
        serde_json::from_value(value).map_err(|e| GraphError::SchemaMismatch(e.to_string()))?;
    let g = HeteroGraph {
        notes: file.notes,
        ornaments: file.ornaments,
        techs: file.techs,
        edges: file.edges,
        rules_applied: file.rules_applied,
    };
    g.validate()?;
    Ok(g)
}
