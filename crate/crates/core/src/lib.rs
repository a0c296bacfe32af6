//! Nanyin-aware symbolic music pipeline: MIDI I/O, NanyinTok tokenization,
//! heterogeneous graph conversion, GATv2 skeletal-melody training, nianzhi
//! prediction and expansion, rule-guided ornamentation, four-instrument
//! ensemble decoding, and evaluation metrics.

pub mod config;
pub mod ensemble;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod midi_io;
pub mod nianzhi;
pub mod ornament;
pub mod score;
pub mod synth;
pub mod tokenizer;

pub use score::{Instrument, NoteEvent, NoteRole, Score, TempoChange};
