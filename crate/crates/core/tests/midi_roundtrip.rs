use nanyin_core::midi_io::{parse_midi, write_midi};
use nanyin_core::score::DEFAULT_TICKS_PER_QUARTER;
use nanyin_core::{Instrument, NoteEvent, NoteRole, Score, TempoChange};
use proptest::prelude::*;

const TPQ: f64 = DEFAULT_TICKS_PER_QUARTER as f64;

/// One track of tick-aligned notes that never overlap.
fn track(instrument: Instrument) -> impl Strategy<Value = Vec<NoteEvent>> {
    proptest::collection::vec((0u8..=127, 1u64..960, 1u64..960, 1u8..=127, 0u8..3), 0..25).prop_map(move |raw| {
        let mut tick = 0u64;
        raw.into_iter()
            .map(|(pitch, gap, len, velocity, role)| {
                let onset = tick;
                tick += gap;
                let n = NoteEvent::new(pitch, onset as f64 / TPQ, len.min(gap) as f64 / TPQ, velocity, instrument);
                n.with_role(NoteRole::from_index(role).unwrap())
            })
            .collect()
    })
}

fn score() -> impl Strategy<Value = Score> {
    (
        track(Instrument::Pipa),
        track(Instrument::Sanxian),
        track(Instrument::Dongxiao),
        track(Instrument::Erxian),
        proptest::collection::vec((1u64..20_000, 200_000u32..1_500_000), 0..3),
    )
        .prop_map(|(a, b, c, d, tempos)| {
            let mut s = Score::new();
            for t in [a, b, c, d] {
                if let Some(first) = t.first() {
                    s.tracks.insert(first.instrument, t);
                }
            }
            let mut at = 0u64;
            for (gap, us) in tempos {
                at += gap;
                s.tempo_map.push(TempoChange {
                    onset: at as f64 / TPQ,
                    us_per_quarter: us,
                });
            }
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn parse_inverts_write(s in score()) {
        s.check_invariants().unwrap();
        let bytes = write_midi(&s);
        let parsed = parse_midi(&bytes).unwrap();
        prop_assert_eq!(&parsed, &s);
        prop_assert_eq!(&write_midi(&parsed), &bytes);
        let smf = midly::Smf::parse(&bytes).unwrap();
        prop_assert_eq!(smf.tracks.len(), s.tracks.len() + 1);
    }

    #[test]
    fn off_grid_times_reach_a_fixed_point(
        raw in proptest::collection::vec((40u8..90, 0.001f64..2.0, 0.001f64..2.0, 1u8..=127), 1..30),
    ) {
        let mut onset = 0.0;
        let notes: Vec<NoteEvent> = raw
            .into_iter()
            .map(|(p, gap, dur, v)| {
                let n = NoteEvent::new(p, onset, dur, v, Instrument::Pipa);
                onset += gap;
                n
            })
            .collect();
        let first = parse_midi(&write_midi(&Score::single_track(Instrument::Pipa, notes))).unwrap();
        let second = parse_midi(&write_midi(&first)).unwrap();
        prop_assert_eq!(first, second);
    }
}
