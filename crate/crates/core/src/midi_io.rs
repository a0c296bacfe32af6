//! Standard MIDI File reading and writing, plus score segmentation.
//!
//! Reading accepts SMF type 0 and 1 with metrical timing and running status.
//! Writing always emits type 1: a tempo track followed by one track per
//! instrument, no running status.
//!
//! Channel layout on write is `instrument_index + 4 * role_index`, so a
//! file produced here round-trips both the instrument and the
//! [`NoteRole`] of every note. On read, a track whose name is an
//! instrument name assigns that instrument to all of its notes; otherwise
//! the instrument comes from `channel % 4`. Channels 12-15 read as
//! [`NoteRole::Main`].

use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::score::{Instrument, NoteEvent, NoteRole, Score, TempoChange, DEFAULT_US_PER_QUARTER};

#[derive(Debug, Error, PartialEq)]
pub enum MidiError {
    #[error("malformed MIDI file: {0}")]
    MalformedFile(String),
    #[error("unsupported MIDI file: {0}")]
    UnsupportedFormat(String),
}

/// Non-fatal irregularities found while parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum MidiWarning {
    /// A note-on with no matching note-off; closed at the end of its track.
    UnmatchedNoteOn { track: usize, channel: u8, pitch: u8, tick: u64 },
    /// A note-off with no sounding note.
    StrayNoteOff { track: usize, channel: u8, pitch: u8, tick: u64 },
    /// A note whose on and off share a tick; stretched to one tick.
    ZeroLengthNote { track: usize, channel: u8, pitch: u8, tick: u64 },
}

/// Parses an SMF byte stream into a [`Score`], logging any warnings.
pub fn parse_midi(bytes: &[u8]) -> Result<Score, MidiError> {
    let (score, warnings) = parse_midi_with_warnings(bytes)?;
    for w in &warnings {
        log::warn!("{w:?}");
    }
    Ok(score)
}

/// Parses an SMF byte stream and returns the warnings alongside the score.
pub fn parse_midi_with_warnings(bytes: &[u8]) -> Result<(Score, Vec<MidiWarning>), MidiError> {
    let mut reader = ByteReader::new(bytes);
    let (format, ntracks, division) = read_header(&mut reader)?;
    if format == 2 {
        return Err(MidiError::UnsupportedFormat("SMF type 2".into()));
    }
    if format > 2 {
        return Err(MidiError::MalformedFile(format!("unknown SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFormat("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(MidiError::MalformedFile("zero ticks per quarter".into()));
    }
    let tpq = division;

    let mut warnings = Vec::new();
    let mut tempo_ticks: BTreeMap<u64, u32> = BTreeMap::new();
    let mut tracks: BTreeMap<Instrument, Vec<NoteEvent>> = BTreeMap::new();
    let mut seen = 0usize;
    while seen < ntracks as usize {
        if reader.remaining() == 0 {
            return Err(MidiError::MalformedFile(format!(
                "expected {ntracks} tracks, found {seen}"
            )));
        }
        let id = reader.take(4)?;
        let len = reader.u32()? as usize;
        let body = reader
            .take(len)
            .map_err(|_| MidiError::MalformedFile(format!("track {seen} truncated")))?;
        if id != b"MTrk" {
            continue;
        }
        let parsed = parse_track(seen, body, &mut warnings)?;
        for (tick, tempo) in parsed.tempos {
            tempo_ticks.insert(tick, tempo);
        }
        let named = parsed.name.as_deref().and_then(|n| n.parse::<Instrument>().ok());
        if let Some(inst) = named {
            tracks.entry(inst).or_default();
        }
        for raw in parsed.notes {
            let instrument = named.unwrap_or_else(|| {
                Instrument::from_index(raw.channel % 4).unwrap_or(Instrument::Pipa)
            });
            let role = if raw.channel < 12 {
                NoteRole::from_index(raw.channel / 4).unwrap_or_default()
            } else {
                NoteRole::Main
            };
            let note = NoteEvent {
                pitch: raw.pitch,
                onset: raw.on as f64 / tpq as f64,
                duration: (raw.off - raw.on) as f64 / tpq as f64,
                velocity: raw.velocity,
                instrument,
                role,
            };
            tracks.entry(instrument).or_default().push(note);
        }
        seen += 1;
    }

    let mut score = Score {
        tracks,
        ticks_per_quarter: tpq,
        tempo_map: tempo_ticks
            .into_iter()
            .map(|(tick, us)| TempoChange {
                onset: tick as f64 / tpq as f64,
                us_per_quarter: us,
            })
            .collect(),
    };
    score.normalize();
    Ok((score, warnings))
}

struct RawNote {
    channel: u8,
    pitch: u8,
    velocity: u8,
    on: u64,
    off: u64,
}

struct ParsedTrack {
    name: Option<String>,
    tempos: Vec<(u64, u32)>,
    notes: Vec<RawNote>,
}

fn read_header(reader: &mut ByteReader<'_>) -> Result<(u16, u16, u16), MidiError> {
    let id = reader
        .take(4)
        .map_err(|_| MidiError::MalformedFile("missing header chunk".into()))?;
    if id != b"MThd" {
        return Err(MidiError::MalformedFile("bad header chunk id".into()));
    }
    let len = reader.u32()? as usize;
    if len < 6 {
        return Err(MidiError::MalformedFile(format!("header length {len} < 6")));
    }
    let header = reader
        .take(len)
        .map_err(|_| MidiError::MalformedFile("truncated header".into()))?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    Ok((format, ntracks, division))
}

fn parse_track(
    index: usize,
    body: &[u8],
    warnings: &mut Vec<MidiWarning>,
) -> Result<ParsedTrack, MidiError> {
    let mut r = ByteReader::new(body);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut pending: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    let mut out = ParsedTrack {
        name: None,
        tempos: Vec::new(),
        notes: Vec::new(),
    };
    let truncated = |_| MidiError::MalformedFile(format!("track {index} truncated"));

    while r.remaining() > 0 {
        tick += r.varlen().map_err(truncated)? as u64;
        let first = r.u8().map_err(truncated)?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            match running {
                Some(s) => {
                    r.unread();
                    s
                }
                None => {
                    return Err(MidiError::MalformedFile(format!(
                        "track {index}: data byte without running status"
                    )))
                }
            }
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.u8().map_err(truncated)?;
                let len = r.varlen().map_err(truncated)? as usize;
                let data = r.take(len).map_err(truncated)?;
                match kind {
                    0x03 if out.name.is_none() => {
                        out.name = Some(String::from_utf8_lossy(data).into_owned());
                    }
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        out.tempos.push((tick, us));
                    }
                    0x2F => break,
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.varlen().map_err(truncated)? as usize;
                r.take(len).map_err(truncated)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                let data_len = match status & 0xF0 {
                    0xC0 | 0xD0 => 1,
                    _ => 2,
                };
                let data = r.take(data_len).map_err(truncated)?;
                if data.iter().any(|b| b & 0x80 != 0) {
                    return Err(MidiError::MalformedFile(format!(
                        "track {index}: status byte inside channel message"
                    )));
                }
                let kind = status & 0xF0;
                if kind == 0x90 && data[1] > 0 {
                    pending
                        .entry((channel, data[0]))
                        .or_default()
                        .push_back((tick, data[1]));
                } else if kind == 0x80 || kind == 0x90 {
                    let pitch = data[0];
                    match pending.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front) {
                        Some((on, velocity)) => {
                            let off = if tick == on {
                                warnings.push(MidiWarning::ZeroLengthNote {
                                    track: index,
                                    channel,
                                    pitch,
                                    tick,
                                });
                                on + 1
                            } else {
                                tick
                            };
                            out.notes.push(RawNote {
                                channel,
                                pitch,
                                velocity,
                                on,
                                off,
                            });
                        }
                        None => warnings.push(MidiWarning::StrayNoteOff {
                            track: index,
                            channel,
                            pitch,
                            tick,
                        }),
                    }
                }
            }
            other => {
                return Err(MidiError::MalformedFile(format!(
                    "track {index}: unexpected status byte {other:#04x}"
                )))
            }
        }
    }

    let mut leftovers: Vec<_> = pending
        .into_iter()
        .flat_map(|((channel, pitch), q)| q.into_iter().map(move |(on, vel)| (channel, pitch, on, vel)))
        .collect();
    leftovers.sort_unstable();
    for (channel, pitch, on, velocity) in leftovers {
        warnings.push(MidiWarning::UnmatchedNoteOn {
            track: index,
            channel,
            pitch,
            tick: on,
        });
        out.notes.push(RawNote {
            channel,
            pitch,
            velocity,
            on,
            off: tick.max(on + 1),
        });
    }
    Ok(out)
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::MalformedFile("unexpected end of data".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn unread(&mut self) {
        self.pos -= 1;
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32, MidiError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::MalformedFile("variable-length quantity longer than 4 bytes".into()))
    }
}

/// Serializes a score as SMF type 1: a tempo track, then one track per
/// instrument present in `score.tracks`.
///
/// Times are rounded to the score's tick grid; notes are at least one tick
/// long. A note still sounding when the same pitch starts again on the same
/// channel is cut at the new note-on, and of several notes sharing channel,
/// pitch and start tick only the longest is kept.
pub fn write_midi(score: &Score) -> Vec<u8> {
    let tpq = score.ticks_per_quarter.max(1);
    let to_ticks = |beats: f64| (beats * tpq as f64).round().max(0.0) as u64;

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&((score.tracks.len() + 1) as u16).to_be_bytes());
    out.extend_from_slice(&tpq.to_be_bytes());

    let mut tempo_events: Vec<(u64, Vec<u8>)> = Vec::new();
    let mut tempos = score.tempo_map.clone();
    if tempos.is_empty() {
        tempos.push(TempoChange {
            onset: 0.0,
            us_per_quarter: DEFAULT_US_PER_QUARTER,
        });
    }
    for t in &tempos {
        let us = t.us_per_quarter.min(0x00FF_FFFF).to_be_bytes();
        tempo_events.push((to_ticks(t.onset), vec![0xFF, 0x51, 0x03, us[1], us[2], us[3]]));
    }
    write_track(&mut out, &tempo_events);

    for (instrument, notes) in &score.tracks {
        let mut events: Vec<(u64, Vec<u8>)> = Vec::new();
        let name = instrument.name().as_bytes();
        let mut meta = vec![0xFF, 0x03];
        push_varlen(&mut meta, name.len() as u32);
        meta.extend_from_slice(name);
        events.push((0, meta));

        // (channel, pitch) -> [(on, off, velocity)]
        let mut by_key: BTreeMap<(u8, u8), Vec<(u64, u64, u8)>> = BTreeMap::new();
        for n in notes {
            let channel = instrument.index() + 4 * n.role.index();
            let on = to_ticks(n.onset);
            let off = to_ticks(n.end()).max(on + 1);
            by_key
                .entry((channel, n.pitch.min(127)))
                .or_default()
                .push((on, off, n.velocity.clamp(1, 127)));
        }
        // (tick, is_on, channel, pitch, velocity); offs sort before ons.
        let mut timed: Vec<(u64, bool, u8, u8, u8)> = Vec::new();
        for ((channel, pitch), mut list) in by_key {
            list.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
            list.dedup_by_key(|e| e.0);
            for i in 0..list.len() {
                let (on, mut off, vel) = list[i];
                if let Some(next) = list.get(i + 1) {
                    off = off.min(next.0);
                }
                timed.push((on, true, channel, pitch, vel));
                timed.push((off, false, channel, pitch, 0x40));
            }
        }
        timed.sort_by_key(|&(tick, is_on, channel, pitch, _)| (tick, is_on, channel, pitch));
        for (tick, is_on, channel, pitch, vel) in timed {
            let status = if is_on { 0x90 } else { 0x80 } | channel;
            events.push((tick, vec![status, pitch, vel]));
        }
        write_track(&mut out, &events);
    }
    out
}

fn write_track(out: &mut Vec<u8>, events: &[(u64, Vec<u8>)]) {
    let mut body = Vec::new();
    let mut last = 0u64;
    for (tick, bytes) in events {
        push_varlen(&mut body, (tick - last) as u32);
        body.extend_from_slice(bytes);
        last = *tick;
    }
    body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 5];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { stack[i] | 0x80 } else { stack[i] });
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("max_seconds must be positive, got {0}")]
    InvalidMaxSeconds(f64),
    #[error("nianzhi span [{start}, {end}) lasts {seconds:.3} s, longer than the segment limit")]
    UnsplittableSpan { start: f64, end: f64, seconds: f64 },
    #[error("material starting at beat {onset} cannot fit in one segment")]
    UnsplittableNote { onset: f64 },
}

/// One piece of a segmented score. `score` is rebased so that
/// `start_beat` maps to beat 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_beat: f64,
    pub end_beat: f64,
    pub score: Score,
}

/// Cuts a score into pieces no longer than `max_seconds` of wall-clock time.
///
/// Cuts are placed at note onsets, never strictly inside a `[start, end)`
/// beat interval of `nianzhi_spans`, and as late as possible. A segment's
/// length runs from its start to the latest end of the notes it contains.
pub fn segment_score(
    score: &Score,
    max_seconds: f64,
    nianzhi_spans: &[(f64, f64)],
) -> Result<Vec<Segment>, SegmentError> {
    if !(max_seconds > 0.0) {
        return Err(SegmentError::InvalidMaxSeconds(max_seconds));
    }
    for &(start, end) in nianzhi_spans {
        let seconds = score.seconds_at(end) - score.seconds_at(start);
        if seconds > max_seconds {
            return Err(SegmentError::UnsplittableSpan { start, end, seconds });
        }
    }

    let mut notes: Vec<NoteEvent> = score.all_notes().copied().collect();
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    let end_beat = score.end_beat();

    let inside_span = |c: f64| nianzhi_spans.iter().any(|&(s, e)| s < c && c < e);
    let mut candidates: Vec<f64> = notes
        .iter()
        .map(|n| n.onset)
        .filter(|&c| c > 0.0 && !inside_span(c))
        .collect();
    candidates.dedup();

    let fits = |start: f64, latest_end: f64| {
        score.seconds_at(latest_end) - score.seconds_at(start) <= max_seconds
    };

    let mut segments = Vec::new();
    let mut start = 0.0;
    let mut first = 0usize; // index of first note with onset >= start
    loop {
        let rest_end = notes[first..].iter().map(NoteEvent::end).fold(start, f64::max);
        if fits(start, rest_end) {
            segments.push(make_segment(score, start, end_beat.max(start), None));
            break;
        }
        let mut chosen: Option<f64> = None;
        let mut latest_end = start;
        let mut idx = first;
        for &c in candidates.iter().filter(|&&c| c > start) {
            while idx < notes.len() && notes[idx].onset < c {
                latest_end = latest_end.max(notes[idx].end());
                idx += 1;
            }
            if fits(start, latest_end) {
                chosen = Some(c);
            } else {
                break;
            }
        }
        let Some(cut) = chosen else {
            let onset = notes.get(first).map_or(start, |n| n.onset);
            if let Some(&(s, e)) = nianzhi_spans.iter().find(|&&(s, e)| e > start && s <= onset.max(start)) {
                return Err(SegmentError::UnsplittableSpan {
                    start: s,
                    end: e,
                    seconds: score.seconds_at(e) - score.seconds_at(s),
                });
            }
            return Err(SegmentError::UnsplittableNote { onset });
        };
        segments.push(make_segment(score, start, cut, Some(cut)));
        while first < notes.len() && notes[first].onset < cut {
            first += 1;
        }
        start = cut;
    }
    Ok(segments)
}

fn make_segment(score: &Score, start: f64, end: f64, cut: Option<f64>) -> Segment {
    let in_range = |onset: f64| onset >= start && cut.is_none_or(|c| onset < c);
    let mut tracks = BTreeMap::new();
    for (inst, notes) in &score.tracks {
        let selected: Vec<NoteEvent> = notes
            .iter()
            .filter(|n| in_range(n.onset))
            .map(|n| NoteEvent {
                onset: n.onset - start,
                ..*n
            })
            .collect();
        if !selected.is_empty() || cut.is_none() {
            tracks.insert(*inst, selected);
        }
    }
    let active = score
        .tempo_map
        .iter()
        .take_while(|t| t.onset <= start)
        .last()
        .map_or(DEFAULT_US_PER_QUARTER, |t| t.us_per_quarter);
    let mut tempo_map = vec![TempoChange {
        onset: 0.0,
        us_per_quarter: active,
    }];
    tempo_map.extend(
        score
            .tempo_map
            .iter()
            .filter(|t| t.onset > start && in_range(t.onset))
            .map(|t| TempoChange {
                onset: t.onset - start,
                us_per_quarter: t.us_per_quarter,
            }),
    );
    let rebased = if start == 0.0 && cut.is_none() {
        score.clone()
    } else {
        Score {
            tracks,
            ticks_per_quarter: score.ticks_per_quarter,
            tempo_map,
        }
    };
    Segment {
        start_beat: start,
        end_beat: end,
        score: rebased,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn note(pitch: u8, onset: f64, duration: f64) -> NoteEvent {
        NoteEvent::new(pitch, onset, duration, 100, Instrument::Pipa)
    }

    #[test]
    fn single_note_round_trip() {
        let score = Score::single_track(Instrument::Pipa, vec![note(60, 0.0, 1.0)]);
        let parsed = parse_midi(&write_midi(&score)).unwrap();
        let notes = parsed.track(Instrument::Pipa);
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].pitch, 60);
        assert_eq!(notes[0].onset, 0.0);
        assert_eq!(notes[0].duration, 1.0);
        assert_eq!(notes[0].velocity, 100);
    }

    #[test]
    fn empty_score_parses() {
        let parsed = parse_midi(&write_midi(&Score::new())).unwrap();
        assert_eq!(parsed.note_count(), 0);
        // header with zero tracks
        let mut bytes = b"MThd".to_vec();
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 1, 0, 0, 1, 0xE0]);
        assert_eq!(parse_midi(&bytes).unwrap().note_count(), 0);
    }

    #[test]
    fn four_instruments_give_five_tracks() {
        let mut score = Score::new();
        for inst in Instrument::ALL {
            score
                .tracks
                .insert(inst, vec![NoteEvent::new(60, 0.0, 1.0, 90, inst)]);
        }
        let bytes = write_midi(&score);
        assert_eq!(u16::from_be_bytes([bytes[8], bytes[9]]), 1);
        assert_eq!(u16::from_be_bytes([bytes[10], bytes[11]]), 5);
        let chunks = bytes.windows(4).filter(|w| *w == b"MTrk").count();
        assert_eq!(chunks, 5);
    }

    #[test]
    fn tempo_change_writes_two_meta_events() {
        let mut score = Score::single_track(Instrument::Pipa, vec![note(60, 0.0, 12.0)]);
        score.tempo_map.push(TempoChange {
            onset: 8.0,
            us_per_quarter: 750_000,
        });
        let bytes = write_midi(&score);
        let count = bytes.windows(3).filter(|w| *w == [0xFF, 0x51, 0x03]).count();
        assert_eq!(count, 2);
        let parsed = parse_midi(&bytes).unwrap();
        assert_eq!(parsed.tempo_map, score.tempo_map);
    }

    #[test]
    fn running_status_and_velocity_zero_note_off() {
        // type 0, one track: note on C4, running-status note on with vel 0.
        let mut bytes = b"MThd".to_vec();
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0, 96]);
        let body = [0x00, 0x90, 60, 100, 0x60, 60, 0x00, 0x00, 0xFF, 0x2F, 0x00];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&body);
        let score = parse_midi(&bytes).unwrap();
        let notes = score.track(Instrument::Pipa);
        assert_eq!(notes.len(), 1);
        assert_eq!(notes[0].duration, 1.0);
    }

    #[test]
    fn unmatched_note_on_closes_at_track_end() {
        let mut bytes = b"MThd".to_vec();
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 1, 0, 96]);
        let body = [0x00, 0x90, 62, 90, 0x81, 0x40, 0xFF, 0x2F, 0x00];
        bytes.extend_from_slice(b"MTrk");
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(&body);
        let (score, warnings) = parse_midi_with_warnings(&bytes).unwrap();
        assert_eq!(score.track(Instrument::Pipa)[0].duration, 2.0);
        assert!(matches!(warnings[0], MidiWarning::UnmatchedNoteOn { pitch: 62, .. }));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_midi(b"RIFF0000"), Err(MidiError::MalformedFile(_))));
        let mut bytes = b"MThd".to_vec();
        bytes.extend_from_slice(&6u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 2, 0, 1, 0, 96]);
        assert!(matches!(parse_midi(&bytes), Err(MidiError::UnsupportedFormat(_))));

        let mut truncated = write_midi(&Score::single_track(
            Instrument::Pipa,
            vec![note(60, 0.0, 1.0)],
        ));
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(parse_midi(&truncated), Err(MidiError::MalformedFile(_))));
    }

    #[test]
    fn overlapping_same_pitch_is_cut_at_next_onset() {
        let score = Score::single_track(
            Instrument::Pipa,
            vec![note(60, 0.0, 2.0), note(60, 1.0, 2.0)],
        );
        let parsed = parse_midi(&write_midi(&score)).unwrap();
        let notes = parsed.track(Instrument::Pipa);
        assert_eq!(notes[0].duration, 1.0);
        assert_eq!(notes[1].onset, 1.0);
        assert_eq!(notes[1].duration, 2.0);
    }

    #[test]
    fn roles_survive_round_trip() {
        let notes = vec![
            note(60, 0.0, 1.0),
            note(62, 0.5, 0.25).with_role(NoteRole::Ornament),
            note(60, 1.0, 0.5).with_role(NoteRole::Nianzhi),
        ];
        let score = Score::single_track(Instrument::Dongxiao, notes);
        let parsed = parse_midi(&write_midi(&score)).unwrap();
        assert_eq!(parsed, score);
    }

    fn seconds_score(total_beats: usize) -> Score {
        // 120 bpm: 2 beats per second.
        let notes = (0..total_beats).map(|b| note(62, b as f64, 1.0)).collect();
        Score::single_track(Instrument::Pipa, notes)
    }

    #[test]
    fn three_hundred_seconds_split_in_two() {
        let score = seconds_score(600);
        assert!((score.duration_seconds() - 300.0).abs() < 1e-9);
        let segs = segment_score(&score, 180.0, &[]).unwrap();
        assert_eq!(segs.len(), 2);
        for s in &segs {
            assert!(s.score.duration_seconds() <= 180.0 + 1e-9);
        }
    }

    #[test]
    fn short_score_is_one_identical_segment() {
        let score = seconds_score(120);
        let segs = segment_score(&score, 180.0, &[]).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].score, score);
    }

    #[test]
    fn cut_avoids_span_interior() {
        // 100 beats fit in 50 s; a cut would land at beat 100 without the span.
        let score = seconds_score(200);
        let spans = [(98.0, 104.0)];
        let segs = segment_score(&score, 50.0, &spans).unwrap();
        for s in &segs[1..] {
            assert!(!spans.iter().any(|&(a, b)| a < s.start_beat && s.start_beat < b));
        }
        assert_eq!(segs[1].start_beat, 98.0);
    }

    #[test]
    fn oversized_span_is_rejected() {
        let score = seconds_score(200);
        let err = segment_score(&score, 10.0, &[(0.0, 30.0)]).unwrap_err();
        assert!(matches!(err, SegmentError::UnsplittableSpan { .. }));
        assert!(matches!(
            segment_score(&score, 0.0, &[]),
            Err(SegmentError::InvalidMaxSeconds(_))
        ));
    }
}
