use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NianzhiError, NianzhiScores, NianzhiTargets, INTENSITY_WEIGHT, POSITION_WEIGHT, SPEED_WEIGHT};
use crate::gnn::{clip_global_norm, sigmoid, Adam, BoundParams, ParamStore, Tape, Tensor2D, Var};
use crate::score::NoteEvent;

/// Per-note inputs: pitch, gap to the next onset, velocity, duration.
pub const NOTE_FEATURES: usize = 4;

/// Feature rows for a sorted line, each column scaled into `[0, 1]`.
/// The last note's gap is its own duration.
pub fn encode_notes(notes: &[NoteEvent]) -> Tensor2D {
    let mut x = Tensor2D::zeros(notes.len(), NOTE_FEATURES);
    for (i, n) in notes.iter().enumerate() {
        let gap = notes.get(i + 1).map_or(n.duration, |next| next.onset - n.onset);
        let row = x.row_mut(i);
        row[0] = n.pitch as f64 / 127.0;
        row[1] = gap.clamp(0.0, 4.0) / 4.0;
        row[2] = n.velocity as f64 / 127.0;
        row[3] = n.duration.clamp(0.0, 4.0) / 4.0;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Width of the input layers and of each recurrent direction.
    pub hidden: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { hidden: 16 }
    }
}

/// Two tanh layers, a bidirectional LSTM, one self-attention block with a
/// residual, and three sigmoid heads (position, speed, intensity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NianzhiDetector {
    pub config: DetectorConfig,
    pub store: ParamStore,
    /// False until fitted; placement then samples repetition counts.
    pub trained: bool,
}

/// Tape handles of one forward pass.
pub struct DetectorOutputs {
    /// `notes x 3` head logits.
    pub logits: Var,
    /// `notes x 2*hidden` recurrent states, forward half first.
    pub states: Var,
}

impl NianzhiDetector {
    pub fn init<R: Rng + ?Sized>(config: DetectorConfig, rng: &mut R) -> Self {
        let h = config.hidden;
        let mut store = ParamStore::new();
        store.insert("in.w1", Tensor2D::glorot(NOTE_FEATURES, h, rng));
        store.insert("in.b1", Tensor2D::zeros(1, h));
        store.insert("in.w2", Tensor2D::glorot(h, h, rng));
        store.insert("in.b2", Tensor2D::zeros(1, h));
        for dir in ["fw", "bw"] {
            store.insert(format!("lstm.{dir}.wx"), Tensor2D::glorot(h, 4 * h, rng));
            store.insert(format!("lstm.{dir}.wh"), Tensor2D::glorot(h, 4 * h, rng));
            // Forget gate starts open.
            let mut b = Tensor2D::zeros(1, 4 * h);
            b.data[h..2 * h].fill(1.0);
            store.insert(format!("lstm.{dir}.b"), b);
        }
        for name in ["att.wq", "att.wk", "att.wv"] {
            store.insert(name, Tensor2D::glorot(2 * h, 2 * h, rng));
        }
        store.insert("head.w", Tensor2D::glorot(2 * h, 3, rng));
        store.insert("head.b", Tensor2D::zeros(1, 3));
        Self {
            config,
            store,
            trained: false,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: &Tensor2D) -> Result<DetectorOutputs, NianzhiError> {
        if x.cols != NOTE_FEATURES || x.rows == 0 {
            return Err(NianzhiError::Detector(format!("input is {}x{}", x.rows, x.cols)));
        }
        forward(tape, bound, self.config.hidden, x).map_err(|e| NianzhiError::Detector(e.to_string()))
    }

    /// Head outputs for a sorted, non-empty line.
    pub fn score(&self, notes: &[NoteEvent]) -> NianzhiScores {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, &encode_notes(notes)).expect("encoded line matches the detector");
        let logits = tape.value(out.logits);
        let col = |c: usize| (0..logits.rows).map(|r| sigmoid(logits.get(r, c))).collect();
        NianzhiScores {
            position: col(0),
            speed: col(1),
            intensity: col(2),
        }
    }

    /// Recurrent states for a sorted, non-empty line.
    pub fn states(&self, notes: &[NoteEvent]) -> Tensor2D {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, &encode_notes(notes)).expect("encoded line matches the detector");
        tape.value(out.states).clone()
    }
}

fn lstm(tape: &mut Tape, bound: &BoundParams, dir: &str, seq: Var, order: &[usize], h: usize) -> Result<Var, crate::gnn::TensorError> {
    let wx = bound.var(&format!("lstm.{dir}.wx"));
    let wh = bound.var(&format!("lstm.{dir}.wh"));
    let b = bound.var(&format!("lstm.{dir}.b"));
    let mut hidden = tape.constant(Tensor2D::zeros(1, h));
    let mut cell = tape.constant(Tensor2D::zeros(1, h));
    let mut outs = vec![hidden; order.len()];
    for &t in order {
        let xt = tape.gather_rows(seq, &[t])?;
        let a = tape.matmul(xt, wx)?;
        let r = tape.matmul(hidden, wh)?;
        let z = tape.add(a, r)?;
        let z = tape.add_row(z, b)?;
        let i = tape.slice_cols(z, 0, h)?;
        let f = tape.slice_cols(z, h, h)?;
        let g = tape.slice_cols(z, 2 * h, h)?;
        let o = tape.slice_cols(z, 3 * h, h)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, cell)?;
        let write = tape.mul(i, g)?;
        cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell);
        hidden = tape.mul(o, squashed)?;
        outs[t] = hidden;
    }
    tape.concat_rows(&outs)
}

fn forward(tape: &mut Tape, bound: &BoundParams, h: usize, x: &Tensor2D) -> Result<DetectorOutputs, crate::gnn::TensorError> {
    let m = x.rows;
    let x = tape.constant(x.clone());
    let e = tape.matmul(x, bound.var("in.w1"))?;
    let e = tape.add_row(e, bound.var("in.b1"))?;
    let e = tape.tanh(e);
    let e = tape.matmul(e, bound.var("in.w2"))?;
    let e = tape.add_row(e, bound.var("in.b2"))?;
    let e = tape.tanh(e);

    let forward_order: Vec<usize> = (0..m).collect();
    let backward_order: Vec<usize> = (0..m).rev().collect();
    let fw = lstm(tape, bound, "fw", e, &forward_order, h)?;
    let bw = lstm(tape, bound, "bw", e, &backward_order, h)?;
    let states = tape.concat_cols(&[fw, bw])?;

    let q = tape.matmul(states, bound.var("att.wq"))?;
    let k = tape.matmul(states, bound.var("att.wk"))?;
    let v = tape.matmul(states, bound.var("att.wv"))?;
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / ((2 * h) as f64).sqrt());
    let a = tape.row_softmax(s);
    let ctx = tape.matmul(a, v)?;
    let z = tape.add(states, ctx)?;
    let logits = tape.matmul(z, bound.var("head.w"))?;
    let logits = tape.add_row(logits, bound.var("head.b"))?;
    Ok(DetectorOutputs { logits, states })
}

/// Three-term detector loss on the tape; see [`super::loss_nianzhi`].
pub fn detector_loss(tape: &mut Tape, logits: Var, target: &NianzhiTargets) -> Result<Var, NianzhiError> {
    let (m, c) = tape.shape(logits);
    if c != 3 || m != target.len() || target.speed.len() != m || target.intensity.len() != m {
        return Err(NianzhiError::Detector("logits and targets do not align".into()));
    }
    let err = |e: crate::gnn::TensorError| NianzhiError::Detector(e.to_string());
    let column = |v: &[f64]| Tensor2D::from_vec(m, 1, v.to_vec()).expect("one value per note");
    let position = tape.slice_cols(logits, 0, 1).map_err(err)?;
    let bce = tape
        .bce_with_logits(position, &column(&target.position), &Tensor2D::filled(m, 1, 1.0))
        .map_err(err)?;
    let mut total = tape.scale(bce, POSITION_WEIGHT);
    for (col, values, weight) in [(1, &target.speed, SPEED_WEIGHT), (2, &target.intensity, INTENSITY_WEIGHT)] {
        let z = tape.slice_cols(logits, col, 1).map_err(err)?;
        let p = tape.sigmoid(z);
        let t = tape.constant(column(values));
        let d = tape.sub(p, t).map_err(err)?;
        let sq = tape.mul(d, d).map_err(err)?;
        let s = tape.sum_all(sq);
        let term = tape.scale(s, weight / m as f64);
        total = tape.add(total, term).map_err(err)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    pub detector: DetectorConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub clip: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            epochs: 60,
            lr: 0.01,
            batch: 8,
            clip: 1.0,
        }
    }
}

/// Fits a fresh detector on `(line, targets)` pairs with Adam. Returns the
/// detector and the mean loss of every epoch.
pub fn train_detector<R: Rng + ?Sized>(
    data: &[(Vec<NoteEvent>, NianzhiTargets)],
    cfg: &DetectorTrainConfig,
    rng: &mut R,
) -> Result<(NianzhiDetector, Vec<f64>), NianzhiError> {
    let data: Vec<&(Vec<NoteEvent>, NianzhiTargets)> = data.iter().filter(|(line, _)| !line.is_empty()).collect();
    if data.is_empty() {
        return Err(NianzhiError::Detector("no training sequences".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(NianzhiError::Detector("batch and lr must be positive".into()));
    }
    let mut det = NianzhiDetector::init(cfg.detector.clone(), rng);
    let inputs: Vec<Tensor2D> = data.iter().map(|(line, _)| encode_notes(line)).collect();
    let mut adam = Adam::new(det.store.values(), 0.9, 0.999, 1e-8);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let bound = det.store.bind(&mut tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let out = det.forward(&mut tape, &bound, &inputs[i])?;
                losses.push(detector_loss(&mut tape, out.logits, &data[i].1)?);
            }
            let mut sum = losses[0];
            for &l in &losses[1..] {
                sum = tape.add(sum, l).map_err(|e| NianzhiError::Detector(e.to_string()))?;
            }
            let loss = tape.scale(sum, 1.0 / batch.len() as f64);
            epoch_loss += tape.scalar_value(loss) * batch.len() as f64;
            tape.backward(loss);
            let mut grads = bound.grads(&tape);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(NianzhiError::Detector("non-finite gradient".into()));
            }
            clip_global_norm(&mut grads, cfg.clip);
            adam.step(det.store.values_mut(), &grads, cfg.lr);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    det.trained = true;
    Ok((det, history))
}

#[cfg(test)]
mod tests {
    use super::super::{detect_positions, loss_nianzhi, pseudo_labels, NianzhiConfig};
    use super::*;
    use crate::score::Instrument;
    use crate::synth::melody_with_runs;
    use crate::tokenizer::{Mode, NianzhiDetectConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(pitches: &[u8]) -> Vec<NoteEvent> {
        pitches
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent::new(p, i as f64, 1.0, 90, Instrument::Pipa))
            .collect()
    }

    #[test]
    fn states_hold_both_directions() {
        let det = NianzhiDetector::init(DetectorConfig { hidden: 6 }, &mut ChaCha8Rng::seed_from_u64(0));
        let notes = line(&[60, 62, 64, 67, 69]);
        let s = det.states(&notes);
        assert_eq!(s.shape(), (5, 12));
        // The backward half of the last note has only seen that note, so it
        // matches the forward half of a one-note line with mirrored weights.
        let mut mirrored = det.clone();
        for part in ["wx", "wh", "b"] {
            let bw = det.store.get(&format!("lstm.bw.{part}")).unwrap().clone();
            *mirrored.store.get_mut(&format!("lstm.fw.{part}")).unwrap() = bw;
        }
        let tail = mirrored.states(&notes[4..]);
        let last = notes.len() - 1;
        for c in 0..6 {
            let lone = tail.get(0, c);
            assert!((s.get(last, 6 + c) - lone).abs() < 1e-12);
        }
        let scores = det.score(&notes);
        assert_eq!(scores.position.len(), 5);
        assert!(scores.position.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let det = NianzhiDetector::init(DetectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let notes = line(&[60, 62, 67, 67]);
        let target = NianzhiTargets {
            position: vec![0.0, 1.0, 0.0, 1.0],
            speed: vec![0.0, 0.5, 0.0, 1.0],
            intensity: vec![0.0, 0.8, 0.0, 0.7],
        };
        let mut tape = Tape::new();
        let bound = det.store.bind(&mut tape);
        let out = det.forward(&mut tape, &bound, &encode_notes(&notes)).unwrap();
        let l = detector_loss(&mut tape, out.logits, &target).unwrap();
        let plain = loss_nianzhi(&det.score(&notes), &target);
        assert!((tape.scalar_value(l) - plain).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let det = NianzhiDetector::init(DetectorConfig { hidden: 3 }, &mut ChaCha8Rng::seed_from_u64(2));
        let notes = line(&[60, 67, 64]);
        let x = encode_notes(&notes);
        let target = NianzhiTargets {
            position: vec![0.0, 1.0, 0.0],
            speed: vec![0.0, 0.5, 0.0],
            intensity: vec![0.0, 0.8, 0.0],
        };
        let eval = |d: &NianzhiDetector| {
            let mut tape = Tape::new();
            let bound = d.store.bind(&mut tape);
            let out = d.forward(&mut tape, &bound, &x).unwrap();
            let l = detector_loss(&mut tape, out.logits, &target).unwrap();
            (tape, bound, l)
        };
        let (mut tape, bound, l) = eval(&det);
        tape.backward(l);
        let grads = bound.grads(&tape);
        let h = 1e-6;
        for (p, g) in grads.iter().enumerate() {
            for k in 0..g.data.len() {
                let mut plus = det.clone();
                plus.store.values_mut()[p].data[k] += h;
                let mut minus = det.clone();
                minus.store.values_mut()[p].data[k] -= h;
                let (tp, _, lp) = eval(&plus);
                let (tm, _, lm) = eval(&minus);
                let fd = (tp.scalar_value(lp) - tm.scalar_value(lm)) / (2.0 * h);
                let err = (fd - g.data[k]).abs() / fd.abs().max(g.data[k].abs()).max(1e-6);
                assert!(err < 1e-4, "{} [{k}]: fd {fd} vs {}", det.store.names()[p], g.data[k]);
            }
        }
    }

    #[test]
    fn untrained_scores_rarely_pass_and_low_pitches_never_do() {
        let det = NianzhiDetector::init(DetectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        let notes = line(&[50, 52, 50, 52]);
        assert!(detect_positions(&notes, &det, &NianzhiConfig { threshold: 0.0, ..Default::default() }).is_empty());
        let all = detect_positions(&line(&[60, 62]), &det, &NianzhiConfig { threshold: 0.0, ..Default::default() });
        assert_eq!(all.len(), 2);
        assert!(detect_positions(&line(&[60, 62]), &det, &NianzhiConfig { threshold: 1.1, ..Default::default() }).is_empty());
    }

    #[test]
    fn training_on_pseudo_labels_reduces_loss() {
        let mode = Mode::wu_kong();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<_> = (0..16)
            .map(|_| pseudo_labels(&melody_with_runs(24, 0.9, &mode, &mut rng), &NianzhiDetectConfig::default()))
            .collect();
        let cfg = DetectorTrainConfig { epochs: 40, lr: 0.02, ..Default::default() };
        let (det, history) = train_detector(&data, &cfg, &mut rng).unwrap();
        assert!(det.trained);
        assert!(history.last().unwrap() < &(history[0] * 0.5), "{history:?}");
    }
}
