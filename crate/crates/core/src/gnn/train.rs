use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::PreparedGraph;
use super::model::{batch_loss, class_weights, ModelParams};
use super::tape::Tape;
use super::tensor::Tensor2D;
use super::GnnError;

/// Stage-1 optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub clip: f64,
    pub t0: usize,
    pub t_mult: usize,
    pub eta_min: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Share of the dataset used for training when splitting.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0003,
            batch: 8,
            clip: 1.0,
            t0: 20,
            t_mult: 2,
            eta_min: 0.00002,
            patience: 35,
            min_delta: 0.0003,
            lambda1: 0.0001,
            lambda2: 0.1,
            max_epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_fraction: 432.0 / 507.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let positive = [self.lr, self.clip, self.eta_min, self.eps, self.train_fraction];
        if positive.iter().any(|&x| !(x > 0.0))
            || self.batch == 0
            || self.t0 == 0
            || self.t_mult == 0
            || self.lambda1 < 0.0
            || self.lambda2 < 0.0
            || self.min_delta < 0.0
        {
            return Err(GnnError::Config("training settings must be positive".into()));
        }
        Ok(())
    }

    /// Cosine annealing with warm restarts, by epoch. Cycles last
    /// `t0`, `t0*t_mult`, `t0*t_mult^2`, ... epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut e = epoch;
        let mut t = self.t0;
        while e >= t {
            e -= t;
            t *= self.t_mult;
        }
        self.eta_min + (self.lr - self.eta_min) * (1.0 + (PI * e as f64 / t as f64).cos()) / 2.0
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &[Tensor2D], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor2D> = params.iter().map(|p| Tensor2D::zeros(p.rows, p.cols)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor2D], grads: &[Tensor2D], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor2D], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor2D::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Shuffles and splits into (train, validation).
pub fn split_dataset<T: Clone, R: Rng + ?Sized>(items: &[T], train_fraction: f64, rng: &mut R) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    let cut = ((items.len() as f64 * train_fraction).round() as usize).clamp(1.min(items.len()), items.len());
    let train = idx[..cut].iter().map(|&i| items[i].clone()).collect();
    let val = idx[cut..].iter().map(|&i| items[i].clone()).collect();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_ce: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_ce,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.lr, e.train_loss, e.train_ce, e.val_loss));
        }
        s
    }
}

fn evaluate(model: &ModelParams, graphs: &[PreparedGraph], weights: &[f64], cfg: &TrainConfig) -> Result<f64, GnnError> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for chunk in graphs.chunks(cfg.batch) {
        let refs: Vec<&PreparedGraph> = chunk.iter().filter(|g| !g.targets.is_empty()).collect();
        if refs.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let out = batch_loss(&mut tape, &bound, model, &refs, weights, cfg.lambda1, cfg.lambda2)?;
        let n = out.targets.len();
        total += tape.scalar_value(out.terms.total) * n as f64;
        rows += n;
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

/// Trains `model` on `train`, early-stopping on `val` (or on `train` when
/// `val` is empty). Returns the parameters of the best validation epoch.
pub fn train_stage1<R: Rng + ?Sized>(
    mut model: ModelParams,
    train: &[PreparedGraph],
    val: &[PreparedGraph],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(ModelParams, TrainReport), GnnError> {
    cfg.validate()?;
    if train.iter().all(|g| g.targets.is_empty()) {
        return Err(GnnError::EmptyDataset);
    }
    let val = if val.is_empty() { train } else { val };
    let weights = class_weights(train, model.config.classes);
    let mut adam = Adam::new(model.store.values(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut wait = 0;
    let hidden = model.config.hidden;
    let classes = model.config.classes;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(rng);
        let mut center_sum = Tensor2D::zeros(classes, hidden);
        let mut center_count = vec![0usize; classes];
        let (mut loss_sum, mut ce_sum, mut rows) = (0.0, 0.0, 0usize);

        for chunk in order.chunks(cfg.batch) {
            let refs: Vec<&PreparedGraph> = chunk.iter().map(|&i| &train[i]).filter(|g| !g.targets.is_empty()).collect();
            if refs.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape);
            let out = batch_loss(&mut tape, &bound, &model, &refs, &weights, cfg.lambda1, cfg.lambda2)?;
            tape.backward(out.terms.total);
            let mut grads = bound.grads(&tape);
            if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
                return Err(GnnError::NonFiniteGradient(model.store.names()[k].clone()));
            }
            clip_global_norm(&mut grads, cfg.clip);
            adam.step(model.store.values_mut(), &grads, lr);

            let n = out.targets.len();
            loss_sum += tape.scalar_value(out.terms.total) * n as f64;
            ce_sum += tape.scalar_value(out.terms.ce) * n as f64;
            rows += n;
            let feats = tape.value(out.feats);
            for (r, &t) in out.targets.iter().enumerate() {
                for (c, x) in center_sum.row_mut(t).iter_mut().zip(feats.row(r)) {
                    *c += x;
                }
                center_count[t] += 1;
            }
        }
        for c in 0..classes {
            if center_count[c] > 0 {
                let inv = 1.0 / center_count[c] as f64;
                let mean: Vec<f64> = center_sum.row(c).iter().map(|x| x * inv).collect();
                model.class_centers.row_mut(c).copy_from_slice(&mean);
            }
        }

        let val_loss = evaluate(&model, val, &weights, cfg)?;
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / rows.max(1) as f64,
            train_ce: ce_sum / rows.max(1) as f64,
            val_loss,
        };
        log::debug!(
            "epoch {epoch}: lr {lr:.6} train {:.5} ce {:.5} val {val_loss:.5}",
            log.train_loss,
            log.train_ce
        );
        report.epochs.push(log);

        if val_loss < report.best_val_loss - cfg.min_delta {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = model.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if report.best_val_loss.is_infinite() {
        best = model;
    }
    Ok((best, report))
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the parameter tensor holding the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Exact-zero weights, where the L1 term has no derivative.
    pub skipped: usize,
}

/// Compares back-propagated gradients of the full stage-1 loss with central
/// finite differences of step `h` over every parameter entry. The relative
/// error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    model: &ModelParams,
    graphs: &[PreparedGraph],
    class_weights: &[f64],
    lambda1: f64,
    lambda2: f64,
    h: f64,
) -> Result<GradCheckReport, GnnError> {
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let loss_of = |m: &ModelParams| -> Result<f64, GnnError> {
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let out = batch_loss(&mut tape, &bound, m, &refs, class_weights, lambda1, lambda2)?;
        Ok(tape.scalar_value(out.terms.total))
    };
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let out = batch_loss(&mut tape, &bound, model, &refs, class_weights, lambda1, lambda2)?;
    tape.backward(out.terms.total);
    let grads = bound.grads(&tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped: 0,
    };
    let mut probe = model.clone();
    for (k, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(GnnError::NonFiniteGradient(model.store.names()[k].clone()));
        }
        for e in 0..g.data.len() {
            let w = model.store.values()[k].data[e];
            if lambda1 > 0.0 && w == 0.0 {
                report.skipped += 1;
                continue;
            }
            probe.store.values_mut()[k].data[e] = w + h;
            let up = loss_of(&probe)?;
            probe.store.values_mut()[k].data[e] = w - h;
            let down = loss_of(&probe)?;
            probe.store.values_mut()[k].data[e] = w;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data[e];
            if !numeric.is_finite() {
                return Err(GnnError::NonFiniteGradient(model.store.names()[k].clone()));
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{e}]", model.store.names()[k]);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ModelParams,
    train_config: TrainConfig,
}

pub fn save_checkpoint(model: &ModelParams, train_config: &TrainConfig) -> String {
    serde_json::to_string(&Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
        train_config: train_config.clone(),
    })
    .expect("checkpoint serialization cannot fail")
}

pub fn load_checkpoint(text: &str) -> Result<(ModelParams, TrainConfig), GnnError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    if value.get("version").and_then(|v| v.as_u64()) != Some(CHECKPOINT_VERSION as u64) {
        return Err(GnnError::Checkpoint(format!("expected checkpoint version {CHECKPOINT_VERSION}")));
    }
    let mut ck: Checkpoint = serde_json::from_value(value).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    ck.model.store.reindex();
    ck.model.config.validate()?;
    Ok((ck.model, ck.train_config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_closed_form() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.0003);
        assert!((c.lr_at(10) - 0.00016).abs() < 1e-12);
        assert_eq!(c.lr_at(20), 0.0003);
        assert_eq!(c.lr_at(60), 0.0003);
        assert!((c.lr_at(40) - 0.00016).abs() < 1e-12);
        assert!(c.lr_at(59) < c.lr_at(58));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor2D::from_rows(&[vec![1.0, -1.0]]).unwrap()];
        let g = vec![Tensor2D::from_rows(&[vec![0.5, -3.0]]).unwrap()];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, 0.1);
        assert!((p[0].data[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Tensor2D::from_rows(&[vec![3.0]]).unwrap(), Tensor2D::from_rows(&[vec![4.0]]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data[0] - 0.6).abs() < 1e-12 && (g[1].data[0] - 0.8).abs() < 1e-12);
        let mut small = vec![Tensor2D::scalar(0.1)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data[0], 0.1);
    }

    #[test]
    fn split_keeps_everything() {
        let items: Vec<usize> = (0..507).collect();
        let (tr, va) = split_dataset(&items, 432.0 / 507.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((tr.len(), va.len()), (432, 75));
        let mut all: Vec<usize> = tr.into_iter().chain(va).collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = ModelParams::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = train_stage1(model, &[], &[], &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(GnnError::EmptyDataset)));
    }

    #[test]
    fn zeroed_loss_has_zero_gradients() {
        let model = ModelParams::init(ModelConfig { hidden: 8, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let mut acc = tape.constant(Tensor2D::scalar(0.0));
        for &v in &bound.vars {
            let s = tape.sum_abs(v);
            acc = tape.add(acc, s).unwrap();
        }
        let zero = tape.scale(acc, 0.0);
        tape.backward(zero);
        assert!(bound.grads(&tape).iter().all(|g| g.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ModelParams::init(ModelConfig { hidden: 8, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let text = save_checkpoint(&model, &TrainConfig::default());
        let (back, cfg) = load_checkpoint(&text).unwrap();
        assert_eq!(back.store.values(), model.store.values());
        assert_eq!(back.store.position("pred.head_w"), model.store.position("pred.head_w"));
        assert_eq!(cfg, TrainConfig::default());
        assert!(load_checkpoint(&text.replacen("\"version\":1", "\"version\":9", 1)).is_err());
    }
}
