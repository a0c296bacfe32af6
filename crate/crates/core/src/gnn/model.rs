use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{PreparedGraph, Topology, INPUT_DIM};
use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor2D;
use super::GnnError;
use crate::tokenizer::PITCH_CLASSES;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    /// Trailing window widths of the feature enhancer.
    pub windows: Vec<usize>,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            heads: 4,
            layers: 3,
            leaky_slope: 0.2,
            windows: vec![1, 3, 5],
            classes: PITCH_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 || self.classes == 0 || self.windows.is_empty() {
            return Err(GnnError::DimensionMismatch("model sizes must be positive".into()));
        }
        if self.layers > 1 && self.hidden % self.heads != 0 {
            return Err(GnnError::DimensionMismatch(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            INPUT_DIM
        } else {
            self.hidden
        }
    }

    fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers
    }

    /// Per-head width: heads split `hidden` in concatenating layers and each
    /// span all of it in the averaging last layer.
    fn head_dim(&self, l: usize) -> usize {
        if self.is_last(l) {
            self.hidden
        } else {
            self.hidden / self.heads
        }
    }
}

/// One GATv2 layer's tensors, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub w_src: Tensor2D,
    pub w_dst: Tensor2D,
    /// Attention vectors of all heads side by side, `1 x heads*head_dim`.
    pub att: Tensor2D,
    pub bias: Tensor2D,
    pub heads: usize,
    /// Concatenate heads when true, average them otherwise.
    pub concat: bool,
    pub leaky_slope: f64,
}

/// Trained (or freshly initialized) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// One row per pitch class, used by the consistency term.
    pub class_centers: Tensor2D,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, GnnError> {
        config.validate()?;
        let h = config.hidden;
        let mut store = ParamStore::new();
        for l in 0..config.layers {
            let width = config.heads * config.head_dim(l);
            store.insert(format!("gat{l}.w_src"), Tensor2D::glorot(config.layer_in(l), width, rng));
            store.insert(format!("gat{l}.w_dst"), Tensor2D::glorot(config.layer_in(l), width, rng));
            store.insert(format!("gat{l}.att"), Tensor2D::glorot(1, width, rng));
            store.insert(format!("gat{l}.bias"), Tensor2D::zeros(1, h));
        }
        for &w in &config.windows {
            store.insert(format!("enh.w{w}"), Tensor2D::glorot(h, h, rng));
            store.insert(format!("enh.b{w}"), Tensor2D::zeros(1, h));
        }
        store.insert("enh.out_w", Tensor2D::glorot(h * config.windows.len(), h, rng));
        store.insert("enh.out_b", Tensor2D::zeros(1, h));
        for name in ["pred.wq", "pred.wk", "pred.wv", "pred.wo"] {
            store.insert(name, Tensor2D::glorot(h, h, rng));
        }
        store.insert("pred.head_w", Tensor2D::glorot(h, config.classes, rng));
        store.insert("pred.head_b", Tensor2D::zeros(1, config.classes));
        let class_centers = Tensor2D::zeros(config.classes, h);
        Ok(Self {
            config,
            store,
            class_centers,
        })
    }

    pub fn gat_layer(&self, l: usize) -> GatLayer {
        let get = |s: &str| self.store.get(&format!("gat{l}.{s}")).expect("layer present").clone();
        GatLayer {
            w_src: get("w_src"),
            w_dst: get("w_dst"),
            att: get("att"),
            bias: get("bias"),
            heads: self.config.heads,
            concat: !self.config.is_last(l),
            leaky_slope: self.config.leaky_slope,
        }
    }
}

/// `(heads*d) x heads` matrix summing each head's block of columns.
fn block_sum(heads: usize, d: usize) -> Tensor2D {
    let mut s = Tensor2D::zeros(heads * d, heads);
    for h in 0..heads {
        for k in 0..d {
            s.set(h * d + k, h, 1.0);
        }
    }
    s
}

/// `(heads*d) x d` matrix averaging the heads.
fn head_mean(heads: usize, d: usize) -> Tensor2D {
    let mut s = Tensor2D::zeros(heads * d, d);
    for h in 0..heads {
        for k in 0..d {
            s.set(h * d + k, k, 1.0 / heads as f64);
        }
    }
    s
}

pub struct GatVars {
    pub w_src: Var,
    pub w_dst: Var,
    pub att: Var,
    pub bias: Var,
}

/// One GATv2 layer on the tape. Returns the ELU-activated output and the
/// per-edge, per-head attention weights (`edges x heads`).
pub fn gat_layer(
    tape: &mut Tape,
    x: Var,
    topo: &Topology,
    vars: &GatVars,
    heads: usize,
    concat: bool,
    leaky_slope: f64,
) -> Result<(Var, Var), GnnError> {
    let (n, _) = tape.shape(x);
    if n != topo.nodes {
        return Err(GnnError::DimensionMismatch(format!(
            "{n} feature rows for {} graph nodes",
            topo.nodes
        )));
    }
    let width = tape.shape(vars.w_src).1;
    if width % heads != 0 {
        return Err(GnnError::DimensionMismatch("projection width not divisible by heads".into()));
    }
    let d = width / heads;
    let xs = tape.matmul(x, vars.w_src)?;
    let xd = tape.matmul(x, vars.w_dst)?;
    let from = tape.gather_rows(xs, &topo.src)?;
    let to = tape.gather_rows(xd, &topo.dst)?;
    let z = tape.add(from, to)?;
    let z = tape.leaky_relu(z, leaky_slope);
    let z = tape.mul_row(z, vars.att)?;
    let sum = tape.constant(block_sum(heads, d));
    let score = tape.matmul(z, sum)?;
    let mut w = Tensor2D::zeros(topo.edge_count(), heads);
    for (e, &weight) in topo.weight.iter().enumerate() {
        w.row_mut(e).fill(weight);
    }
    let w = tape.constant(w);
    let score = tape.mul(score, w)?;
    let alpha = tape.segment_softmax(score, &topo.dst)?;
    let spread = tape.constant(block_sum(heads, d).transpose());
    let alpha_wide = tape.matmul(alpha, spread)?;
    let msg = tape.mul(from, alpha_wide)?;
    let mut out = tape.scatter_rows(msg, &topo.dst, n)?;
    if !concat {
        let mean = tape.constant(head_mean(heads, d));
        out = tape.matmul(out, mean)?;
    }
    let out = tape.add_row(out, vars.bias)?;
    Ok((tape.elu(out), alpha))
}

/// Detached GATv2 layer: returns `(output, attention)`.
pub fn gatv2_forward(feats: &Tensor2D, topo: &Topology, layer: &GatLayer) -> Result<(Tensor2D, Tensor2D), GnnError> {
    let mut tape = Tape::new();
    let x = tape.constant(feats.clone());
    let vars = GatVars {
        w_src: tape.constant(layer.w_src.clone()),
        w_dst: tape.constant(layer.w_dst.clone()),
        att: tape.constant(layer.att.clone()),
        bias: tape.constant(layer.bias.clone()),
    };
    if tape.shape(vars.w_src).0 != feats.cols {
        return Err(GnnError::DimensionMismatch("feature width does not match layer input".into()));
    }
    let (out, alpha) = gat_layer(&mut tape, x, topo, &vars, layer.heads, layer.concat, layer.leaky_slope)?;
    Ok((tape.value(out).clone(), tape.value(alpha).clone()))
}

/// Row `i` averages rows `i-w+1..=i`, repeating row 0 where the window
/// runs off the start.
pub fn trailing_pool(m: usize, w: usize) -> Tensor2D {
    let mut p = Tensor2D::zeros(m, m);
    for i in 0..m {
        for k in 0..w {
            let j = i.saturating_sub(k);
            p.data[i * m + j] += 1.0 / w as f64;
        }
    }
    p
}

fn enhance(tape: &mut Tape, x: Var, bound: &BoundParams, cfg: &ModelConfig) -> Result<Var, GnnError> {
    let (m, h) = tape.shape(x);
    if h != cfg.hidden {
        return Err(GnnError::DimensionMismatch(format!("enhancer input width {h}, expected {}", cfg.hidden)));
    }
    let mut parts = Vec::with_capacity(cfg.windows.len());
    for &w in &cfg.windows {
        let pool = tape.constant(trailing_pool(m, w));
        let pooled = tape.matmul(pool, x)?;
        let proj = tape.matmul(pooled, bound.var(&format!("enh.w{w}")))?;
        parts.push(tape.add_row(proj, bound.var(&format!("enh.b{w}")))?);
    }
    let cat = tape.concat_cols(&parts)?;
    let out = tape.matmul(cat, bound.var("enh.out_w"))?;
    let out = tape.add_row(out, bound.var("enh.out_b"))?;
    Ok(tape.elu(out))
}

/// Detached multi-scale enhancer over a sequence of hidden vectors.
pub fn feature_enhance(x: &Tensor2D, params: &ModelParams) -> Result<Tensor2D, GnnError> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = enhance(&mut tape, xv, &bound, &params.config)?;
    Ok(tape.value(out).clone())
}

/// Causal self-attention with a residual connection, then a linear head.
/// Returns `(features, logits)`.
fn predict(tape: &mut Tape, y: Var, bound: &BoundParams, cfg: &ModelConfig) -> Result<(Var, Var), GnnError> {
    let (m, h) = tape.shape(y);
    let q = tape.matmul(y, bound.var("pred.wq"))?;
    let k = tape.matmul(y, bound.var("pred.wk"))?;
    let v = tape.matmul(y, bound.var("pred.wv"))?;
    let kt = tape.transpose(k);
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / (h as f64).sqrt());
    let mut mask = Tensor2D::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            mask.set(i, j, -1e9);
        }
    }
    let mask = tape.constant(mask);
    let s = tape.add(s, mask)?;
    let a = tape.row_softmax(s);
    let ctx = tape.matmul(a, v)?;
    let ctx = tape.matmul(ctx, bound.var("pred.wo"))?;
    let feats = tape.add(y, ctx)?;
    let logits = tape.matmul(feats, bound.var("pred.head_w"))?;
    let logits = tape.add_row(logits, bound.var("pred.head_b"))?;
    debug_assert_eq!(tape.shape(logits).1, cfg.classes);
    Ok((feats, logits))
}

/// Outputs for one graph, one row per chain-0 note in temporal order.
pub struct ForwardOut {
    pub logits: Var,
    pub feats: Var,
    /// Attention of each GAT layer, `edges x heads`.
    pub attention: Vec<Var>,
}

pub fn forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    graph: &PreparedGraph,
) -> Result<ForwardOut, GnnError> {
    if graph.features.cols != INPUT_DIM {
        return Err(GnnError::DimensionMismatch(format!(
            "feature width {}, expected {INPUT_DIM}",
            graph.features.cols
        )));
    }
    let mut x = tape.constant(graph.features.clone());
    let mut attention = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let vars = GatVars {
            w_src: bound.var(&format!("gat{l}.w_src")),
            w_dst: bound.var(&format!("gat{l}.w_dst")),
            att: bound.var(&format!("gat{l}.att")),
            bias: bound.var(&format!("gat{l}.bias")),
        };
        let (out, alpha) = gat_layer(tape, x, &graph.topology, &vars, cfg.heads, !cfg.is_last(l), cfg.leaky_slope)?;
        // Identity skip between equal-width layers.
        x = if l > 0 { tape.add(out, x)? } else { out };
        attention.push(alpha);
    }
    let seq = tape.gather_rows(x, &graph.sequence)?;
    let y = enhance(tape, seq, bound, cfg)?;
    let (feats, logits) = predict(tape, y, bound, cfg)?;
    Ok(ForwardOut {
        logits,
        feats,
        attention,
    })
}

/// Scalar pieces of the stage-1 objective.
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub l1: Var,
    pub consistency: Var,
}

/// `weighted CE + lambda1 * sum|w| + lambda2 * mean ||feat - center[target]||`.
///
/// `class_weights` is indexed by class; `params` lists every trainable
/// tensor covered by the L1 term.
#[allow(clippy::too_many_arguments)]
pub fn loss_stage1(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    feats: Var,
    centers: &Tensor2D,
    class_weights: &[f64],
    lambda1: f64,
    lambda2: f64,
    params: &[Var],
) -> Result<LossTerms, GnnError> {
    let (n, classes) = tape.shape(logits);
    if n != targets.len() || tape.shape(feats).0 != n {
        return Err(GnnError::DimensionMismatch(format!(
            "{n} logit rows, {} targets, {} feature rows",
            targets.len(),
            tape.shape(feats).0
        )));
    }
    if class_weights.len() != classes || centers.rows != classes || centers.cols != tape.shape(feats).1 {
        return Err(GnnError::DimensionMismatch("class weights or centers do not match the class count".into()));
    }
    let row_weights: Vec<f64> = targets.iter().map(|&t| class_weights[t]).collect();
    let ce = tape.weighted_cross_entropy(logits, targets, &row_weights)?;

    let mut l1 = tape.constant(Tensor2D::scalar(0.0));
    for &p in params {
        let a = tape.sum_abs(p);
        l1 = tape.add(l1, a)?;
    }

    let mut target_centers = Tensor2D::zeros(n, centers.cols);
    for (r, &t) in targets.iter().enumerate() {
        target_centers.row_mut(r).copy_from_slice(centers.row(t));
    }
    let tc = tape.constant(target_centers);
    let diff = tape.sub(feats, tc)?;
    let norms = tape.row_norm(diff);
    let total_norm = tape.sum_all(norms);
    let consistency = tape.scale(total_norm, 1.0 / n.max(1) as f64);

    let a = tape.scale(l1, lambda1);
    let b = tape.scale(consistency, lambda2);
    let total = tape.add(ce, a)?;
    let total = tape.add(total, b)?;
    Ok(LossTerms {
        total,
        ce,
        l1,
        consistency,
    })
}

/// Inverse-frequency class weights over the targets of `graphs`; classes
/// that never occur get weight 1.
pub fn class_weights(graphs: &[PreparedGraph], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for g in graphs {
        for &t in &g.targets {
            counts[t] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                1.0
            } else {
                total as f64 / (present as f64 * c as f64)
            }
        })
        .collect()
}

/// Loss and per-row outputs for a batch of graphs, all on one tape.
pub struct BatchOut {
    pub terms: LossTerms,
    pub feats: Var,
    pub logits: Var,
    pub targets: Vec<usize>,
}

/// Rows of the graph outputs that have a next-note target, i.e. all but the
/// last, concatenated across the batch.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &ModelParams,
    graphs: &[&PreparedGraph],
    class_weights: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> Result<BatchOut, GnnError> {
    let mut logit_parts = Vec::new();
    let mut feat_parts = Vec::new();
    let mut targets = Vec::new();
    for g in graphs {
        if g.targets.is_empty() {
            continue;
        }
        let out = forward(tape, bound, &model.config, g)?;
        let rows: Vec<usize> = (0..g.targets.len()).collect();
        logit_parts.push(tape.gather_rows(out.logits, &rows)?);
        feat_parts.push(tape.gather_rows(out.feats, &rows)?);
        targets.extend_from_slice(&g.targets);
    }
    if targets.is_empty() {
        return Err(GnnError::NoTargets);
    }
    let logits = tape.concat_rows(&logit_parts)?;
    let feats = tape.concat_rows(&feat_parts)?;
    let terms = loss_stage1(
        tape,
        logits,
        &targets,
        feats,
        &model.class_centers,
        class_weights,
        lambda1,
        lambda2,
        &bound.vars,
    )?;
    Ok(BatchOut {
        terms,
        feats,
        logits,
        targets,
    })
}

/// Class probabilities for every chain-0 position of one graph.
pub fn predict_probs(model: &ModelParams, graph: &PreparedGraph) -> Result<Tensor2D, GnnError> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let out = forward(&mut tape, &bound, &model.config, graph)?;
    let probs = tape.row_softmax(out.logits);
    Ok(tape.value(probs).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
        Tensor2D {
            rows: r,
            cols: c,
            data: (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn layer(input: usize, heads: usize, d: usize, concat: bool, rng: &mut ChaCha8Rng) -> GatLayer {
        let out = if concat { heads * d } else { d };
        GatLayer {
            w_src: rand_t(input, heads * d, rng),
            w_dst: rand_t(input, heads * d, rng),
            att: rand_t(1, heads * d, rng),
            bias: rand_t(1, out, rng),
            heads,
            concat,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn single_node_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = layer(3, 2, 2, true, &mut rng);
        let h = rand_t(1, 3, &mut rng);
        let (out, alpha) = gatv2_forward(&h, &Topology::from_edges(1, &[]), &l).unwrap();
        assert_eq!(alpha.data, vec![1.0, 1.0]);
        let mut expect = h.matmul(&l.w_src).unwrap();
        expect.add_assign(&l.bias);
        let expect = expect.map(|x| if x > 0.0 { x } else { x.exp_m1() });
        for (a, b) in out.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let n = 8;
            let edges: Vec<(usize, usize, f64)> = (0..16)
                .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0.1..1.0)))
                .collect();
            let topo = Topology::from_edges(n, &edges);
            let l = layer(5, 4, 3, trial % 2 == 0, &mut rng);
            let (_, alpha) = gatv2_forward(&rand_t(n, 5, &mut rng), &topo, &l).unwrap();
            for node in 0..n {
                for h in 0..4 {
                    let s: f64 = (0..topo.edge_count()).filter(|&e| topo.dst[e] == node).map(|e| alpha.get(e, h)).sum();
                    assert!((s - 1.0).abs() < 1e-6, "node {node} head {h}: {s}");
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = layer(3, 2, 2, true, &mut rng);
        let topo = Topology::from_edges(2, &[(0, 1, 1.0)]);
        assert!(matches!(gatv2_forward(&rand_t(3, 3, &mut rng), &topo, &l), Err(GnnError::DimensionMismatch(_))));
        assert!(matches!(gatv2_forward(&rand_t(2, 4, &mut rng), &topo, &l), Err(GnnError::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn permutation_equivariance(seed in 0u64..500, n in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges: Vec<(usize, usize, f64)> = (0..2 * n)
                .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0.1..1.0)))
                .collect();
            let x = rand_t(n, 4, &mut rng);
            let l = layer(4, 2, 3, seed % 2 == 0, &mut rng);
            let (out, _) = gatv2_forward(&x, &Topology::from_edges(n, &edges), &l).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            // node i moves to position perm[i]
            let mut px = Tensor2D::zeros(n, 4);
            for i in 0..n {
                px.row_mut(perm[i]).copy_from_slice(x.row(i));
            }
            let pedges: Vec<(usize, usize, f64)> = edges.iter().map(|&(a, b, w)| (perm[a], perm[b], w)).collect();
            let (pout, _) = gatv2_forward(&px, &Topology::from_edges(n, &pedges), &l).unwrap();
            for i in 0..n {
                for (a, b) in out.row(i).iter().zip(pout.row(perm[i])) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    fn small_model(hidden: usize) -> ModelParams {
        let cfg = ModelConfig {
            hidden,
            ..ModelConfig::default()
        };
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn enhancer_shapes_and_invariance() {
        let model = small_model(8);
        let row: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let constant = Tensor2D::from_rows(&vec![row; 6]).unwrap();
        let out = feature_enhance(&constant, &model).unwrap();
        assert_eq!(out.shape(), (6, 8));
        for r in 1..6 {
            for (a, b) in out.row(r).iter().zip(out.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let short = feature_enhance(&rand_t(2, 8, &mut rng), &model).unwrap();
        assert!(short.is_finite());
        assert!(feature_enhance(&rand_t(2, 7, &mut rng), &model).is_err());
    }

    #[test]
    fn trailing_pool_edge_padding() {
        let p = trailing_pool(3, 5);
        // row 0: five copies of row 0
        assert_eq!(p.row(0), &[1.0, 0.0, 0.0]);
        assert!((p.get(2, 0) - 0.6).abs() < 1e-12);
        assert!((p.get(2, 2) - 0.2).abs() < 1e-12);
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        // perfect logits, no regularizers
        let mut tape = Tape::new();
        let mut l = Tensor2D::filled(2, 3, -50.0);
        l.set(0, 1, 50.0);
        l.set(1, 2, 50.0);
        let logits = tape.constant(l.clone());
        let feats = tape.constant(Tensor2D::zeros(2, 4));
        let centers = Tensor2D::zeros(3, 4);
        let t = loss_stage1(&mut tape, logits, &[1, 2], feats, &centers, &[1.0; 3], 0.0, 0.0, &[]).unwrap();
        assert!(tape.scalar_value(t.total) <= 1e-6);
        assert_eq!(tape.scalar_value(t.consistency), 0.0);

        // lambda1 = 1 with a single weight of 2
        let mut tape = Tape::new();
        let w = tape.param(Tensor2D::scalar(2.0));
        let logits = tape.constant(l);
        let feats = tape.constant(Tensor2D::zeros(2, 4));
        let t = loss_stage1(&mut tape, logits, &[1, 2], feats, &centers, &[1.0; 3], 1.0, 0.1, &[w]).unwrap();
        assert!((tape.scalar_value(t.total) - 2.0).abs() < 1e-12);

        // feats equal to their centers
        let mut tape = Tape::new();
        let mut c = Tensor2D::zeros(3, 2);
        c.row_mut(1).copy_from_slice(&[0.5, -1.0]);
        let feats = tape.constant(Tensor2D::from_rows(&[vec![0.5, -1.0]]).unwrap());
        let logits = tape.constant(Tensor2D::zeros(1, 3));
        let t = loss_stage1(&mut tape, logits, &[1], feats, &c, &[1.0; 3], 0.0, 0.1, &[]).unwrap();
        assert_eq!(tape.scalar_value(t.consistency), 0.0);
    }

    #[test]
    fn inverse_frequency_weights() {
        let mk = |targets: Vec<usize>| PreparedGraph {
            features: Tensor2D::zeros(1, INPUT_DIM),
            topology: Topology::from_edges(1, &[]),
            sequence: vec![0],
            targets,
        };
        let w = class_weights(&[mk(vec![0, 0, 0, 1])], 3);
        // 4 targets over 2 present classes
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
        assert_eq!(w[2], 1.0);
    }
}
