//! Model variants on top of the shared backbone.
//!
//! * `hypermv`: rule and/or KNN hyperedges, vertex-attention propagation,
//!   L1 readout, affine head.
//! * `hypermv-gnn`: the same machinery over pairwise edges.
//! * `multi-view-baseline`: temporal mean per view, concatenation, head.
//! * `single-view-baseline`: the multi-view baseline restricted to one view.
//!
//! Attention weights are stored per slot rather than per column so that a
//! model trained on `V` views can run on fewer views: the slot of a hyperedge
//! depends only on what it connects, not on how many edges precede it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{
    embed_on_tape, init_backbone, stack_frames, BackboneConfig, BackboneError, EmbeddingMatrix,
};
use crate::event_io::NormalizedVolume;
use crate::hypergraph::{
    build_incidence, build_knn_hyperedges, build_knn_pairs, build_rule_hyperedges,
    build_rule_pairs, EdgeKind, Hyperedge, HypergraphError, IncidenceStructure, PairOrigin,
    PropagationOperator,
};
use crate::numerics::{l1_weights, Bindings, NumericsError, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input does not fit the model: {0}")]
    Input(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[serde(rename = "hypermv")]
    HyperMv,
    #[serde(rename = "hypermv-gnn")]
    HyperMvGnn,
    MultiViewBaseline,
    SingleViewBaseline,
}

impl Variant {
    pub fn uses_graph(self) -> bool {
        matches!(self, Variant::HyperMv | Variant::HyperMvGnn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    Rule,
    Knn,
    Both,
}

impl Construction {
    pub fn rule(self) -> bool {
        matches!(self, Construction::Rule | Construction::Both)
    }

    pub fn knn(self) -> bool {
        matches!(self, Construction::Knn | Construction::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub construction: Construction,
    pub attention: bool,
    pub k: usize,
    pub layers: usize,
    pub backbone: BackboneConfig,
    /// Temporal windows `T`.
    pub windows: usize,
    pub classes: usize,
    /// Views the model is built for; inputs may have fewer.
    pub views: usize,
}

pub const THETA_PREFIX: &str = "hypergraph.theta";
pub const VERTEX_WEIGHT: &str = "hypergraph.vertex_weight";
pub const EDGE_WEIGHT: &str = "hypergraph.edge_weight";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

pub fn theta_name(layer: usize) -> String {
    format!("{THETA_PREFIX}{layer}")
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.windows == 0 || self.views == 0 {
            return fail(format!("T={} V={}", self.windows, self.views));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.backbone.channels.is_empty() {
            return fail("backbone has no blocks".into());
        }
        if self.variant == Variant::SingleViewBaseline && self.views != 1 {
            return fail("single-view baseline takes exactly one view".into());
        }
        if self.variant.uses_graph() {
            if self.layers == 0 {
                return fail("need at least one propagation layer".into());
            }
            if self.construction.knn() && self.k == 0 {
                return fail("k must be positive".into());
            }
            if self.views * self.windows < 2 {
                return fail("the graph needs at least two vertices".into());
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.backbone.embedding_dim()
    }

    pub fn head_inputs(&self) -> usize {
        match self.variant {
            Variant::MultiViewBaseline => self.views * self.dim(),
            _ => self.dim(),
        }
    }

    fn time_slots(&self) -> usize {
        match self.variant {
            Variant::HyperMvGnn => self.views * self.windows.saturating_sub(1),
            _ if self.windows >= 2 => self.views,
            _ => 0,
        }
    }

    fn cross_pairs(&self) -> usize {
        self.views * (self.views - 1) / 2
    }

    fn view_slots(&self) -> usize {
        match self.variant {
            Variant::HyperMvGnn => self.windows * self.cross_pairs(),
            _ if self.views >= 2 => self.windows,
            _ => 0,
        }
    }

    fn rule_slots(&self) -> usize {
        if self.construction.rule() {
            self.time_slots() + self.view_slots()
        } else {
            0
        }
    }

    /// Length of the `W_e` parameter.
    pub fn edge_slots(&self) -> usize {
        let n = self.views * self.windows;
        let knn = match self.variant {
            Variant::HyperMvGnn => n * self.k,
            _ => n,
        };
        self.rule_slots() + if self.construction.knn() { knn } else { 0 }
    }

    /// `W_e` slot of an edge built for an input of `views <= self.views`.
    fn edge_slot(&self, edge: &Hyperedge) -> usize {
        let t = self.windows;
        match edge.kind {
            EdgeKind::TimeConsistent { view } => view,
            EdgeKind::ViewConsistent { window } => self.time_slots() + window - 1,
            EdgeKind::Knn { center } => self.rule_slots() + center.flat(t),
            EdgeKind::Pairwise { a, b, origin } => match origin {
                PairOrigin::Temporal => a.view * (t - 1) + (a.window - 1),
                PairOrigin::CrossView => {
                    let v = self.views;
                    // index of (a, b) among the pairs a < b in lexicographic order
                    let pair = a.view * (2 * v - a.view - 1) / 2 + (b.view - a.view - 1);
                    self.time_slots() + (a.window - 1) * self.cross_pairs() + pair
                }
                // `a` is the vertex that chose `b`, see `build_model_edges`
                PairOrigin::Knn { rank } => self.rule_slots() + a.flat(t) * self.k + rank,
            },
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// Fresh parameters: Kaiming backbone, Xavier `Theta` and head, zero bias,
/// attention weights at one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let mut params = init_backbone(&cfg.backbone, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let d = cfg.dim();
    if cfg.variant.uses_graph() {
        for l in 0..cfg.layers {
            params.insert(theta_name(l), xavier(&mut rng, d, d));
        }
        if cfg.attention {
            params.insert(VERTEX_WEIGHT, Tensor::filled(&[cfg.views * cfg.windows, 1], 1.0));
            params.insert(EDGE_WEIGHT, Tensor::filled(&[cfg.edge_slots(), 1], 1.0));
        }
    }
    params.insert(HEAD_WEIGHT, xavier(&mut rng, cfg.head_inputs(), cfg.classes));
    params.insert(HEAD_BIAS, Tensor::zeros(&[cfg.classes]));
    Ok(params)
}

/// Edges of the graph variants for the current embeddings, in incidence
/// column order. KNN size is capped at `N - 1`.
pub fn build_model_edges(
    cfg: &ModelConfig,
    emb: &EmbeddingMatrix,
) -> Result<Vec<Hyperedge>, ModelError> {
    let n = emb.vertex_count();
    let k = cfg.k.min(n.saturating_sub(1));
    let mut edges = Vec::new();
    match cfg.variant {
        Variant::HyperMv => {
            if cfg.construction.rule() {
                edges.extend(build_rule_hyperedges(emb.views, emb.windows));
            }
            if cfg.construction.knn() && k > 0 {
                edges.extend(build_knn_hyperedges(emb, k)?);
            }
        }
        Variant::HyperMvGnn => {
            if cfg.construction.rule() {
                edges.extend(build_rule_pairs(emb.views, emb.windows));
            }
            if cfg.construction.knn() && k > 0 {
                edges.extend(build_knn_pairs(emb, k)?.into_iter().enumerate().map(
                    |(i, mut e)| {
                        // record the choosing vertex as `a`
                        let center = i / k;
                        if let EdgeKind::Pairwise { a, b, origin } = e.kind {
                            let (a, b) = if a.flat(emb.windows) == center { (a, b) } else { (b, a) };
                            e.kind = EdgeKind::Pairwise { a, b, origin };
                        }
                        e
                    },
                ));
            }
        }
        _ => {
            return Err(ModelError::Config(format!(
                "{:?} does not build a graph",
                cfg.variant
            )))
        }
    }
    Ok(edges)
}

/// Values recorded by one forward pass.
pub struct Forward {
    pub logits: Var,
    pub embeddings: Var,
    /// Graph variants only.
    pub graph: Option<GraphTrace>,
}

pub struct GraphTrace {
    pub edges: Vec<Hyperedge>,
    pub incidence: IncidenceStructure,
    pub features: Var,
}

/// Records the whole model for one sample of `volumes.len()` views.
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bindings: &Bindings,
    volumes: &[&NormalizedVolume],
) -> Result<Forward, ModelError> {
    let views = volumes.len();
    if views == 0 || views > cfg.views {
        return Err(ModelError::Input(format!(
            "{views} views for a {}-view model",
            cfg.views
        )));
    }
    if volumes[0].windows != cfg.windows {
        return Err(ModelError::Input(format!(
            "{} windows, model expects {}",
            volumes[0].windows, cfg.windows
        )));
    }
    let frames = tape.constant(stack_frames(volumes)?);
    let emb = embed_on_tape(tape, frames, &cfg.backbone, bindings)?;
    let head_w = bindings.var(HEAD_WEIGHT)?;
    let head_b = bindings.var(HEAD_BIAS)?;
    let (pooled, graph) = match cfg.variant {
        Variant::HyperMv | Variant::HyperMvGnn => {
            let matrix = EmbeddingMatrix::new(views, cfg.windows, tape.value(emb).clone())?;
            let edges = build_model_edges(cfg, &matrix)?;
            let incidence = build_incidence(&edges, matrix.vertex_count())?;
            let op = PropagationOperator::record(tape, &incidence)?;
            let (wv, we) = if cfg.attention {
                let wv = tape.gather_rows(
                    bindings.var(VERTEX_WEIGHT)?,
                    (0..matrix.vertex_count()).collect(),
                )?;
                let slots = edges.iter().map(|e| cfg.edge_slot(e)).collect();
                let we = tape.gather_rows(bindings.var(EDGE_WEIGHT)?, slots)?;
                (wv, we)
            } else {
                (
                    tape.constant(Tensor::filled(&[incidence.vertices()], 1.0)),
                    tape.constant(Tensor::filled(&[incidence.edges()], 1.0)),
                )
            };
            let mut x = emb;
            for l in 0..cfg.layers {
                let theta = bindings.var(&theta_name(l))?;
                x = op.layer(tape, x, theta, wv, we, l + 1 < cfg.layers)?;
            }
            let pooled = tape.l1_readout(x)?;
            (
                pooled,
                Some(GraphTrace {
                    edges,
                    incidence,
                    features: x,
                }),
            )
        }
        Variant::MultiViewBaseline | Variant::SingleViewBaseline => {
            // fewer input views than slots: repeat them cyclically
            let t = cfg.windows;
            let rows = (0..cfg.views)
                .flat_map(|v| (0..t).map(move |w| (v % views) * t + w))
                .collect();
            let filled = tape.gather_rows(emb, rows)?;
            let means = tape.block_mean(filled, t)?;
            (tape.reshape(means, &[1, cfg.views * cfg.dim()])?, None)
        }
    };
    let logits = tape.matmul(pooled, head_w)?;
    let logits = tape.add_row_bias(logits, head_b)?;
    Ok(Forward {
        logits,
        embeddings: emb,
        graph,
    })
}

/// Class scores for one sample.
pub fn logits(
    cfg: &ModelConfig,
    params: &ParamSet,
    volumes: &[&NormalizedVolume],
) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let bindings = Bindings::bind(params, &mut tape, false);
    let out = forward_on_tape(&mut tape, cfg, &bindings, volumes)?;
    Ok(tape.value(out.logits).data().to_vec())
}

/// Result of one forward and backward pass.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub gradients: ParamSet,
}

/// Cross-entropy of one sample and its gradient for every parameter.
pub fn loss_and_gradients(
    cfg: &ModelConfig,
    params: &ParamSet,
    volumes: &[&NormalizedVolume],
    label: usize,
) -> Result<SampleGradient, ModelError> {
    let mut tape = Tape::new();
    let bindings = Bindings::bind(params, &mut tape, true);
    let out = forward_on_tape(&mut tape, cfg, &bindings, volumes)?;
    let loss = tape.cross_entropy(out.logits, label)?;
    let mut grads = tape.backward(loss)?;
    Ok(SampleGradient {
        loss: tape.value(loss).data()[0],
        logits: tape.value(out.logits).data().to_vec(),
        gradients: bindings.gradients(&mut grads, &tape),
    })
}

/// Loss only, for finite differences.
pub fn loss(
    cfg: &ModelConfig,
    params: &ParamSet,
    volumes: &[&NormalizedVolume],
    label: usize,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bindings = Bindings::bind(params, &mut tape, false);
    let out = forward_on_tape(&mut tape, cfg, &bindings, volumes)?;
    let loss = tape.cross_entropy(out.logits, label)?;
    Ok(tape.value(loss).data()[0])
}

/// Debug view of one forward pass.
#[derive(Debug, Clone, Serialize)]
pub struct Inspection {
    pub variant: Variant,
    pub views: usize,
    pub windows: usize,
    pub edges: Vec<Hyperedge>,
    /// `[N, M]`, zero for baselines.
    pub h_shape: [usize; 2],
    pub vertex_degrees: Vec<f64>,
    pub edge_degrees: Vec<f64>,
    /// Readout weights per vertex.
    pub omega: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn inspect(
    cfg: &ModelConfig,
    params: &ParamSet,
    volumes: &[&NormalizedVolume],
) -> Result<Inspection, ModelError> {
    let mut tape = Tape::new();
    let bindings = Bindings::bind(params, &mut tape, false);
    let out = forward_on_tape(&mut tape, cfg, &bindings, volumes)?;
    let logits = tape.value(out.logits).data().to_vec();
    let mut ins = Inspection {
        variant: cfg.variant,
        views: volumes.len(),
        windows: cfg.windows,
        edges: Vec::new(),
        h_shape: [0, 0],
        vertex_degrees: Vec::new(),
        edge_degrees: Vec::new(),
        omega: Vec::new(),
        logits,
    };
    if let Some(g) = out.graph {
        ins.h_shape = [g.incidence.vertices(), g.incidence.edges()];
        ins.vertex_degrees = g.incidence.vertex_degrees;
        ins.edge_degrees = g.incidence.edge_degrees;
        ins.omega = l1_weights(tape.value(g.features));
        ins.edges = g.edges;
    }
    Ok(ins)
}
