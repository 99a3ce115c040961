//! Multi-view hypergraph construction and vertex-attention propagation.
//!
//! Vertices are the `(view, window)` embeddings in v-major order. Rule edges
//! tie together all windows of one view (time-consistent) and all views of one
//! window (view-consistent); KNN edges join each vertex with its `k` nearest
//! embeddings regardless of view or time.
//!
//! One propagation layer computes
//!
//! ```text
//! X' = act(Dv^-1/2 H We De^-1 H^T Wv Dv^-1/2 X Theta)
//! ```
//!
//! with `We`, `Wv` diagonal attention weights and `Dv`, `De` the unweighted
//! vertex and hyperedge degrees of the incidence matrix `H`.

use serde::Serialize;
use thiserror::Error;

use crate::backbone::EmbeddingMatrix;
use crate::numerics::{l1_weights, NumericsError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("hyperedge {edge} references vertex {vertex} but only {n} vertices exist")]
    MemberOutOfRange { edge: usize, vertex: usize, n: usize },
    #[error("vertex {0} belongs to no hyperedge")]
    IsolatedVertex(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Vertex `(view, window)`, window in `1..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VertexId {
    pub view: usize,
    pub window: usize,
}

impl VertexId {
    pub fn new(view: usize, window: usize) -> Self {
        Self { view, window }
    }

    pub fn flat(self, windows: usize) -> usize {
        self.view * windows + (self.window - 1)
    }

    pub fn from_flat(index: usize, windows: usize) -> Self {
        Self {
            view: index / windows,
            window: index % windows + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "origin")]
pub enum PairOrigin {
    Temporal,
    CrossView,
    Knn { rank: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EdgeKind {
    TimeConsistent { view: usize },
    ViewConsistent { window: usize },
    Knn { center: VertexId },
    Pairwise {
        a: VertexId,
        b: VertexId,
        #[serde(flatten)]
        origin: PairOrigin,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hyperedge {
    #[serde(flatten)]
    pub kind: EdgeKind,
    /// Flat vertex indices, ascending.
    pub members: Vec<usize>,
}

impl Hyperedge {
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, vertex: usize) -> bool {
        self.members.binary_search(&vertex).is_ok()
    }
}

/// One time-consistent edge per view (when `T >= 2`) followed by one
/// view-consistent edge per window (when `V >= 2`).
pub fn build_rule_hyperedges(views: usize, windows: usize) -> Vec<Hyperedge> {
    let mut edges = Vec::new();
    if windows >= 2 {
        for v in 0..views {
            edges.push(Hyperedge {
                kind: EdgeKind::TimeConsistent { view: v },
                members: (0..windows).map(|t| v * windows + t).collect(),
            });
        }
    }
    if views >= 2 {
        for t in 1..=windows {
            edges.push(Hyperedge {
                kind: EdgeKind::ViewConsistent { window: t },
                members: (0..views).map(|v| v * windows + (t - 1)).collect(),
            });
        }
    }
    edges
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest other rows of `features` for every row, by Euclidean
/// distance with ties going to the smaller index.
pub fn nearest_neighbors(features: &Tensor, k: usize) -> Result<Vec<Vec<usize>>, HypergraphError> {
    let n = features.rows();
    if k == 0 {
        return Err(HypergraphError::Parameter("k must be >= 1".into()));
    }
    if k >= n {
        return Err(HypergraphError::Parameter(format!(
            "k = {k} needs more than {n} vertices"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(features.row(i), features.row(j)), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect())
}

/// One KNN hyperedge per vertex: the vertex and its `k` nearest neighbours.
pub fn build_knn_hyperedges(
    emb: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<Hyperedge>, HypergraphError> {
    let nbrs = nearest_neighbors(&emb.features, k)?;
    Ok(nbrs
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut members = nb;
            members.push(i);
            members.sort_unstable();
            Hyperedge {
                kind: EdgeKind::Knn {
                    center: VertexId::from_flat(i, emb.windows),
                },
                members,
            }
        })
        .collect())
}

fn pair(a: usize, b: usize, windows: usize, origin: PairOrigin) -> Hyperedge {
    Hyperedge {
        kind: EdgeKind::Pairwise {
            a: VertexId::from_flat(a, windows),
            b: VertexId::from_flat(b, windows),
            origin,
        },
        members: vec![a.min(b), a.max(b)],
    }
}

/// Ordinary-graph edges as cardinality-2 hyperedges: temporal neighbours
/// within a view, then all cross-view pairs per window.
pub fn build_rule_pairs(views: usize, windows: usize) -> Vec<Hyperedge> {
    let mut edges = Vec::new();
    for v in 0..views {
        for t in 0..windows.saturating_sub(1) {
            let a = v * windows + t;
            edges.push(pair(a, a + 1, windows, PairOrigin::Temporal));
        }
    }
    for t in 0..windows {
        for a in 0..views {
            for b in a + 1..views {
                edges.push(pair(
                    a * windows + t,
                    b * windows + t,
                    windows,
                    PairOrigin::CrossView,
                ));
            }
        }
    }
    edges
}

/// `k` vertex-to-vertex edges per vertex towards its nearest neighbours.
pub fn build_knn_pairs(emb: &EmbeddingMatrix, k: usize) -> Result<Vec<Hyperedge>, HypergraphError> {
    let nbrs = nearest_neighbors(&emb.features, k)?;
    Ok(nbrs
        .into_iter()
        .enumerate()
        .flat_map(|(i, nb)| {
            nb.into_iter()
                .enumerate()
                .map(move |(rank, j)| (i, j, rank))
        })
        .map(|(i, j, rank)| pair(i, j, emb.windows, PairOrigin::Knn { rank }))
        .collect())
}

/// Full graph edge list for the pairwise variant: rule pairs then KNN pairs.
pub fn build_graph_edges(
    emb: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<Hyperedge>, HypergraphError> {
    let mut edges = build_rule_pairs(emb.views, emb.windows);
    edges.extend(build_knn_pairs(emb, k)?);
    Ok(edges)
}

/// Incidence matrix `H` (N x M) with unweighted degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceStructure {
    pub h: Tensor,
    pub vertex_degrees: Vec<f64>,
    pub edge_degrees: Vec<f64>,
}

impl IncidenceStructure {
    pub fn vertices(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn edges(&self) -> usize {
        self.h.shape()[1]
    }
}

/// Columns follow the order of `edges`.
pub fn build_incidence(
    edges: &[Hyperedge],
    n: usize,
) -> Result<IncidenceStructure, HypergraphError> {
    let m = edges.len();
    let mut h = Tensor::zeros(&[n, m]);
    for (e, edge) in edges.iter().enumerate() {
        for &v in &edge.members {
            if v >= n {
                return Err(HypergraphError::MemberOutOfRange {
                    edge: e,
                    vertex: v,
                    n,
                });
            }
            h.data_mut()[v * m + e] = 1.0;
        }
    }
    let vertex_degrees = (0..n).map(|i| h.row(i).iter().sum()).collect();
    let edge_degrees = edges.iter().map(|e| e.members.len() as f64).collect();
    Ok(IncidenceStructure {
        h,
        vertex_degrees,
        edge_degrees,
    })
}

/// Constant factors of the propagation operator, precomputed once per graph.
pub struct PropagationOperator {
    h: Var,
    h_t: Var,
    dv_inv_sqrt: Var,
    de_inv: Var,
}

impl PropagationOperator {
    pub fn record(tape: &mut Tape, inc: &IncidenceStructure) -> Result<Self, HypergraphError> {
        if let Some(i) = inc.vertex_degrees.iter().position(|&d| d <= 0.0) {
            return Err(HypergraphError::IsolatedVertex(i));
        }
        let dv: Vec<f64> = inc.vertex_degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
        let de: Vec<f64> = inc.edge_degrees.iter().map(|d| 1.0 / d).collect();
        Ok(Self {
            h: tape.constant(inc.h.clone()),
            h_t: tape.constant(inc.h.transpose()?),
            dv_inv_sqrt: tape.constant(Tensor::vector(dv)),
            de_inv: tape.constant(Tensor::vector(de)),
        })
    }

    /// One layer; `vertex_weights` has N entries and `edge_weights` M.
    pub fn layer(
        &self,
        tape: &mut Tape,
        x: Var,
        theta: Var,
        vertex_weights: Var,
        edge_weights: Var,
        relu: bool,
    ) -> Result<Var, HypergraphError> {
        let y = tape.matmul(x, theta)?;
        let y = tape.scale_rows(y, self.dv_inv_sqrt)?;
        let y = tape.scale_rows(y, vertex_weights)?;
        let e = tape.matmul(self.h_t, y)?;
        let e = tape.scale_rows(e, self.de_inv)?;
        let e = tape.scale_rows(e, edge_weights)?;
        let z = tape.matmul(self.h, e)?;
        let z = tape.scale_rows(z, self.dv_inv_sqrt)?;
        Ok(if relu { tape.relu(z) } else { z })
    }
}

/// Per-layer `Theta` and the attention diagonals shared by every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationParams {
    pub thetas: Vec<Tensor>,
    pub edge_weights: Vec<f64>,
    pub vertex_weights: Vec<f64>,
}

impl PropagationParams {
    /// Identity attention (all ones) sized for `inc`.
    pub fn with_unit_attention(thetas: Vec<Tensor>, inc: &IncidenceStructure) -> Self {
        Self {
            thetas,
            edge_weights: vec![1.0; inc.edges()],
            vertex_weights: vec![1.0; inc.vertices()],
        }
    }
}

/// Applies `L = thetas.len()` layers, ReLU on all but the last.
pub fn propagate(
    x: &Tensor,
    inc: &IncidenceStructure,
    params: &PropagationParams,
) -> Result<Tensor, HypergraphError> {
    if params.thetas.is_empty() {
        return Err(HypergraphError::Parameter("need at least one layer".into()));
    }
    if params.vertex_weights.len() != inc.vertices() || params.edge_weights.len() != inc.edges() {
        return Err(HypergraphError::Parameter(format!(
            "attention sized {}x{} for a {}x{} incidence matrix",
            params.vertex_weights.len(),
            params.edge_weights.len(),
            inc.vertices(),
            inc.edges()
        )));
    }
    if x.rows() != inc.vertices() {
        return Err(HypergraphError::Parameter(format!(
            "{} feature rows for {} vertices",
            x.rows(),
            inc.vertices()
        )));
    }
    let mut tape = Tape::new();
    let op = PropagationOperator::record(&mut tape, inc)?;
    let wv = tape.constant(Tensor::vector(params.vertex_weights.clone()));
    let we = tape.constant(Tensor::vector(params.edge_weights.clone()));
    let mut h = tape.constant(x.clone());
    let last = params.thetas.len() - 1;
    for (l, theta) in params.thetas.iter().enumerate() {
        let theta = tape.constant(theta.clone());
        h = op.layer(&mut tape, h, theta, wv, we, l < last)?;
    }
    Ok(tape.value(h).clone())
}

/// Graph-level embedding and the per-vertex weights used to form it.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub embedding: Vec<f64>,
    pub weights: Vec<f64>,
}

/// L1-proportional vertex weighting; uniform weights when every row is zero.
pub fn readout(x: &Tensor) -> Result<Readout, HypergraphError> {
    let [n, d] = x.dims2("readout")?;
    if n == 0 {
        return Err(HypergraphError::Parameter("readout of zero vertices".into()));
    }
    let weights = l1_weights(x);
    let mut embedding = vec![0.0; d];
    for (i, w) in weights.iter().enumerate() {
        for (o, v) in embedding.iter_mut().zip(x.row(i)) {
            *o += w * v;
        }
    }
    Ok(Readout { embedding, weights })
}

/// Affine head: `x_g (d) * weight (d x C) + bias (C)`.
pub fn classify(x_g: &[f64], weight: &Tensor, bias: &[f64]) -> Result<Vec<f64>, HypergraphError> {
    let [d, c] = weight.dims2("classify")?;
    if x_g.len() != d || bias.len() != c {
        return Err(HypergraphError::Numerics(NumericsError::Shape {
            op: "classify",
            msg: format!("x_g {} / bias {} vs head {d}x{c}", x_g.len(), bias.len()),
        }));
    }
    let x = Tensor::new(vec![1, d], x_g.to_vec())?;
    let mut logits = x.matmul(weight)?.into_data();
    for (l, b) in logits.iter_mut().zip(bias) {
        *l += b;
    }
    Ok(logits)
}

/// Multi-view baseline fusion: temporal mean per view, concatenated in view
/// order, then the affine head (`V*d x C`).
pub fn baseline_forward(
    emb: &EmbeddingMatrix,
    weight: &Tensor,
    bias: &[f64],
) -> Result<Vec<f64>, HypergraphError> {
    let mut tape = Tape::new();
    let x = tape.constant(emb.features.clone());
    let means = tape.block_mean(x, emb.windows)?;
    let flat = tape.reshape(means, &[1, emb.views * emb.dim()])?;
    classify(tape.value(flat).data(), weight, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rule_edge_counts() {
        let edges = build_rule_hyperedges(6, 9);
        assert_eq!(edges.len(), 15);
        assert_eq!(edges.iter().filter(|e| e.cardinality() == 9).count(), 6);
        assert_eq!(edges.iter().filter(|e| e.cardinality() == 6).count(), 9);

        let single_view = build_rule_hyperedges(1, 5);
        assert_eq!(single_view.len(), 1);
        assert_eq!(single_view[0].kind, EdgeKind::TimeConsistent { view: 0 });

        let single_window = build_rule_hyperedges(2, 1);
        assert_eq!(single_window.len(), 1);
        assert_eq!(single_window[0].kind, EdgeKind::ViewConsistent { window: 1 });
        assert!(build_rule_hyperedges(1, 1).is_empty());
    }

    #[test]
    fn knn_zero_distance_symmetry() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 5.0]]).unwrap();
        let emb = EmbeddingMatrix::new(1, 3, f).unwrap();
        let edges = build_knn_hyperedges(&emb, 1).unwrap();
        assert_eq!(edges[0].members, vec![0, 1]);
        assert_eq!(edges[1].members, vec![0, 1]);
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(nearest_neighbors(&f, 1).unwrap()[0], vec![1]);
        assert_eq!(nearest_neighbors(&f, 2).unwrap()[0], vec![1, 2]);
    }

    #[test]
    fn knn_rejects_large_k() {
        let f = Tensor::zeros(&[3, 2]);
        assert!(nearest_neighbors(&f, 3).is_err());
        assert!(nearest_neighbors(&f, 0).is_err());
    }

    #[test]
    fn single_edge_incidence() {
        let e = Hyperedge {
            kind: EdgeKind::Knn {
                center: VertexId::new(0, 1),
            },
            members: vec![0, 1],
        };
        let inc = build_incidence(&[e.clone()], 2).unwrap();
        assert_eq!(inc.h.data(), &[1.0, 1.0]);
        assert_eq!(inc.vertex_degrees, vec![1.0, 1.0]);
        assert_eq!(inc.edge_degrees, vec![2.0]);
        assert!(matches!(
            build_incidence(&[e], 1),
            Err(HypergraphError::MemberOutOfRange { vertex: 1, .. })
        ));
    }

    #[test]
    fn two_vertex_operator_averages() {
        let e = Hyperedge {
            kind: EdgeKind::Knn {
                center: VertexId::new(0, 1),
            },
            members: vec![0, 1],
        };
        let inc = build_incidence(&[e], 2).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, -2.0]]).unwrap();
        let params = PropagationParams::with_unit_attention(vec![Tensor::identity(2)], &inc);
        let out = propagate(&x, &inc, &params).unwrap();
        assert_eq!(out.data(), &[2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn isolated_vertex_is_error() {
        let e = Hyperedge {
            kind: EdgeKind::Knn {
                center: VertexId::new(0, 1),
            },
            members: vec![0, 1],
        };
        let inc = build_incidence(&[e], 3).unwrap();
        let params = PropagationParams::with_unit_attention(vec![Tensor::identity(1)], &inc);
        assert!(matches!(
            propagate(&Tensor::zeros(&[3, 1]), &inc, &params),
            Err(HypergraphError::IsolatedVertex(2))
        ));
    }

    #[test]
    fn readout_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]).unwrap();
        let r = readout(&x).unwrap();
        assert_eq!(r.weights, vec![0.5, 0.5]);
        assert_eq!(r.embedding, vec![1.5, 0.5]);

        let same = Tensor::from_rows(&vec![vec![0.3, -0.7]; 4]).unwrap();
        let r = readout(&same).unwrap();
        for (a, b) in r.embedding.iter().zip([0.3, -0.7]) {
            assert!((a - b).abs() < 1e-15);
        }

        let r = readout(&Tensor::zeros(&[5, 2])).unwrap();
        assert_eq!(r.weights, vec![0.2; 5]);
        assert_eq!(r.embedding, vec![0.0, 0.0]);
    }

    #[test]
    fn classify_examples() {
        let w = Tensor::identity(3);
        assert_eq!(classify(&[0.0; 3], &w, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(classify(&[4.0, 5.0, 6.0], &w, &[0.0; 3]).unwrap(), vec![4.0, 5.0, 6.0]);
        assert!(classify(&[1.0; 2], &w, &[0.0; 3]).is_err());
    }

    #[test]
    fn graph_edge_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = EmbeddingMatrix::new(2, 3, random(6, 4, &mut rng)).unwrap();
        let rule = build_rule_pairs(2, 3);
        let temporal = rule
            .iter()
            .filter(|e| matches!(e.kind, EdgeKind::Pairwise { origin: PairOrigin::Temporal, .. }))
            .count();
        assert_eq!(temporal, 4);
        assert_eq!(rule.len() - temporal, 3);
        let all = build_graph_edges(&emb, 2).unwrap();
        assert_eq!(all.len(), 7 + 6 * 2);
        assert!(all.iter().all(|e| e.cardinality() == 2));
    }

    #[test]
    fn baseline_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let one = EmbeddingMatrix::new(1, 4, random(4, 3, &mut rng)).unwrap();
        let w = random(3, 5, &mut rng);
        let logits = baseline_forward(&one, &w, &[0.0; 5]).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|c| (1..=4).map(|t| one.vertex(0, t)[c]).sum::<f64>() / 4.0)
            .collect();
        let expected = classify(&mean, &w, &[0.0; 5]).unwrap();
        for (a, b) in logits.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }

        let three = EmbeddingMatrix::new(3, 4, random(12, 3, &mut rng)).unwrap();
        let w3 = random(9, 5, &mut rng);
        assert_eq!(baseline_forward(&three, &w3, &[0.0; 5]).unwrap().len(), 5);
    }
}
