//! Reference implementations written independently of the library, shared by
//! the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::HashMap;

use hypermv::event_io::{Event, ViewStream};
use hypermv::hypergraph::{EdgeKind, Hyperedge, VertexId};
use hypermv::numerics::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Random hypergraph on `n` vertices with `m` edges of cardinality >= 2 in
/// which every vertex belongs to some edge.
pub fn random_hypergraph(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Hyperedge> {
    assert!(n >= 2 && m >= 1);
    let mut sets: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let size = rng.gen_range(2..=n.min(6));
            let mut s: Vec<usize> = Vec::new();
            while s.len() < size {
                let v = rng.gen_range(0..n);
                if !s.contains(&v) {
                    s.push(v);
                }
            }
            s
        })
        .collect();
    for v in 0..n {
        if !sets.iter().any(|s| s.contains(&v)) {
            let e = rng.gen_range(0..m);
            sets[e].push(v);
        }
    }
    sets.into_iter()
        .map(|mut s| {
            s.sort_unstable();
            Hyperedge {
                kind: EdgeKind::Knn {
                    center: VertexId::from_flat(s[0], n),
                },
                members: s,
            }
        })
        .collect()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn to_tensor(rows: Vec<Vec<f64>>) -> Tensor {
    Tensor::from_rows(&rows).unwrap()
}

/// Two-stage message passing per layer: vertices to hyperedges (vertex
/// weight, `1/sqrt(deg v)`, mean over members), hyperedges back to vertices
/// (edge weight, `1/sqrt(deg v)`), then ReLU on all but the last layer.
pub fn naive_propagate(
    x: &Tensor,
    edges: &[Hyperedge],
    thetas: &[Tensor],
    vertex_weights: &[f64],
    edge_weights: &[f64],
) -> Tensor {
    let n = x.rows();
    let mut degree = vec![0usize; n];
    for e in edges {
        for &v in &e.members {
            degree[v] += 1;
        }
    }
    let mut h = rows_of(x);
    for (l, theta) in thetas.iter().enumerate() {
        let y = mat_mul(&h, &rows_of(theta));
        let d = y[0].len();
        let messages: Vec<Vec<f64>> = edges
            .iter()
            .map(|e| {
                let mut f = vec![0.0; d];
                for &v in &e.members {
                    let s = vertex_weights[v] / (degree[v] as f64).sqrt();
                    for j in 0..d {
                        f[j] += s * y[v][j];
                    }
                }
                f.iter().map(|x| x / e.members.len() as f64).collect()
            })
            .collect();
        let mut z = vec![vec![0.0; d]; n];
        for ((e, msg), w) in edges.iter().zip(&messages).zip(edge_weights) {
            for &v in &e.members {
                for j in 0..d {
                    z[v][j] += w * msg[j];
                }
            }
        }
        for v in 0..n {
            let s = 1.0 / (degree[v] as f64).sqrt();
            for j in 0..d {
                z[v][j] *= s;
                if l + 1 < thetas.len() {
                    z[v][j] = z[v][j].max(0.0);
                }
            }
        }
        h = z;
    }
    to_tensor(h)
}

/// Unweighted HGNN layer stack with dense matrices:
/// `Dv^-1/2 H De^-1 H^T Dv^-1/2 X Theta`.
pub fn vanilla_hgnn(x: &Tensor, edges: &[Hyperedge], thetas: &[Tensor]) -> Tensor {
    let n = x.rows();
    let m = edges.len();
    let mut h = vec![vec![0.0; m]; n];
    for (j, e) in edges.iter().enumerate() {
        for &v in &e.members {
            h[v][j] = 1.0;
        }
    }
    let dv: Vec<f64> = h.iter().map(|r| r.iter().sum()).collect();
    let de: Vec<f64> = (0..m).map(|j| (0..n).map(|i| h[i][j]).sum()).collect();
    // G = Dv^-1/2 H De^-1 H^T Dv^-1/2
    let mut g = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let mut acc = 0.0;
            for e in 0..m {
                acc += h[a][e] * h[b][e] / de[e];
            }
            g[a][b] = acc / (dv[a].sqrt() * dv[b].sqrt());
        }
    }
    let mut cur = rows_of(x);
    for (l, theta) in thetas.iter().enumerate() {
        let mut next = mat_mul(&g, &mat_mul(&cur, &rows_of(theta)));
        if l + 1 < thetas.len() {
            for r in &mut next {
                for v in r.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        cur = next;
    }
    to_tensor(cur)
}

/// `omega_i = |x_i|_1 / sum_j |x_j|_1`, uniform for an all-zero input.
pub fn naive_readout(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let norms: Vec<f64> = (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v.abs()).sum())
        .collect();
    let total: f64 = norms.iter().sum();
    let omega: Vec<f64> = if total == 0.0 {
        vec![1.0 / x.rows() as f64; x.rows()]
    } else {
        norms.iter().map(|n| n / total).collect()
    };
    let d = x.cols();
    let mut g = vec![0.0; d];
    for (i, w) in omega.iter().enumerate() {
        for j in 0..d {
            g[j] += w * x.at(i, j);
        }
    }
    (omega, g)
}

/// Random sorted stream with events anywhere in `[t_begin, t_end]`.
pub fn random_stream(rng: &mut ChaCha8Rng, width: u32, height: u32, count: usize) -> ViewStream {
    let t_begin = rng.gen_range(0..1000u64);
    let t_end = t_begin + rng.gen_range(0..100_000u64);
    let mut events: Vec<Event> = (0..count)
        .map(|_| {
            Event::new(
                rng.gen_range(0..width),
                rng.gen_range(0..height),
                rng.gen_range(t_begin..=t_end),
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    events.sort_by_key(|e| e.t);
    ViewStream::new(width, height, events, t_begin, t_end).unwrap()
}

/// Window of `t` by scanning the interval list
/// `[t_begin + j*span/T, t_begin + (j+1)*span/T)` in exact rational form,
/// with the last interval closed.
pub fn window_by_scan(t: u64, t_begin: u64, t_end: u64, windows: usize) -> usize {
    let span = (t_end - t_begin) as u128;
    if span == 0 {
        return 0;
    }
    let off = (t - t_begin) as u128;
    let w = windows as u128;
    for j in 0..windows {
        let lo = j as u128 * span;
        let hi = (j as u128 + 1) * span;
        if off * w >= lo && off * w < hi {
            return j;
        }
    }
    windows - 1
}

/// Per-window signed accumulation into hash maps.
pub fn naive_volume(stream: &ViewStream, windows: usize) -> Vec<HashMap<(u32, u32), i32>> {
    let mut out = vec![HashMap::new(); windows];
    for e in &stream.events {
        let j = window_by_scan(e.t, stream.t_begin, stream.t_end, windows);
        *out[j].entry((e.x, e.y)).or_insert(0) += e.p as i32;
    }
    out
}

/// Relative error used by the gradient checks.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences of `f` with respect to every scalar of `params`.
pub fn numeric_gradient<F>(params: &ParamSet, h: f64, mut f: F) -> ParamSet
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut out = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut p = params.clone();
    for name in names {
        let len = p.get(&name).unwrap().len();
        for i in 0..len {
            let orig = p.get(&name).unwrap().data()[i];
            p.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = f(&p);
            p.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = f(&p);
            p.get_mut(&name).unwrap().data_mut()[i] = orig;
            out.get_mut(&name).unwrap().data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    out
}
