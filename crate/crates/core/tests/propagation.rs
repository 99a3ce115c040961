mod common;

use common::{naive_propagate, naive_readout, random_hypergraph, random_matrix, rng, vanilla_hgnn};
use hypermv::hypergraph::{
    build_incidence, propagate, readout, Hyperedge, IncidenceStructure, PropagationParams,
};
use hypermv::numerics::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn instance(seed: u64) -> (Tensor, Vec<Hyperedge>, Vec<Tensor>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.gen_range(2..=20);
    let m = r.gen_range(1..=12);
    let d = r.gen_range(1..=8);
    let layers = r.gen_range(1..=3);
    let x = random_matrix(&mut r, n, d);
    let edges = random_hypergraph(&mut r, n, m);
    let thetas = (0..layers).map(|_| random_matrix(&mut r, d, d)).collect();
    let wv = (0..n).map(|_| r.gen_range(0.1..2.0)).collect();
    let we = (0..m).map(|_| r.gen_range(0.1..2.0)).collect();
    (x, edges, thetas, wv, we)
}

#[test]
fn matches_two_stage_oracle() {
    for seed in 0..100 {
        let (x, edges, thetas, wv, we) = instance(seed);
        let inc = build_incidence(&edges, x.rows()).unwrap();
        let params = PropagationParams {
            thetas: thetas.clone(),
            edge_weights: we.clone(),
            vertex_weights: wv.clone(),
        };
        let got = propagate(&x, &inc, &params).unwrap();
        let want = naive_propagate(&x, &edges, &thetas, &wv, &we);
        assert!(got.max_abs_diff(&want) < 1e-9, "seed {seed}");
    }
}

#[test]
fn unit_attention_is_vanilla_hgnn() {
    for seed in 100..150 {
        let (x, edges, thetas, _, _) = instance(seed);
        let inc = build_incidence(&edges, x.rows()).unwrap();
        let params = PropagationParams::with_unit_attention(thetas.clone(), &inc);
        let got = propagate(&x, &inc, &params).unwrap();
        let want = vanilla_hgnn(&x, &edges, &thetas);
        assert!(got.max_abs_diff(&want) < 1e-12, "seed {seed}");
    }
}

#[test]
fn degrees_match_independent_sums() {
    for seed in 0..20 {
        let (x, edges, ..) = instance(seed);
        let inc: IncidenceStructure = build_incidence(&edges, x.rows()).unwrap();
        for v in 0..x.rows() {
            let count = edges.iter().filter(|e| e.members.contains(&v)).count();
            assert_eq!(inc.vertex_degrees[v], count as f64);
        }
        for (j, e) in edges.iter().enumerate() {
            let col: f64 = (0..x.rows()).map(|i| inc.h.at(i, j)).sum();
            assert_eq!(inc.edge_degrees[j], col);
            assert_eq!(col, e.members.len() as f64);
        }
    }
}

fn permute_instance(
    perm: &[usize],
    x: &Tensor,
    edges: &[Hyperedge],
    wv: &[f64],
) -> (Tensor, Vec<Hyperedge>, Vec<f64>) {
    // vertex i moves to position perm[i]
    let n = x.rows();
    let mut inv = vec![0; n];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|p| x.row(inv[p]).to_vec()).collect();
    let edges = edges
        .iter()
        .map(|e| {
            let mut members: Vec<usize> = e.members.iter().map(|&v| perm[v]).collect();
            members.sort_unstable();
            Hyperedge {
                kind: e.kind,
                members,
            }
        })
        .collect();
    let wv = (0..n).map(|p| wv[inv[p]]).collect();
    (Tensor::from_rows(&rows).unwrap(), edges, wv)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_is_permutation_equivariant(seed in 0u64..10_000) {
        let (x, edges, thetas, wv, we) = instance(seed);
        let mut r = rng(seed ^ 77);
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        perm.shuffle(&mut r);
        let inc = build_incidence(&edges, x.rows()).unwrap();
        let out = propagate(&x, &inc, &PropagationParams {
            thetas: thetas.clone(), edge_weights: we.clone(), vertex_weights: wv.clone(),
        }).unwrap();
        let (px, pedges, pwv) = permute_instance(&perm, &x, &edges, &wv);
        let pinc = build_incidence(&pedges, px.rows()).unwrap();
        let pout = propagate(&px, &pinc, &PropagationParams {
            thetas, edge_weights: we, vertex_weights: pwv,
        }).unwrap();
        for i in 0..x.rows() {
            for (a, b) in out.row(i).iter().zip(pout.row(perm[i])) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readout_is_permutation_invariant(seed in 0u64..10_000, n in 1usize..20, d in 1usize..8) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, n, d);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
        let px = Tensor::from_rows(&rows).unwrap();
        let a = readout(&x).unwrap();
        let b = readout(&px).unwrap();
        prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.weights.iter().all(|&w| w >= 0.0));
        for (u, v) in a.embedding.iter().zip(&b.embedding) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let (omega, g) = naive_readout(&x);
        for (u, v) in a.weights.iter().zip(&omega) {
            prop_assert!((u - v).abs() < 1e-15);
        }
        for (u, v) in a.embedding.iter().zip(&g) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}
