mod common;

use common::{random_matrix, rng};
use hypermv::backbone::EmbeddingMatrix;
use hypermv::hypergraph::{
    build_graph_edges, build_incidence, build_knn_hyperedges, build_rule_hyperedges,
    nearest_neighbors, EdgeKind,
};
use proptest::prelude::*;

/// All-pairs scan: sort every other row by (distance, index).
fn brute_force(x: &hypermv::numerics::Tensor, k: usize) -> Vec<Vec<usize>> {
    let n = x.rows();
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    (s.sqrt(), j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

#[test]
fn knn_matches_brute_force() {
    for seed in 0..30 {
        let x = random_matrix(&mut rng(seed), 10, 4);
        for k in 1..=4 {
            assert_eq!(nearest_neighbors(&x, k).unwrap(), brute_force(&x, k), "seed {seed} k {k}");
        }
    }
}

#[test]
fn full_build_counts() {
    let emb = EmbeddingMatrix::new(6, 9, random_matrix(&mut rng(3), 54, 8)).unwrap();
    let rule = build_rule_hyperedges(6, 9);
    let knn = build_knn_hyperedges(&emb, 3).unwrap();
    assert_eq!(rule.len(), 15);
    assert_eq!(knn.len(), 54);
    assert!(knn.iter().all(|e| e.cardinality() <= 4 && e.cardinality() >= 2));
    for (i, e) in knn.iter().enumerate() {
        match e.kind {
            EdgeKind::Knn { center } => {
                assert_eq!(center.flat(9), i);
                assert!(e.contains(i));
            }
            _ => panic!("unexpected kind"),
        }
    }
    let mut edges = rule;
    edges.extend(knn);
    let inc = build_incidence(&edges, 54).unwrap();
    assert_eq!(inc.h.shape(), &[54, 69]);
    assert!(inc.vertex_degrees.iter().all(|&d| d >= 2.0));
    for (j, e) in edges.iter().enumerate().take(15) {
        let ones: f64 = (0..54).map(|i| inc.h.at(i, j)).sum();
        let want = match e.kind {
            EdgeKind::TimeConsistent { .. } => 9.0,
            EdgeKind::ViewConsistent { .. } => 6.0,
            _ => unreachable!(),
        };
        assert_eq!(ones, want);
    }
}

#[test]
fn graph_knn_pairs_match_nearest() {
    let emb = EmbeddingMatrix::new(2, 3, random_matrix(&mut rng(9), 6, 5)).unwrap();
    let edges = build_graph_edges(&emb, 1).unwrap();
    assert!(edges.iter().all(|e| e.cardinality() == 2));
    let nn = brute_force(&emb.features, 1);
    let knn: Vec<_> = edges[7..].to_vec();
    assert_eq!(knn.len(), 6);
    for (i, e) in knn.iter().enumerate() {
        let mut want = vec![i, nn[i][0]];
        want.sort_unstable();
        assert_eq!(e.members, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn identical_embeddings_identical_edges(seed in 0u64..1000, views in 1usize..4, windows in 2usize..5) {
        let x = random_matrix(&mut rng(seed), views * windows, 3);
        let a = EmbeddingMatrix::new(views, windows, x.clone()).unwrap();
        let b = EmbeddingMatrix::new(views, windows, x).unwrap();
        let k = (views * windows - 1).min(3);
        prop_assert_eq!(build_knn_hyperedges(&a, k).unwrap(), build_knn_hyperedges(&b, k).unwrap());
    }
}
