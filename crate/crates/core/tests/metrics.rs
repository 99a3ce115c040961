use hypermv::pipeline::{rank_of, top_m};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_logits_monte_carlo() {
    // Continuous random logits make every rank equally likely: Top-m ~ m / C.
    let (c, n) = (50, 20_000);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| r.gen::<f64>()).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    let m = top_m(&logits, &labels).unwrap();
    for (got, k) in [(m.top1, 1.0), (m.top3, 3.0), (m.top5, 5.0)] {
        let p = k / c as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() < 3.0 * sigma, "top{k}: {got} vs {p}");
    }
}

#[test]
fn label_out_of_range() {
    assert!(top_m(&[vec![0.0, 1.0]], &[2]).is_err());
}

proptest! {
    #[test]
    fn top_m_is_monotone(seed in 0u64..10_000, c in 2usize..12, n in 1usize..40) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        // coarse values so ties are common
        let logits: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| r.gen_range(0..4) as f64).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let m = top_m(&logits, &labels).unwrap();
        prop_assert!(m.top1 <= m.top3 && m.top3 <= m.top5);
        for (l, &y) in logits.iter().zip(&labels) {
            let rank = rank_of(l, y).unwrap();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| l[b].partial_cmp(&l[a]).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(order[rank], y);
        }
    }
}
