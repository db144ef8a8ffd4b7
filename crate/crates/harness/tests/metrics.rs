use proptest::prelude::*;
use waveseg::rng::SeededRng;
use waveseg_harness::metrics::{
    boundary_map, compute_boundary_f1, compute_miou, BoundaryCounts, Confusion,
};

fn random_mask(rng: &mut SeededRng, n: usize, k: usize) -> Vec<u8> {
    (0..n).map(|_| rng.below(k) as u8).collect()
}

fn naive_iou(pred: &[u8], truth: &[u8], k: usize) -> Vec<Option<f64>> {
    (0..k as u8)
        .map(|c| {
            let inter = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c && **t == c)
                .count();
            let union = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c || **t == c)
                .count();
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect()
}

fn naive_boundary(mask: &[u8], w: usize) -> Vec<bool> {
    let h = mask.len() / w;
    (0..mask.len())
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
                let (rr, cc) = (r + dr, c + dc);
                rr >= 0
                    && cc >= 0
                    && rr < h as isize
                    && cc < w as isize
                    && mask[rr as usize * w + cc as usize] != mask[i]
            })
        })
        .collect()
}

fn naive_matched(from: &[bool], to: &[bool], w: usize, radius: usize) -> (usize, usize) {
    let h = from.len() / w;
    let rad = radius as isize;
    let mut matched = 0;
    for i in (0..from.len()).filter(|&i| from[i]) {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        let hit = (-rad..=rad).any(|dr| {
            (-rad..=rad).any(|dc| {
                let (rr, cc) = (r + dr, c + dc);
                rr >= 0
                    && cc >= 0
                    && rr < h as isize
                    && cc < w as isize
                    && to[rr as usize * w + cc as usize]
            })
        });
        matched += hit as usize;
    }
    (matched, from.iter().filter(|&&b| b).count())
}

fn naive_f1(pred: &[u8], truth: &[u8], w: usize, radius: usize) -> f64 {
    let (bp, bt) = (naive_boundary(pred, w), naive_boundary(truth, w));
    let (pm, pt) = naive_matched(&bp, &bt, w, radius);
    let (tm, tt) = naive_matched(&bt, &bp, w, radius);
    match (pt, tt) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let (p, r) = (pm as f64 / pt as f64, tm as f64 / tt as f64);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    }
}

/// Masks made of a few filled rectangles.
fn blocky_mask(rng: &mut SeededRng, w: usize, h: usize, k: usize) -> Vec<u8> {
    let mut m = vec![0u8; w * h];
    for _ in 0..1 + rng.below(5) {
        let (r0, c0) = (rng.below(h), rng.below(w));
        let (r1, c1) = (
            (r0 + 1 + rng.below(h / 2)).min(h),
            (c0 + 1 + rng.below(w / 2)).min(w),
        );
        let class = rng.below(k) as u8;
        for r in r0..r1 {
            m[r * w + c0..r * w + c1].fill(class);
        }
    }
    m
}

#[test]
fn iou_matches_direct_counting() {
    let mut rng = SeededRng::new(11);
    for _ in 0..64 {
        let k = 2 + rng.below(5);
        let n = 1 + rng.below(500);
        let (pred, truth) = (random_mask(&mut rng, n, k), random_mask(&mut rng, n, k));
        let report = compute_miou(&pred, &truth, k).unwrap();
        let want = naive_iou(&pred, &truth, k);
        assert_eq!(report.per_class, want);
        let present: Vec<f64> = want.iter().flatten().copied().collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        assert!((report.mean - mean).abs() < 1e-15);
    }
}

#[test]
fn confusion_accumulates_like_one_batch() {
    let mut rng = SeededRng::new(12);
    let (pred, truth) = (random_mask(&mut rng, 300, 4), random_mask(&mut rng, 300, 4));
    let mut parts = Confusion::new(4);
    for (p, t) in pred.chunks(70).zip(truth.chunks(70)) {
        parts.add(p, t).unwrap();
    }
    assert_eq!(
        parts.per_class_iou(),
        compute_miou(&pred, &truth, 4).unwrap().per_class
    );
}

#[test]
fn boundary_map_matches_four_neighbour_definition() {
    let mut rng = SeededRng::new(13);
    for _ in 0..32 {
        let (w, h) = (1 + rng.below(20), 1 + rng.below(20));
        let m = random_mask(&mut rng, w * h, 3);
        assert_eq!(boundary_map(&m, w), naive_boundary(&m, w));
    }
}

#[test]
fn boundary_f1_matches_brute_force_search() {
    let mut rng = SeededRng::new(14);
    for _ in 0..48 {
        let (w, h) = (8 + rng.below(24), 8 + rng.below(24));
        let (pred, truth) = (
            blocky_mask(&mut rng, w, h, 3),
            blocky_mask(&mut rng, w, h, 3),
        );
        for radius in [0, 1, 2, 3] {
            let got = compute_boundary_f1(&pred, &truth, w, radius).unwrap();
            let want = naive_f1(&pred, &truth, w, radius);
            assert!(
                (got - want).abs() < 1e-12,
                "{w}x{h} r={radius}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn merged_counts_are_fieldwise_sums() {
    let mut rng = SeededRng::new(15);
    let parts: Vec<BoundaryCounts> = (0..4)
        .map(|_| {
            let (p, t) = (
                blocky_mask(&mut rng, 16, 16, 3),
                blocky_mask(&mut rng, 16, 16, 3),
            );
            BoundaryCounts::from_masks(&p, &t, 16, 2).unwrap()
        })
        .collect();
    let mut total = BoundaryCounts::default();
    parts.iter().for_each(|c| total.merge(*c));
    let sum = |f: fn(&BoundaryCounts) -> u64| parts.iter().map(f).sum::<u64>();
    assert_eq!(total.pred_matched, sum(|c| c.pred_matched));
    assert_eq!(total.pred_total, sum(|c| c.pred_total));
    assert_eq!(total.true_matched, sum(|c| c.true_matched));
    assert_eq!(total.true_total, sum(|c| c.true_total));
}

proptest! {
    #[test]
    fn boundary_f1_is_bounded_and_symmetric(seed in 0u64..10_000, w in 4usize..24, h in 4usize..24, radius in 0usize..4) {
        let mut rng = SeededRng::new(seed);
        let (a, b) = (blocky_mask(&mut rng, w, h, 3), blocky_mask(&mut rng, w, h, 3));
        let ab = compute_boundary_f1(&a, &b, w, radius).unwrap();
        let ba = compute_boundary_f1(&b, &a, w, radius).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(compute_boundary_f1(&a, &a, w, radius).unwrap(), 1.0);
    }

    #[test]
    fn larger_radius_never_lowers_f1(seed in 0u64..10_000, w in 4usize..24, h in 4usize..24) {
        let mut rng = SeededRng::new(seed);
        let (a, b) = (blocky_mask(&mut rng, w, h, 3), blocky_mask(&mut rng, w, h, 3));
        let f: Vec<f64> = (0..4).map(|r| compute_boundary_f1(&a, &b, w, r).unwrap()).collect();
        prop_assert!(f.windows(2).all(|p| p[1] >= p[0] - 1e-12));
    }

    #[test]
    fn miou_is_bounded_and_symmetric(seed in 0u64..10_000, n in 1usize..400, k in 2usize..6) {
        let mut rng = SeededRng::new(seed);
        let (a, b) = (random_mask(&mut rng, n, k), random_mask(&mut rng, n, k));
        let ab = compute_miou(&a, &b, k).unwrap().mean;
        let ba = compute_miou(&b, &a, k).unwrap().mean;
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert_eq!(compute_miou(&a, &a, k).unwrap().mean, 1.0);
    }
}
