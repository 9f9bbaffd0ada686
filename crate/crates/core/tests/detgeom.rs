use aerodepth::dataio::BoundingBox;
use aerodepth::detgeom::{
    assign_targets, average_precision, iou, iou_rect, nms, nms_indices, AnchorLabel, BoxCoder, Rect,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
    let (x, y) = (rng.random_range(0.0..40.0), rng.random_range(0.0..40.0));
    let (w, h) = (rng.random_range(2.0..20.0), rng.random_range(2.0..20.0));
    [x, y, x + w, y + h]
}

/// The greedy keep-set is the unique subset where kept boxes never overlap a
/// higher-scored kept box past the threshold and every dropped box does.
fn exhaustive_keep(rects: &[Rect], scores: &[f32], thr: f64) -> Vec<usize> {
    let n = rects.len();
    let mut found = Vec::new();
    for bits in 0u32..1 << n {
        let kept = |i: usize| bits >> i & 1 == 1;
        let ok = (0..n).all(|i| {
            let suppressor = (0..n).any(|j| kept(j) && scores[j] > scores[i] && iou_rect(&rects[i], &rects[j]) > thr);
            kept(i) != suppressor
        });
        if ok {
            found.push(bits);
        }
    }
    assert_eq!(found.len(), 1, "keep-set must be unique");
    let mut keep: Vec<usize> = (0..n).filter(|&i| found[0] >> i & 1 == 1).collect();
    keep.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    keep
}

#[test]
fn greedy_nms_matches_exhaustive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let n = rng.random_range(1..=10);
        let rects: Vec<Rect> = (0..n).map(|_| random_rect(&mut rng)).collect();
        // distinct scores
        let mut scores: Vec<f32> = (0..n).map(|i| (i as f32 + 1.0) / (n as f32 + 1.0)).collect();
        for i in (1..n).rev() {
            scores.swap(i, rng.random_range(0..=i));
        }
        let thr = rng.random_range(0.1..0.7);
        assert_eq!(
            nms_indices(&rects, &scores, thr),
            exhaustive_keep(&rects, &scores, thr),
            "case {case}"
        );

        let dets: Vec<BoundingBox> = rects
            .iter()
            .zip(&scores)
            .map(|(r, &s)| BoundingBox {
                score: s as f64,
                ..BoundingBox::ground_truth(r[0], r[1], r[2], r[3], 1)
            })
            .collect();
        let kept: Vec<f64> = nms(&dets, thr).iter().map(|d| d.score).collect();
        let want: Vec<f64> = exhaustive_keep(&rects, &scores, thr)
            .iter()
            .map(|&i| scores[i] as f64)
            .collect();
        assert_eq!(kept, want, "case {case}");
    }
}

#[test]
fn nms_only_suppresses_within_a_class() {
    let a = BoundingBox {
        score: 0.9,
        ..BoundingBox::ground_truth(0.0, 0.0, 10.0, 10.0, 1)
    };
    let b = BoundingBox {
        score: 0.8,
        ..BoundingBox::ground_truth(0.0, 0.0, 10.0, 10.0, 2)
    };
    let c = BoundingBox {
        score: 0.7,
        ..BoundingBox::ground_truth(1.0, 0.0, 10.0, 10.0, 1)
    };
    assert_eq!(nms(&[c, b, a], 0.5), vec![a, b]);
}

#[test]
fn iou_hand_cases() {
    let a = BoundingBox::ground_truth(0.0, 0.0, 2.0, 2.0, 1);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &BoundingBox::ground_truth(2.0, 0.0, 4.0, 2.0, 1)), 0.0);
    assert_eq!(iou(&a, &BoundingBox::ground_truth(1.0, 1.0, 3.0, 3.0, 1)), 1.0 / 7.0);
}

#[test]
fn every_box_gets_a_positive_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coder = BoxCoder::new([1.0, 1.0, 1.0, 1.0]);
    for case in 0..100 {
        let anchors: Vec<Rect> = (0..rng.random_range(5..40)).map(|_| random_rect(&mut rng)).collect();
        let gt: Vec<Rect> = (0..rng.random_range(1..5)).map(|_| random_rect(&mut rng)).collect();
        let t = assign_targets(&anchors, &gt, 0.7, 0.3, &coder);
        for (j, g) in gt.iter().enumerate() {
            let best = anchors.iter().map(|a| iou_rect(a, g)).fold(0.0, f64::max);
            if best > 0.0 {
                assert!(
                    t.positives().any(|i| iou_rect(&anchors[i], g) == best),
                    "case {case} gt {j}"
                );
            }
        }
        for (i, a) in anchors.iter().enumerate() {
            let best = gt.iter().map(|g| iou_rect(a, g)).fold(0.0, f64::max);
            if best >= 0.7 {
                assert_eq!(t.labels[i], AnchorLabel::Positive);
            }
            if t.labels[i] == AnchorLabel::Positive {
                let j = t.matched[i].unwrap();
                let back = coder.decode(&t.deltas[i], a);
                for k in 0..4 {
                    assert!((back[k] - gt[j][k]).abs() < 1e-9);
                }
            } else {
                assert!(t.matched[i].is_none());
            }
        }
    }
}

#[test]
fn average_precision_hand_cases() {
    let g = BoundingBox::ground_truth(0.0, 0.0, 10.0, 10.0, 1);
    let hit = BoundingBox { score: 0.9, ..g };
    let miss = BoundingBox {
        score: 0.95,
        ..BoundingBox::ground_truth(20.0, 20.0, 30.0, 30.0, 1)
    };
    assert_eq!(average_precision(&[hit], &[g], 0.5), 1.0);
    // false positive ranked first: precision 1/2 at full recall
    assert_eq!(average_precision(&[hit, miss], &[g], 0.5), 0.5);
    assert_eq!(average_precision(&[], &[g], 0.5), 0.0);
    assert_eq!(average_precision(&[], &[], 0.5), 1.0);
}
