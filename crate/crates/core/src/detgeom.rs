//! Box geometry under the detector: IoU, NMS, anchors, target assignment,
//! box deltas and average precision.
//!
//! Boxes are `[x_min, y_min, x_max, y_max]` in pixel-edge coordinates.

use std::cmp::Ordering;

use crate::dataio::BoundingBox;

pub type Rect = [f64; 4];

pub fn rect_of(b: &BoundingBox) -> Rect {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

pub fn rect_area(r: &Rect) -> f64 {
    (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0)
}

pub fn iou_rect(a: &Rect, b: &Rect) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = rect_area(a) + rect_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    iou_rect(&rect_of(a), &rect_of(b))
}

/// Total detection order: score descending, then coordinates ascending,
/// then class id ascending.
pub fn detection_order(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x_min.total_cmp(&b.x_min))
        .then(a.y_min.total_cmp(&b.y_min))
        .then(a.x_max.total_cmp(&b.x_max))
        .then(a.y_max.total_cmp(&b.y_max))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy per-class NMS. A box is dropped when its IoU with an already kept
/// box of the same class exceeds `threshold`. Output follows [`detection_order`].
pub fn nms(dets: &[BoundingBox], threshold: f64) -> Vec<BoundingBox> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<BoundingBox> = Vec::new();
    for d in sorted {
        if kept.iter().all(|k| k.class_id != d.class_id || iou(k, &d) <= threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Class-agnostic NMS over raw rects; returns kept indices in descending
/// score order (ties broken by index).
pub fn nms_indices(rects: &[Rect], scores: &[f32], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; rects.len()];
    let mut keep = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        if suppressed[a] {
            continue;
        }
        keep.push(a);
        for &b in &order[i + 1..] {
            if !suppressed[b] && iou_rect(&rects[a], &rects[b]) > threshold {
                suppressed[b] = true;
            }
        }
    }
    keep
}

/// Anchors of one pyramid level, ordered `(anchor, y, x)` to match a
/// `[A, H, W]` head output.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelAnchors {
    pub stride: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    pub rects: Vec<Rect>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<LevelAnchors>,
}

impl AnchorGrid {
    /// `grids[l] = (w, h)` of level `l`; `strides[l]` in input pixels;
    /// one `sizes[l]` per level with every ratio (height / width).
    pub fn generate(grids: &[(usize, usize)], strides: &[usize], sizes: &[f64], ratios: &[f64]) -> Self {
        assert!(grids.len() == strides.len() && grids.len() == sizes.len());
        let levels = grids
            .iter()
            .zip(strides)
            .zip(sizes)
            .map(|((&(gw, gh), &stride), &size)| {
                let mut rects = Vec::with_capacity(ratios.len() * gw * gh);
                for &r in ratios {
                    let h_ratio = r.sqrt();
                    let (w, h) = (size / h_ratio, size * h_ratio);
                    let base = [
                        (-w / 2.0).round(),
                        (-h / 2.0).round(),
                        (w / 2.0).round(),
                        (h / 2.0).round(),
                    ];
                    for y in 0..gh {
                        for x in 0..gw {
                            let (cx, cy) = ((x * stride) as f64, (y * stride) as f64);
                            rects.push([base[0] + cx, base[1] + cy, base[2] + cx, base[3] + cy]);
                        }
                    }
                }
                LevelAnchors {
                    stride,
                    grid_w: gw,
                    grid_h: gh,
                    rects,
                }
            })
            .collect();
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.rects.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All anchors, level by level.
    pub fn flat(&self) -> Vec<Rect> {
        self.levels.iter().flat_map(|l| l.rects.iter().copied()).collect()
    }
}

/// Center/size delta encoding with per-coordinate weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCoder {
    pub weights: [f64; 4],
    /// Upper bound on decoded log-size deltas.
    pub clip: f64,
}

impl BoxCoder {
    pub fn new(weights: [f64; 4]) -> Self {
        Self {
            weights,
            clip: (1000.0f64 / 16.0).ln(),
        }
    }

    pub fn encode(&self, target: &Rect, reference: &Rect) -> [f64; 4] {
        let (rw, rh) = (reference[2] - reference[0], reference[3] - reference[1]);
        let (rx, ry) = (reference[0] + 0.5 * rw, reference[1] + 0.5 * rh);
        let (tw, th) = (target[2] - target[0], target[3] - target[1]);
        let (tx, ty) = (target[0] + 0.5 * tw, target[1] + 0.5 * th);
        let [wx, wy, ww, wh] = self.weights;
        [
            wx * (tx - rx) / rw,
            wy * (ty - ry) / rh,
            ww * (tw / rw).ln(),
            wh * (th / rh).ln(),
        ]
    }

    pub fn decode(&self, deltas: &[f64; 4], reference: &Rect) -> Rect {
        let (rw, rh) = (reference[2] - reference[0], reference[3] - reference[1]);
        let (rx, ry) = (reference[0] + 0.5 * rw, reference[1] + 0.5 * rh);
        let [wx, wy, ww, wh] = self.weights;
        let dx = deltas[0] / wx;
        let dy = deltas[1] / wy;
        let dw = (deltas[2] / ww).min(self.clip);
        let dh = (deltas[3] / wh).min(self.clip);
        let (cx, cy) = (dx * rw + rx, dy * rh + ry);
        let (w, h) = (dw.exp() * rw, dh.exp() * rh);
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
    }
}

pub fn clip_rect(r: &Rect, width: usize, height: usize) -> Rect {
    let (w, h) = (width as f64, height as f64);
    [
        r[0].clamp(0.0, w),
        r[1].clamp(0.0, h),
        r[2].clamp(0.0, w),
        r[3].clamp(0.0, h),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<AnchorLabel>,
    /// Matched ground-truth index for positives.
    pub matched: Vec<Option<usize>>,
    /// Regression target for positives, zero elsewhere.
    pub deltas: Vec<[f64; 4]>,
}

impl AnchorTargets {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == AnchorLabel::Positive)
            .map(|(i, _)| i)
    }
}

/// Labels each anchor: positive at IoU >= `pos_thr` with some box, or when
/// it attains a box's best (non-zero) IoU; negative when its best IoU is
/// below `neg_thr`; ignored otherwise.
pub fn assign_targets(anchors: &[Rect], gt: &[Rect], pos_thr: f64, neg_thr: f64, coder: &BoxCoder) -> AnchorTargets {
    let n = anchors.len();
    let mut labels = vec![AnchorLabel::Negative; n];
    let mut matched = vec![None; n];
    let mut deltas = vec![[0.0; 4]; n];
    if gt.is_empty() {
        return AnchorTargets {
            labels,
            matched,
            deltas,
        };
    }
    let mut best_for_gt = vec![0.0f64; gt.len()];
    let mut best_gt = vec![(0usize, 0.0f64); n];
    for (i, a) in anchors.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = iou_rect(a, g);
            if v > best_gt[i].1 {
                best_gt[i] = (j, v);
            }
            best_for_gt[j] = best_for_gt[j].max(v);
        }
    }
    for i in 0..n {
        let (j, v) = best_gt[i];
        labels[i] = if v >= pos_thr {
            AnchorLabel::Positive
        } else if v < neg_thr {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignored
        };
        if labels[i] == AnchorLabel::Positive {
            matched[i] = Some(j);
        }
    }
    // best-anchor rule: every box keeps the anchors that overlap it most
    for (j, g) in gt.iter().enumerate() {
        if best_for_gt[j] <= 0.0 {
            continue;
        }
        for (i, a) in anchors.iter().enumerate() {
            if iou_rect(a, g) == best_for_gt[j] {
                labels[i] = AnchorLabel::Positive;
                if matched[i].is_none() {
                    matched[i] = Some(best_gt[i].0);
                }
            }
        }
    }
    for i in 0..n {
        if let Some(j) = matched[i] {
            deltas[i] = coder.encode(&gt[j], &anchors[i]);
        }
    }
    AnchorTargets {
        labels,
        matched,
        deltas,
    }
}

/// All-point interpolated AP at `iou_thr` for one class. Each detection
/// matches at most one unmatched box of its class, the one it overlaps most.
/// With no ground truth the result is 1.0 when there are no detections, else 0.0.
pub fn average_precision(dets: &[BoundingBox], gt: &[BoundingBox], iou_thr: f64) -> f64 {
    let images = [(dets.to_vec(), gt.to_vec())];
    average_precision_multi(&images, iou_thr)
}

/// AP over several images: detections are ranked jointly and matched only
/// within their own image and class.
pub fn average_precision_multi(images: &[(Vec<BoundingBox>, Vec<BoundingBox>)], iou_thr: f64) -> f64 {
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    let mut ranked: Vec<(usize, BoundingBox)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, (d, _))| d.iter().map(move |b| (i, *b)))
        .collect();
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    ranked.sort_by(|a, b| detection_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    let mut used: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, (img, det)) in ranked.iter().enumerate() {
        let gts = &images[*img].1;
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, g)| !used[*img][*j] && g.class_id == det.class_id)
            .map(|(j, g)| (j, iou(det, g)))
            .filter(|(_, v)| *v >= iou_thr)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            used[*img][j] = true;
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope, then area under the step curve
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let recall = points[i].0;
        if recall > prev_recall {
            let p = points[i..].iter().map(|q| q.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * p;
            prev_recall = recall;
        }
    }
    ap
}

/// Mean over classes `1..=num_classes` that have at least one ground-truth
/// box; `None` if no class does.
pub fn mean_average_precision(
    images: &[(Vec<BoundingBox>, Vec<BoundingBox>)],
    num_classes: u32,
    iou_thr: f64,
) -> Option<f64> {
    let mut aps = Vec::new();
    for c in 1..=num_classes {
        let per: Vec<(Vec<BoundingBox>, Vec<BoundingBox>)> = images
            .iter()
            .map(|(d, g)| {
                (
                    d.iter().filter(|b| b.class_id == c).copied().collect(),
                    g.iter().filter(|b| b.class_id == c).copied().collect(),
                )
            })
            .collect();
        if per.iter().any(|(_, g)| !g.is_empty()) {
            aps.push(average_precision_multi(&per, iou_thr));
        }
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> BoundingBox {
        BoundingBox {
            score,
            ..BoundingBox::ground_truth(x0, y0, x1, y1, 1)
        }
    }

    #[test]
    fn iou_hand_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0, 1.0)), 0.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 15.0, 15.0, 1.0)), 25.0 / 175.0);
    }

    #[test]
    fn nms_keeps_higher_duplicate() {
        let kept = nms(&[bx(0.0, 0.0, 5.0, 5.0, 0.8), bx(0.0, 0.0, 5.0, 5.0, 0.9)], 0.5);
        assert_eq!(kept, vec![bx(0.0, 0.0, 5.0, 5.0, 0.9)]);
        let single = [bx(1.0, 1.0, 2.0, 2.0, 0.1)];
        assert_eq!(nms(&single, 0.5), single.to_vec());
    }

    #[test]
    fn nms_is_per_class() {
        let mut other = bx(0.0, 0.0, 5.0, 5.0, 0.8);
        other.class_id = 2;
        assert_eq!(nms(&[bx(0.0, 0.0, 5.0, 5.0, 0.9), other], 0.5).len(), 2);
    }

    #[test]
    fn anchors_sit_on_the_stride_lattice() {
        let grid = AnchorGrid::generate(&[(4, 3), (2, 2)], &[8, 16], &[16.0, 32.0], &[0.5, 1.0, 2.0]);
        assert_eq!(grid.len(), 3 * 12 + 3 * 4);
        for level in &grid.levels {
            for r in &level.rects {
                let (cx, cy) = ((r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0);
                assert_eq!(cx % level.stride as f64, 0.0);
                assert_eq!(cy % level.stride as f64, 0.0);
            }
        }
        assert_eq!(grid.levels[0].rects[12 + 1], [0.0, -8.0, 16.0, 8.0]);
    }

    #[test]
    fn coder_round_trip() {
        let coder = BoxCoder::new([10.0, 10.0, 5.0, 5.0]);
        let a = [3.0, 4.0, 20.0, 30.0];
        let t = [5.0, 1.0, 17.0, 44.0];
        let back = coder.decode(&coder.encode(&t, &a), &a);
        for k in 0..4 {
            assert!((back[k] - t[k]).abs() < 1e-9);
        }
        assert_eq!(coder.encode(&a, &a), [0.0; 4]);
    }

    #[test]
    fn assignment_basics() {
        let coder = BoxCoder::new([1.0; 4]);
        let anchors = [[0.0, 0.0, 10.0, 10.0], [50.0, 50.0, 60.0, 60.0], [0.0, 0.0, 14.0, 14.0]];
        let none = assign_targets(&anchors, &[], 0.7, 0.3, &coder);
        assert!(none.labels.iter().all(|l| *l == AnchorLabel::Negative));
        let t = assign_targets(&anchors, &[[0.0, 0.0, 10.0, 10.0]], 0.7, 0.3, &coder);
        assert_eq!(t.labels[0], AnchorLabel::Positive);
        assert_eq!(t.deltas[0], [0.0; 4]);
        assert_eq!(t.labels[1], AnchorLabel::Negative);
        // IoU 100/196 sits between the thresholds
        assert_eq!(t.labels[2], AnchorLabel::Ignored);
    }

    #[test]
    fn ap_hand_cases() {
        let g = bx(0.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(average_precision(&[g], &[g], 0.5), 1.0);
        assert_eq!(average_precision(&[], &[g], 0.5), 0.0);
        let g2 = bx(20.0, 20.0, 30.0, 30.0, 1.0);
        let dets = [
            bx(0.0, 0.0, 10.0, 10.0, 0.9),
            bx(50.0, 50.0, 60.0, 60.0, 0.8),
            bx(20.0, 20.0, 30.0, 30.0, 0.7),
        ];
        assert!((average_precision(&dets, &[g, g2], 0.5) - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detection_counts_once() {
        let g = bx(0.0, 0.0, 10.0, 10.0, 1.0);
        let dets = [bx(0.0, 0.0, 10.0, 10.0, 0.9), bx(0.0, 0.0, 10.0, 10.0, 0.8)];
        assert_eq!(average_precision(&dets, &[g], 0.5), 1.0);
        assert_eq!(
            average_precision(&dets, &[g, bx(40.0, 40.0, 50.0, 50.0, 1.0)], 0.5),
            0.5
        );
    }
}
