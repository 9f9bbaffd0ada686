use aerodepth_tensor::{Roi, RoiAlignParams, Tensor, Var};
use rand::Rng;

use crate::dataio::BoundingBox;
use crate::detgeom::{
    assign_targets, clip_rect, iou_rect, nms, nms_indices, rect_of, AnchorGrid, AnchorLabel, BoxCoder, Rect,
};
use crate::error::{Error, Result};
use crate::losses::{bce_with_logits, smooth_l1, softmax_cross_entropy, DetectionTerms};
use crate::model::network::{EncoderFeatures, Session};

const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
const RPN_WEIGHTS: [f64; 4] = [1.0, 1.0, 1.0, 1.0];
const ROI_WEIGHTS: [f64; 4] = [10.0, 10.0, 5.0, 5.0];
const MIN_PROPOSAL_SIDE: f64 = 1e-3;
const MIN_DETECTION_SIDE: f64 = 1e-2;
/// Canonical ROI size and level for pyramid routing.
const CANONICAL_SIZE: f64 = 224.0;
const CANONICAL_LEVEL: f64 = 4.0;

/// Result of the detection pathway for one image.
#[derive(Debug, Default)]
pub struct DetectionOutput {
    /// Post-NMS detections (inference modes only).
    pub detections: Vec<BoundingBox>,
    /// P2..P6.
    pub fpn_levels: Vec<Var>,
    /// Loss terms (training mode only).
    pub terms: Option<DetectionTerms>,
    /// Gradient seeds of `l_proposal`.
    pub proposal_seeds: Vec<(Var, Tensor)>,
    /// Gradient seeds of `l_final`.
    pub final_seeds: Vec<(Var, Tensor)>,
}

struct RpnLevel {
    objectness: Var,
    deltas: Var,
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn tensor_from(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape, v.iter().map(|&x| x as f32).collect())
}

/// Uniform subset of `pool` of size `min(k, len)`, order preserved by rank.
fn sample(rng: &mut impl Rng, mut pool: Vec<usize>, k: usize) -> Vec<usize> {
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

impl Session<'_> {
    fn fpn(&mut self, feats: &EncoderFeatures) -> Vec<Var> {
        let mut inner: Option<Var> = None;
        let mut outs = vec![None; 4];
        for l in (0..4).rev() {
            let c = feats.stages[l + 1];
            let lat = self.conv(c, &format!("detection.fpn.lateral{}", l + 2), 1, 0, true);
            let merged = match inner {
                Some(top) => {
                    let up = self.graph.upsample2x(top);
                    self.graph.add(lat, up)
                }
                None => lat,
            };
            inner = Some(merged);
            outs[l] = Some(self.conv(merged, &format!("detection.fpn.output{}", l + 2), 1, 1, true));
        }
        let mut levels: Vec<Var> = outs.into_iter().map(|o| o.expect("all levels built")).collect();
        let p6 = self.graph.subsample2x(levels[3]);
        levels.push(p6);
        levels
    }

    fn rpn_head(&mut self, level: Var) -> RpnLevel {
        let t = self.conv(level, "detection.rpn.conv", 1, 1, true);
        let t = self.graph.relu(t);
        RpnLevel {
            objectness: self.conv(t, "detection.rpn.objectness", 1, 0, true),
            deltas: self.conv(t, "detection.rpn.deltas", 1, 0, true),
        }
    }

    fn anchors(&self, feats: &EncoderFeatures, levels: &[Var]) -> AnchorGrid {
        let grids: Vec<(usize, usize)> = levels
            .iter()
            .map(|&v| {
                let (_, h, w) = self.graph.value(v).chw();
                (w, h)
            })
            .collect();
        let strides: Vec<usize> = grids.iter().map(|&(w, _)| feats.padded_width / w).collect();
        AnchorGrid::generate(&grids, &strides, &self.cfg.anchor_sizes, &self.cfg.anchor_ratios)
    }

    /// Per-anchor objectness and deltas, flattened in anchor-grid order.
    fn rpn_outputs(&self, heads: &[RpnLevel]) -> (Vec<f64>, Vec<[f64; 4]>) {
        let a = self.cfg.num_anchors();
        let mut scores = Vec::new();
        let mut deltas = Vec::new();
        for head in heads {
            scores.extend(to_f64(self.graph.value(head.objectness)));
            let d = self.graph.value(head.deltas);
            let (_, h, w) = d.chw();
            let plane = h * w;
            for ai in 0..a {
                for p in 0..plane {
                    let at = |k: usize| d.data()[(ai * 4 + k) * plane + p] as f64;
                    deltas.push([at(0), at(1), at(2), at(3)]);
                }
            }
        }
        (scores, deltas)
    }

    fn proposals(
        &self,
        grid: &AnchorGrid,
        scores: &[f64],
        deltas: &[[f64; 4]],
        width: usize,
        height: usize,
    ) -> Vec<Rect> {
        let coder = BoxCoder::new(RPN_WEIGHTS);
        let d = &self.cfg.detection;
        let mut all: Vec<(Rect, f32)> = Vec::new();
        let mut offset = 0;
        for level in &grid.levels {
            let n = level.rects.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| scores[offset + b].total_cmp(&scores[offset + a]).then(a.cmp(&b)));
            idx.truncate(d.rpn_pre_nms_top_n);
            let mut rects = Vec::with_capacity(idx.len());
            let mut s = Vec::with_capacity(idx.len());
            for i in idx {
                let r = clip_rect(&coder.decode(&deltas[offset + i], &level.rects[i]), width, height);
                if r[2] - r[0] >= MIN_PROPOSAL_SIDE
                    && r[3] - r[1] >= MIN_PROPOSAL_SIDE
                    && r.iter().all(|v| v.is_finite())
                {
                    rects.push(r);
                    s.push(scores[offset + i] as f32);
                }
            }
            for k in nms_indices(&rects, &s, d.rpn_nms_threshold) {
                all.push((rects[k], s[k]));
            }
            offset += n;
        }
        all.sort_by(|a, b| b.1.total_cmp(&a.1));
        all.truncate(d.rpn_post_nms_top_n);
        all.into_iter().map(|(r, _)| r).collect()
    }

    fn rpn_loss(
        &mut self,
        grid: &AnchorGrid,
        heads: &[RpnLevel],
        scores: &[f64],
        deltas: &[[f64; 4]],
        gt: &[Rect],
    ) -> (f64, f64, Vec<(Var, Tensor)>) {
        let d = self.cfg.detection.clone();
        let coder = BoxCoder::new(RPN_WEIGHTS);
        let anchors = grid.flat();
        let targets = assign_targets(&anchors, gt, d.rpn_positive_iou, d.rpn_negative_iou, &coder);
        let pos: Vec<usize> = targets.positives().collect();
        let neg: Vec<usize> = (0..anchors.len())
            .filter(|&i| targets.labels[i] == AnchorLabel::Negative)
            .collect();
        let n_pos = ((d.rpn_batch_size as f64 * d.rpn_positive_fraction) as usize).min(pos.len());
        let pos = sample(&mut self.rng, pos, n_pos);
        let neg = sample(&mut self.rng, neg, d.rpn_batch_size - pos.len());
        let sampled: Vec<usize> = pos.iter().chain(&neg).copied().collect();
        let count = sampled.len().max(1) as f64;

        let logits: Vec<f64> = sampled.iter().map(|&i| scores[i]).collect();
        let labels: Vec<f64> = (0..sampled.len())
            .map(|k| if k < pos.len() { 1.0 } else { 0.0 })
            .collect();
        let cls = bce_with_logits(&logits, &labels);

        let pred: Vec<f64> = pos.iter().flat_map(|&i| deltas[i]).collect();
        let tgt: Vec<f64> = pos.iter().flat_map(|&i| targets.deltas[i]).collect();
        let reg = smooth_l1(&pred, &tgt, SMOOTH_L1_BETA);

        let mut g_obj = vec![0.0; scores.len()];
        for (k, &i) in sampled.iter().enumerate() {
            g_obj[i] = cls.grad[k];
        }
        let mut g_del = vec![[0.0; 4]; scores.len()];
        for (k, &i) in pos.iter().enumerate() {
            for (c, g) in g_del[i].iter_mut().enumerate() {
                *g = reg.grad[4 * k + c] / count;
            }
        }
        let mut seeds = Vec::new();
        let a = self.cfg.num_anchors();
        let mut offset = 0;
        for head in heads {
            let shape = self.graph.value(head.objectness).shape().to_vec();
            let plane = shape[1] * shape[2];
            let n = a * plane;
            seeds.push((head.objectness, tensor_from(&shape, &g_obj[offset..offset + n])));
            let mut gd = vec![0.0; 4 * n];
            for ai in 0..a {
                for p in 0..plane {
                    for c in 0..4 {
                        gd[(ai * 4 + c) * plane + p] = g_del[offset + ai * plane + p][c];
                    }
                }
            }
            let dshape = self.graph.value(head.deltas).shape().to_vec();
            seeds.push((head.deltas, tensor_from(&dshape, &gd)));
            offset += n;
        }
        (cls.value, reg.value / count, seeds)
    }

    /// ROI Align into P2..P5 then two FC layers; returns (class logits, deltas).
    fn roi_head(&mut self, levels: &[Var], rects: &[Rect], feats: &EncoderFeatures) -> (Var, Var) {
        let d = self.cfg.detection.clone();
        let scales: Vec<f32> = levels[..4]
            .iter()
            .map(|&v| self.graph.value(v).chw().2 as f32 / feats.padded_width as f32)
            .collect();
        let rois: Vec<Roi> = rects
            .iter()
            .map(|r| {
                let side = ((r[2] - r[0]) * (r[3] - r[1])).max(0.0).sqrt();
                let k = (CANONICAL_LEVEL + (side / CANONICAL_SIZE + 1e-8).log2() + 1e-6).floor();
                let level = (k.clamp(2.0, 5.0) as usize) - 2;
                Roi {
                    x_min: r[0] as f32,
                    y_min: r[1] as f32,
                    x_max: r[2] as f32,
                    y_max: r[3] as f32,
                    level,
                }
            })
            .collect();
        let params = RoiAlignParams {
            output_size: d.roi_output_size,
            sampling_ratio: d.roi_sampling_ratio,
            level_scales: scales,
        };
        let pooled = self.graph.roi_align(&levels[..4], &rois, &params);
        let w1 = self.p("detection.roi.fc1.w");
        let b1 = self.p("detection.roi.fc1.b");
        let h = self.graph.linear(pooled, w1, Some(b1));
        let h = self.graph.relu(h);
        let w2 = self.p("detection.roi.fc2.w");
        let b2 = self.p("detection.roi.fc2.b");
        let h = self.graph.linear(h, w2, Some(b2));
        let h = self.graph.relu(h);
        let wc = self.p("detection.roi.cls.w");
        let bc = self.p("detection.roi.cls.b");
        let cls = self.graph.linear(h, wc, Some(bc));
        let wd = self.p("detection.roi.deltas.w");
        let bd = self.p("detection.roi.deltas.b");
        let del = self.graph.linear(h, wd, Some(bd));
        (cls, del)
    }

    fn roi_loss(
        &mut self,
        levels: &[Var],
        proposals: &[Rect],
        gt: &[BoundingBox],
        feats: &EncoderFeatures,
    ) -> (f64, f64, Vec<(Var, Tensor)>) {
        let d = self.cfg.detection.clone();
        let gt_rects: Vec<Rect> = gt.iter().map(rect_of).collect();
        let mut candidates = proposals.to_vec();
        candidates.extend(&gt_rects);
        let mut labels = vec![0usize; candidates.len()];
        let mut matched = vec![None; candidates.len()];
        for (i, c) in candidates.iter().enumerate() {
            let best = gt_rects
                .iter()
                .enumerate()
                .map(|(j, g)| (j, iou_rect(c, g)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((j, v)) = best {
                if v >= d.roi_foreground_iou {
                    labels[i] = gt[j].class_id as usize;
                    matched[i] = Some(j);
                }
            }
        }
        let fg: Vec<usize> = (0..candidates.len()).filter(|&i| labels[i] > 0).collect();
        let bg: Vec<usize> = (0..candidates.len()).filter(|&i| labels[i] == 0).collect();
        let n_fg = ((d.roi_batch_size as f64 * d.roi_positive_fraction) as usize).min(fg.len());
        let fg = sample(&mut self.rng, fg, n_fg);
        let bg = sample(&mut self.rng, bg, d.roi_batch_size - fg.len());
        let sampled: Vec<usize> = fg.iter().chain(&bg).copied().collect();
        if sampled.is_empty() {
            return (0.0, 0.0, Vec::new());
        }
        let rects: Vec<Rect> = sampled.iter().map(|&i| candidates[i]).collect();
        let (cls, del) = self.roi_head(levels, &rects, feats);
        let k1 = self.cfg.num_classes + 1;
        let sampled_labels: Vec<usize> = sampled.iter().map(|&i| labels[i]).collect();
        let ce = softmax_cross_entropy(&to_f64(self.graph.value(cls)), k1, &sampled_labels);

        let coder = BoxCoder::new(ROI_WEIGHTS);
        let dv = to_f64(self.graph.value(del));
        let mut pred = Vec::new();
        let mut tgt = Vec::new();
        for (row, &i) in sampled.iter().enumerate() {
            if let Some(j) = matched[i].filter(|_| labels[i] > 0) {
                let col = labels[i] * 4;
                pred.extend_from_slice(&dv[row * 4 * k1 + col..row * 4 * k1 + col + 4]);
                tgt.extend(coder.encode(&gt_rects[j], &candidates[i]));
            }
        }
        let reg = smooth_l1(&pred, &tgt, SMOOTH_L1_BETA);
        let count = sampled.len() as f64;
        let mut g_del = vec![0.0; dv.len()];
        let mut k = 0;
        for (row, &i) in sampled.iter().enumerate() {
            if matched[i].is_some() && labels[i] > 0 {
                let col = labels[i] * 4;
                for c in 0..4 {
                    g_del[row * 4 * k1 + col + c] = reg.grad[4 * k + c] / count;
                }
                k += 1;
            }
        }
        let seeds = vec![
            (cls, tensor_from(&[sampled.len(), k1], &ce.grad)),
            (del, tensor_from(&[sampled.len(), 4 * k1], &g_del)),
        ];
        (ce.value, reg.value / count, seeds)
    }

    fn detect(&mut self, levels: &[Var], proposals: &[Rect], feats: &EncoderFeatures) -> Vec<BoundingBox> {
        if proposals.is_empty() {
            return Vec::new();
        }
        let d = self.cfg.detection.clone();
        let (cls, del) = self.roi_head(levels, proposals, feats);
        let k1 = self.cfg.num_classes + 1;
        let logits = to_f64(self.graph.value(cls));
        let dv = to_f64(self.graph.value(del));
        let coder = BoxCoder::new(ROI_WEIGHTS);
        let mut dets = Vec::new();
        for (row, p) in proposals.iter().enumerate() {
            let z = &logits[row * k1..(row + 1) * k1];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            for (c, &zc) in z.iter().enumerate().skip(1) {
                let score = (zc - max).exp() / sum;
                if !(score > d.score_threshold) {
                    continue;
                }
                let o = row * 4 * k1 + c * 4;
                let r = clip_rect(
                    &coder.decode(&[dv[o], dv[o + 1], dv[o + 2], dv[o + 3]], p),
                    feats.width,
                    feats.height,
                );
                if r[2] - r[0] >= MIN_DETECTION_SIDE && r[3] - r[1] >= MIN_DETECTION_SIDE {
                    dets.push(BoundingBox {
                        x_min: r[0],
                        y_min: r[1],
                        x_max: r[2],
                        y_max: r[3],
                        class_id: c as u32,
                        score: score.clamp(0.0, 1.0),
                    });
                }
            }
        }
        let mut kept = nms(&dets, d.nms_threshold);
        kept.truncate(d.max_detections);
        kept
    }

    /// FPN over stages 2-5 plus P6, RPN, proposals and the ROI head. In
    /// training mode `gt` is required and loss terms with their gradient
    /// seeds are returned instead of detections.
    pub fn forward_detection(
        &mut self,
        feats: &EncoderFeatures,
        gt: Option<&[BoundingBox]>,
    ) -> Result<DetectionOutput> {
        let levels = self.fpn(feats);
        let heads: Vec<RpnLevel> = levels.iter().map(|&l| self.rpn_head(l)).collect();
        let grid = self.anchors(feats, &levels);
        let (scores, deltas) = self.rpn_outputs(&heads);
        let proposals = self.proposals(&grid, &scores, &deltas, feats.width, feats.height);
        let mut out = DetectionOutput {
            fpn_levels: levels.clone(),
            ..DetectionOutput::default()
        };
        if self.training() {
            let gt = gt.ok_or_else(|| Error::Invalid("training mode needs ground-truth boxes".into()))?;
            let gt_rects: Vec<Rect> = gt.iter().map(rect_of).collect();
            let (obj, rbox, pseeds) = self.rpn_loss(&grid, &heads, &scores, &deltas, &gt_rects);
            let (cls, fbox, fseeds) = self.roi_loss(&levels, &proposals, gt, feats);
            out.terms = Some(DetectionTerms {
                rpn_objectness: obj,
                rpn_box: rbox,
                roi_classification: cls,
                roi_box: fbox,
            });
            out.proposal_seeds = pseeds;
            out.final_seeds = fseeds;
        } else {
            out.detections = self.detect(&levels, &proposals, feats);
        }
        Ok(out)
    }
}
