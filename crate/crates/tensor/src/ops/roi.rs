use crate::{Graph, Tensor, Var};

/// A region of interest in input-pixel coordinates, routed to one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    pub level: usize,
}

/// Parameters of bilinear region pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiAlignParams {
    /// Pooled output is `output_size x output_size` per channel.
    pub output_size: usize,
    /// Bilinear samples per bin along each axis.
    pub sampling_ratio: usize,
    /// Multiplies box coordinates to reach each level's feature grid.
    pub level_scales: Vec<f32>,
}

/// One bilinear tap: flat index within a channel plane and its weight.
type Tap = (usize, f32);

fn bilinear_taps(y: f32, x: f32, h: usize, w: usize, out: &mut Vec<Tap>) {
    if y < -1.0 || y > h as f32 || x < -1.0 || x > w as f32 {
        return;
    }
    let (mut y, mut x) = (y.max(0.0), x.max(0.0));
    let mut y_lo = y as usize;
    let y_hi;
    if y_lo >= h - 1 {
        y_lo = h - 1;
        y_hi = h - 1;
        y = y_lo as f32;
    } else {
        y_hi = y_lo + 1;
    }
    let mut x_lo = x as usize;
    let x_hi;
    if x_lo >= w - 1 {
        x_lo = w - 1;
        x_hi = w - 1;
        x = x_lo as f32;
    } else {
        x_hi = x_lo + 1;
    }
    let (ly, lx) = (y - y_lo as f32, x - x_lo as f32);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    out.push((y_lo * w + x_lo, hy * hx));
    out.push((y_lo * w + x_hi, hy * lx));
    out.push((y_hi * w + x_lo, ly * hx));
    out.push((y_hi * w + x_hi, ly * lx));
}

/// Taps for every output bin of one ROI, each already divided by the sample count.
fn roi_taps(roi: &Roi, scale: f32, h: usize, w: usize, p: &RoiAlignParams) -> Vec<Vec<Tap>> {
    let s = p.output_size;
    let x0 = roi.x_min * scale;
    let y0 = roi.y_min * scale;
    let roi_w = (roi.x_max * scale - x0).max(1.0);
    let roi_h = (roi.y_max * scale - y0).max(1.0);
    let bin_w = roi_w / s as f32;
    let bin_h = roi_h / s as f32;
    let grid = p.sampling_ratio.max(1);
    let norm = 1.0 / (grid * grid) as f32;
    let mut bins = Vec::with_capacity(s * s);
    for ph in 0..s {
        for pw in 0..s {
            let mut taps = Vec::with_capacity(4 * grid * grid);
            for iy in 0..grid {
                let y = y0 + ph as f32 * bin_h + (iy as f32 + 0.5) * bin_h / grid as f32;
                for ix in 0..grid {
                    let x = x0 + pw as f32 * bin_w + (ix as f32 + 0.5) * bin_w / grid as f32;
                    bilinear_taps(y, x, h, w, &mut taps);
                }
            }
            for t in &mut taps {
                t.1 *= norm;
            }
            bins.push(taps);
        }
    }
    bins
}

impl Graph {
    /// Multi-level ROI Align. Returns `[rois, c * s * s]` with channel-major bins.
    pub fn roi_align(&mut self, levels: &[Var], rois: &[Roi], params: &RoiAlignParams) -> Var {
        assert_eq!(levels.len(), params.level_scales.len(), "one scale per level");
        let c = self.value(levels[0]).chw().0;
        let s = params.output_size;
        let width = c * s * s;
        let mut out = vec![0.0f32; rois.len() * width];
        for (r, roi) in rois.iter().enumerate() {
            let fm = self.value(levels[roi.level]);
            let (fc, h, w) = fm.chw();
            assert_eq!(fc, c, "all pyramid levels need the same channel count");
            let bins = roi_taps(roi, params.level_scales[roi.level], h, w, params);
            let row = &mut out[r * width..(r + 1) * width];
            for ch in 0..c {
                let plane = &fm.data()[ch * h * w..(ch + 1) * h * w];
                for (b, taps) in bins.iter().enumerate() {
                    row[ch * s * s + b] = taps.iter().map(|&(i, wt)| plane[i] * wt).sum();
                }
            }
        }
        let levels = levels.to_vec();
        let rois = rois.to_vec();
        let params = params.clone();
        self.push(Tensor::new(&[rois.len(), width], out), &levels.clone(), move || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let mut grads: Vec<Option<Tensor>> = vec![None; levels.len()];
                for (r, roi) in rois.iter().enumerate() {
                    let lvl = roi.level;
                    if !g.requires_grad(levels[lvl]) {
                        continue;
                    }
                    let (_, h, w) = g.value(levels[lvl]).chw();
                    let grad = grads[lvl].get_or_insert_with(|| Tensor::zeros(&[c, h, w]));
                    let bins = roi_taps(roi, params.level_scales[lvl], h, w, &params);
                    let row = &gy.data()[r * width..(r + 1) * width];
                    for ch in 0..c {
                        let plane = &mut grad.data_mut()[ch * h * w..(ch + 1) * h * w];
                        for (b, taps) in bins.iter().enumerate() {
                            let go = row[ch * s * s + b];
                            if go == 0.0 {
                                continue;
                            }
                            for &(i, wt) in taps {
                                plane[i] += go * wt;
                            }
                        }
                    }
                }
                levels
                    .iter()
                    .zip(grads)
                    .filter_map(|(&v, gr)| gr.map(|t| (v, t)))
                    .collect()
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_pools_to_constant() {
        let mut g = Graph::inference();
        let fm = g.input(Tensor::full(&[2, 8, 8], 3.0));
        let params = RoiAlignParams {
            output_size: 2,
            sampling_ratio: 2,
            level_scales: vec![1.0],
        };
        let roi = Roi {
            x_min: 1.0,
            y_min: 1.0,
            x_max: 5.0,
            y_max: 6.0,
            level: 0,
        };
        let out = g.roi_align(&[fm], &[roi], &params);
        assert_eq!(g.value(out).shape(), [1, 8]);
        for v in g.value(out).data() {
            assert!((v - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_ramp_is_sampled_at_bin_centres() {
        // f(y, x) = x, so each bin averages to the x coordinate of its centre.
        let mut data = vec![0.0; 16 * 16];
        for y in 0..16 {
            for x in 0..16 {
                data[y * 16 + x] = x as f32;
            }
        }
        let mut g = Graph::inference();
        let fm = g.input(Tensor::new(&[1, 16, 16], data));
        let params = RoiAlignParams {
            output_size: 2,
            sampling_ratio: 2,
            level_scales: vec![0.5],
        };
        let roi = Roi {
            x_min: 4.0,
            y_min: 4.0,
            x_max: 12.0,
            y_max: 12.0,
            level: 0,
        };
        let out = g.roi_align(&[fm], &[roi], &params);
        // feature-space roi spans x in [2, 6]; bin centres at 3 and 5
        let v = g.value(out).data();
        assert!((v[0] - 3.0).abs() < 1e-5 && (v[1] - 5.0).abs() < 1e-5, "{v:?}");
    }
}
