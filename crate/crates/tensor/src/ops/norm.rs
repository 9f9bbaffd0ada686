use crate::{Graph, Tensor, Var};

/// Per-group statistics cached for the reverse pass.
struct GroupStats {
    mean: Vec<f32>,
    rstd: Vec<f32>,
}

fn group_stats(x: &Tensor, groups: usize, eps: f32) -> GroupStats {
    let (c, h, w) = x.chw();
    assert!(
        groups > 0 && c % groups == 0,
        "{c} channels not divisible into {groups} groups"
    );
    let len = (c / groups) * h * w;
    let mut mean = Vec::with_capacity(groups);
    let mut rstd = Vec::with_capacity(groups);
    for chunk in x.data().chunks(len) {
        let m = chunk.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
        let var = chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / len as f64;
        mean.push(m as f32);
        rstd.push((1.0 / (var + eps as f64).sqrt()) as f32);
    }
    GroupStats { mean, rstd }
}

pub fn group_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f32) -> Tensor {
    let (c, h, w) = x.chw();
    assert_eq!(gamma.shape(), [c]);
    assert_eq!(beta.shape(), [c]);
    let stats = group_stats(x, groups, eps);
    let plane = h * w;
    let per_group = c / groups;
    let mut out = x.clone();
    for (ch, vals) in out.data_mut().chunks_mut(plane).enumerate() {
        let grp = ch / per_group;
        let (m, r) = (stats.mean[grp], stats.rstd[grp]);
        let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
        for v in vals {
            *v = (*v - m) * r * ga + be;
        }
    }
    out
}

impl Graph {
    /// Group normalization over `[c, h, w]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f32) -> Var {
        let value = group_norm_forward(self.value(x), self.value(gamma), self.value(beta), groups, eps);
        self.push(value, &[x, gamma, beta], || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let xv = g.value(x);
                let gam = g.value(gamma);
                let (c, h, w) = xv.chw();
                let plane = h * w;
                let per_group = c / groups;
                let n = (per_group * plane) as f64;
                let stats = group_stats(xv, groups, eps);
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                let mut dx = vec![0.0f32; c * plane];
                for grp in 0..groups {
                    let (m, r) = (stats.mean[grp], stats.rstd[grp]);
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for ch in grp * per_group..(grp + 1) * per_group {
                        let xs = &xv.data()[ch * plane..(ch + 1) * plane];
                        let gs = &gy.data()[ch * plane..(ch + 1) * plane];
                        let mut dga = 0.0f64;
                        let mut dbe = 0.0f64;
                        for (&xi, &gi) in xs.iter().zip(gs) {
                            let xhat = ((xi - m) * r) as f64;
                            dga += gi as f64 * xhat;
                            dbe += gi as f64;
                        }
                        dgamma[ch] = dga as f32;
                        dbeta[ch] = dbe as f32;
                        let ga = gam.data()[ch] as f64;
                        sum_dxhat += dbe * ga;
                        sum_dxhat_xhat += dga * ga;
                    }
                    for ch in grp * per_group..(grp + 1) * per_group {
                        let ga = gam.data()[ch] as f64;
                        let xs = &xv.data()[ch * plane..(ch + 1) * plane];
                        let gs = &gy.data()[ch * plane..(ch + 1) * plane];
                        let ds = &mut dx[ch * plane..(ch + 1) * plane];
                        for ((d, &xi), &gi) in ds.iter_mut().zip(xs).zip(gs) {
                            let xhat = ((xi - m) * r) as f64;
                            let dxhat = gi as f64 * ga;
                            *d = (r as f64 / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)) as f32;
                        }
                    }
                }
                vec![
                    (x, Tensor::new(&[c, h, w], dx)),
                    (gamma, Tensor::new(&[c], dgamma)),
                    (beta, Tensor::new(&[c], dbeta)),
                ]
            })
        })
    }
}
