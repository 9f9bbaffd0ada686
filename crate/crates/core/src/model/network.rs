use std::collections::HashMap;

use aerodepth_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{DepthMap, RgbImage, SparseDepthMap};
use crate::error::{Error, Result};
use crate::model::{norm_groups, ModelConfig, NetworkState};

const GN_EPS: f32 = 1e-5;
const RGB_MEAN: f32 = 0.5;
const RGB_STD: f32 = 0.25;

/// Network-ready tensors for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub width: usize,
    pub height: usize,
    /// `[3, H, W]`, standardized.
    pub rgb: Tensor,
    /// `[1, H, W]`, sparse depth divided by `scale`; zero where missing.
    pub sparse: Tensor,
    /// Per-image depth unit in meters: the mean valid sparse depth over
    /// `ln 2`, so a zero pre-activation decodes to that mean.
    pub scale: f32,
}

/// Normalizes an RGB image and a sparse map into a [`ModelInput`].
pub fn prepare_input(rgb: &RgbImage, sparse: &SparseDepthMap, cfg: &ModelConfig) -> Result<ModelInput> {
    let (w, h) = (rgb.width(), rgb.height());
    if sparse.width() != w || sparse.height() != h {
        return Err(Error::Shape(format!(
            "rgb {w}x{h} vs sparse {}x{}",
            sparse.width(),
            sparse.height()
        )));
    }
    if w < 32 || h < 32 {
        return Err(Error::Shape(format!("input {w}x{h} smaller than 32")));
    }
    let values = sparse.map.values();
    let valid: Vec<f64> = values.iter().filter(|&&v| v > 0.0).map(|&v| v as f64).collect();
    let mean = if valid.is_empty() {
        cfg.fallback_depth_scale
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    let scale = (mean / std::f64::consts::LN_2) as f32;
    let mut planes = vec![0.0f32; 3 * w * h];
    for (i, px) in rgb.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            planes[c * w * h + i] = (px[c] as f32 / 255.0 - RGB_MEAN) / RGB_STD;
        }
    }
    Ok(ModelInput {
        width: w,
        height: h,
        rgb: Tensor::new(&[3, h, w], planes),
        sparse: Tensor::new(&[1, h, w], values.iter().map(|v| v / scale).collect()),
        scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// No tape, no dropout.
    Infer,
    /// Tape recorded, dropout and detector sampling drawn from `seed`.
    Train { seed: u64 },
    /// No tape, dropout active.
    McDropout { seed: u64 },
}

/// Fused stem output and the five stage outputs (strides 2..32 of the padded input).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures {
    pub stem: Var,
    pub stages: Vec<Var>,
    pub width: usize,
    pub height: usize,
    pub padded_width: usize,
    pub padded_height: usize,
    /// Depth unit of the input, meters.
    pub scale: f32,
}

pub struct Session<'a> {
    pub graph: Graph,
    pub(crate) state: &'a NetworkState,
    pub(crate) cfg: &'a ModelConfig,
    bound: HashMap<String, Var>,
    pub(crate) rng: ChaCha8Rng,
    dropout: bool,
    training: bool,
}

impl<'a> Session<'a> {
    pub fn new(state: &'a NetworkState, cfg: &'a ModelConfig, mode: Mode) -> Self {
        let (graph, seed, dropout, training) = match mode {
            Mode::Infer => (Graph::inference(), 0, false, false),
            Mode::Train { seed } => (Graph::new(), seed, true, true),
            Mode::McDropout { seed } => (Graph::inference(), seed, true, false),
        };
        Self {
            graph,
            state,
            cfg,
            bound: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dropout: dropout && cfg.dropout > 0.0,
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// Parameters placed on the tape so far.
    pub fn bound_params(&self) -> &HashMap<String, Var> {
        &self.bound
    }

    pub(crate) fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .state
            .get(name)
            .unwrap_or_else(|| panic!("state has no parameter {name}"))
            .clone();
        let v = self.graph.param(value);
        self.bound.insert(name.to_owned(), v);
        v
    }

    fn gn_relu(&mut self, x: Var, name: &str) -> Var {
        let y = self.gn(x, name);
        self.graph.relu(y)
    }

    fn gn(&mut self, x: Var, name: &str) -> Var {
        let c = self.graph.value(x).chw().0;
        let (g, b) = (self.p(&format!("{name}.g")), self.p(&format!("{name}.b")));
        self.graph
            .group_norm(x, g, b, norm_groups(c, self.cfg.norm_groups), GN_EPS)
    }

    pub(crate) fn conv(&mut self, x: Var, name: &str, stride: usize, pad: usize, bias: bool) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = bias.then(|| self.p(&format!("{name}.b")));
        self.graph.conv2d(x, w, b, stride, pad)
    }

    fn dropout(&mut self, x: Var) -> Var {
        if !self.dropout {
            return x;
        }
        let p = self.cfg.dropout;
        let keep = (1.0 / (1.0 - p)) as f32;
        let shape = self.graph.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.graph.mul_const(x, Tensor::new(&shape, mask))
    }

    fn basic_block(&mut self, x: Var, name: &str, stride: usize, project: bool) -> Var {
        let y = self.conv(x, &format!("{name}.conv1"), stride, 1, false);
        let y = self.gn_relu(y, &format!("{name}.gn1"));
        let y = self.conv(y, &format!("{name}.conv2"), 1, 1, false);
        let y = self.gn(y, &format!("{name}.gn2"));
        let shortcut = if project {
            let s = self.conv(x, &format!("{name}.proj"), stride, 0, false);
            self.gn(s, &format!("{name}.proj_gn"))
        } else {
            x
        };
        let sum = self.graph.add(y, shortcut);
        self.graph.relu(sum)
    }

    /// Stems at stride 1, fusion by concatenation, then five residual stages.
    pub fn forward_encoder(&mut self, input: &ModelInput) -> Result<EncoderFeatures> {
        let (w, h) = (input.width, input.height);
        if input.rgb.shape() != [3, h, w] || input.sparse.shape() != [1, h, w] {
            return Err(Error::Shape(format!(
                "rgb {:?} / sparse {:?} for {w}x{h}",
                input.rgb.shape(),
                input.sparse.shape()
            )));
        }
        if w < 32 || h < 32 {
            return Err(Error::Shape(format!("input {w}x{h} smaller than 32")));
        }
        let (pw, ph) = (w.div_ceil(32) * 32, h.div_ceil(32) * 32);
        let rgb = self.graph.input(input.rgb.clone());
        let sparse = self.graph.input(input.sparse.clone());
        let rgb = self.graph.reflect_pad(rgb, ph, pw);
        let sparse = self.graph.reflect_pad(sparse, ph, pw);

        let d = self.conv(sparse, "stem.depth.conv", 1, 1, false);
        let d = self.gn_relu(d, "stem.depth.gn");
        let c = self.conv(rgb, "stem.rgb.conv", 1, 1, false);
        let c = self.gn_relu(c, "stem.rgb.gn");
        let stem = self.graph.concat(&[d, c]);

        let mut x = stem;
        let mut stages = Vec::with_capacity(5);
        for (i, &blocks) in self.cfg.encoder_blocks.iter().enumerate() {
            for b in 0..blocks {
                let name = format!("encoder.stage{}.block{b}", i + 1);
                x = self.basic_block(x, &name, if b == 0 { 2 } else { 1 }, b == 0);
            }
            stages.push(x);
        }
        Ok(EncoderFeatures {
            stem,
            stages,
            width: w,
            height: h,
            padded_width: pw,
            padded_height: ph,
            scale: input.scale,
        })
    }

    /// Bottleneck, five upsampling stages with skip connections, and the
    /// positive depth projection. Returns `[1, H, W]` in meters.
    pub fn forward_depth(&mut self, feats: &EncoderFeatures) -> Var {
        let top = feats.stages[4];
        let b = self.conv(top, "bottleneck.conv", 1, 1, false);
        let mut x = self.gn_relu(b, "bottleneck.gn");
        for k in 0..5 {
            let cat = self.graph.concat(&[x, feats.stages[4 - k]]);
            let w = self.p(&format!("decoder.up{}.w", k + 1));
            let u = self.graph.conv_transpose2d(cat, w, None, 2, 1);
            let u = self.gn_relu(u, &format!("decoder.up{}.gn", k + 1));
            x = self.dropout(u);
        }
        let cat = self.graph.concat(&[x, feats.stem]);
        let o = self.conv(cat, "decoder.out", 1, 1, true);
        let o = self.graph.softplus(o);
        let o = self.graph.crop(o, feats.height, feats.width);
        self.graph.scale(o, feats.scale)
    }

    /// Reads a depth output back as a [`DepthMap`].
    pub fn depth_map(&self, depth: Var) -> Result<DepthMap> {
        let t = self.graph.value(depth);
        let (_, h, w) = t.chw();
        DepthMap::new(w, h, t.data().to_vec())
            .map_err(|e| Error::Invalid(format!("network produced an invalid depth map: {e}")))
    }
}
