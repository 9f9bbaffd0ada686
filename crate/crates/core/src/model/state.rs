use std::collections::BTreeMap;

use aerodepth_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Key prefix of every detection-pathway parameter.
pub const DETECTION_PREFIX: &str = "detection.";

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    Kaiming(usize),
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn add(&mut self, name: String, shape: &[usize], init: Init) {
        self.0.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
    }

    fn conv(&mut self, name: &str, o: usize, c: usize, k: usize) {
        self.add(format!("{name}.w"), &[o, c, k, k], Init::Kaiming(c * k * k));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.add(format!("{name}.g"), &[c], Init::Ones);
        self.add(format!("{name}.b"), &[c], Init::Zeros);
    }

    fn conv_bias(&mut self, name: &str, o: usize, c: usize, k: usize, init: Init) {
        self.add(format!("{name}.w"), &[o, c, k, k], init);
        self.add(format!("{name}.b"), &[o], Init::Zeros);
    }

    fn linear(&mut self, name: &str, o: usize, i: usize, init: Init) {
        self.add(format!("{name}.w"), &[o, i], init);
        self.add(format!("{name}.b"), &[o], Init::Zeros);
    }
}

/// Every learnable tensor of the network in a fixed order.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    s.conv("stem.depth.conv", cfg.depth_stem_channels, 1, 3);
    s.norm("stem.depth.gn", cfg.depth_stem_channels);
    s.conv("stem.rgb.conv", cfg.rgb_stem_channels, 3, 3);
    s.norm("stem.rgb.gn", cfg.rgb_stem_channels);

    let mut c_in = cfg.stem_channels();
    for (i, (&c, &blocks)) in cfg.encoder_channels.iter().zip(&cfg.encoder_blocks).enumerate() {
        for b in 0..blocks {
            let p = format!("encoder.stage{}.block{b}", i + 1);
            let cin = if b == 0 { c_in } else { c };
            s.conv(&format!("{p}.conv1"), c, cin, 3);
            s.norm(&format!("{p}.gn1"), c);
            s.conv(&format!("{p}.conv2"), c, c, 3);
            s.norm(&format!("{p}.gn2"), c);
            if b == 0 {
                s.conv(&format!("{p}.proj"), c, cin, 1);
                s.norm(&format!("{p}.proj_gn"), c);
            }
        }
        c_in = c;
    }
    s.conv("bottleneck.conv", cfg.bottleneck_channels, c_in, 3);
    s.norm("bottleneck.gn", cfg.bottleneck_channels);

    let enc = &cfg.encoder_channels;
    let mut prev = cfg.bottleneck_channels;
    for (k, &c) in cfg.decoder_channels.iter().enumerate() {
        let cin = prev + enc[4 - k];
        // kernel 4, stride 2: each output sees cin * 4 inputs
        s.add(
            format!("decoder.up{}.w", k + 1),
            &[cin, c, 4, 4],
            Init::Kaiming(cin * 4),
        );
        s.norm(&format!("decoder.up{}.gn", k + 1), c);
        prev = c;
    }
    s.conv_bias("decoder.out", 1, prev + cfg.stem_channels(), 3, Init::Normal(1e-3));

    let f = cfg.fpn_channels;
    for (l, &c) in enc[1..].iter().enumerate() {
        s.conv_bias(&format!("detection.fpn.lateral{}", l + 2), f, c, 1, Init::Kaiming(c));
        s.conv_bias(&format!("detection.fpn.output{}", l + 2), f, f, 3, Init::Kaiming(f * 9));
    }
    let a = cfg.num_anchors();
    s.conv_bias("detection.rpn.conv", f, f, 3, Init::Normal(0.01));
    s.conv_bias("detection.rpn.objectness", a, f, 1, Init::Normal(0.01));
    s.conv_bias("detection.rpn.deltas", 4 * a, f, 1, Init::Normal(0.01));
    let d = &cfg.detection;
    let pooled = f * d.roi_output_size * d.roi_output_size;
    let k1 = cfg.num_classes + 1;
    s.linear("detection.roi.fc1", d.roi_fc_dim, pooled, Init::Kaiming(pooled));
    s.linear(
        "detection.roi.fc2",
        d.roi_fc_dim,
        d.roi_fc_dim,
        Init::Kaiming(d.roi_fc_dim),
    );
    s.linear("detection.roi.cls", k1, d.roi_fc_dim, Init::Normal(0.01));
    s.linear("detection.roi.deltas", 4 * k1, d.roi_fc_dim, Init::Normal(0.001));
    s.0
}

/// All learnable parameters, keyed by module path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkState {
    params: BTreeMap<String, Tensor>,
}

impl NetworkState {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Kaiming(fan_in) => sample_normal(&mut rng, (2.0 / fan_in as f64).sqrt(), n),
                Init::Normal(std) => sample_normal(&mut rng, std, n),
            };
            params.insert(spec.name, Tensor::new(&spec.shape, data));
        }
        Ok(Self { params })
    }

    /// Builds a state from explicit tensors, checking them against `cfg`.
    pub fn from_params(cfg: &ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        let state = Self { params };
        state.check(cfg)?;
        Ok(state)
    }

    /// Verifies that keys and shapes are exactly those `cfg` requires.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            match self.params.get(&spec.name) {
                None => return Err(Error::KeyMismatch(format!("missing parameter {}", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Shape(format!(
                        "parameter {} has shape {:?}, config needs {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if self.params.len() != specs.len() {
            let extra = self
                .params
                .keys()
                .find(|k| !specs.iter().any(|s| &s.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::KeyMismatch(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }

    /// Sets every parameter to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }
}

pub fn is_detection_key(name: &str) -> bool {
    name.starts_with(DETECTION_PREFIX)
}

fn sample_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f32> {
    let dist = Normal::new(0.0, std).expect("finite positive std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}
