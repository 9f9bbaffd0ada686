//! Optimization loop: seeded shuffling, Adam, step-decayed learning rate,
//! gradient clipping, per-epoch metrics and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aerodepth_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{list_samples, read_sample, save_checkpoint, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    consistency_loss, depth_objective, detection_loss, total_loss, ConsistencyMode, LossParts, LossWeights,
};
use crate::model::{is_detection_key, predict, prepare_input, Mode, ModelConfig, ModelInput, NetworkState, Session};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_period: usize,
    /// Samples whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    pub weights: LossWeights,
    pub consistency_mode: ConsistencyMode,
    pub multitask: bool,
    /// Save `epoch_NNN/` every this many epochs; the final state is always saved.
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            base_lr: 1e-4,
            lr_halving_period: 5,
            batch_size: 1,
            weights: LossWeights::default(),
            consistency_mode: ConsistencyMode::Rmse,
            multitask: true,
            checkpoint_every: None,
            seed: 0,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 {
            return Err(Error::Invalid(
                "epochs, batch size and halving period must be >= 1".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {}", self.base_lr)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Invalid(format!("gradient clip {}", self.grad_clip)));
        }
        self.weights.validate()
    }
}

/// `base_lr * 0.5^floor(epoch / period)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * 0.5f64.powi((epoch / cfg.lr_halving_period) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub l_consistency: f64,
    pub l_smoothness: f64,
    pub l_detection: f64,
    pub total: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,l_consistency,l_smoothness,l_detection,total\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{:e},{},{},{},{}\n",
            m.epoch, m.lr, m.l_consistency, m.l_smoothness, m.l_detection, m.total
        ));
    }
    out
}

/// Adam with per-parameter step counts; parameters that never receive a
/// gradient are never touched.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>, i32)>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, state: &mut NetworkState, grads: &BTreeMap<String, Tensor>, lr: f64) {
        for (name, g) in grads {
            let p = state.get_mut(name).expect("gradient for a known parameter");
            let (m, v, t) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()], 0));
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t);
            let bc2 = 1.0 - self.beta2.powi(*t);
            let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi as f64 / bc1;
                let vhat = *vi as f64 / bc2;
                *w -= (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

/// Loss parts of one forward/backward pass plus parameter gradients by name.
pub struct StepResult {
    pub parts: LossParts,
    pub total: f64,
    pub grads: BTreeMap<String, Tensor>,
}

/// Forward and backward pass on one sample.
pub fn compute_gradients(
    state: &NetworkState,
    mcfg: &ModelConfig,
    cfg: &TrainConfig,
    input: &ModelInput,
    sample: &Sample,
    seed: u64,
) -> Result<StepResult> {
    let mut session = Session::new(state, mcfg, Mode::Train { seed });
    let feats = session.forward_encoder(input)?;
    let depth = session.forward_depth(&feats);
    let pred: Vec<f64> = session.graph.value(depth).data().iter().map(|&v| v as f64).collect();
    let (lc, ls, grad) = depth_objective(&pred, &sample.dense_depth, &cfg.weights, cfg.consistency_mode)?;
    let shape = session.graph.value(depth).shape().to_vec();
    let mut seeds = vec![(depth, Tensor::new(&shape, grad.iter().map(|&g| g as f32).collect()))];
    let mut parts = LossParts {
        consistency: lc,
        smoothness: ls,
        detection: 0.0,
    };
    if mcfg.multitask {
        let out = session.forward_detection(&feats, Some(&sample.boxes))?;
        let terms = out.terms.expect("training mode yields loss terms");
        parts.detection = detection_loss(&terms, cfg.weights.lambda);
        let wd = cfg.weights.w_detection as f32;
        let wf = (cfg.weights.w_detection * cfg.weights.lambda) as f32;
        for (v, mut g) in out.proposal_seeds {
            g.scale(wd);
            seeds.push((v, g));
        }
        for (v, mut g) in out.final_seeds {
            g.scale(wf);
            seeds.push((v, g));
        }
    }
    let total = total_loss(&parts, &cfg.weights, mcfg.multitask);
    let mut raw = session.graph.backward(seeds);
    let grads = session
        .bound_params()
        .iter()
        .filter_map(|(name, &var)| raw.take(var).map(|g| (name.clone(), g)))
        .collect();
    Ok(StepResult { parts, total, grads })
}

fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.scale(f);
        }
    }
    norm
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub config: ModelConfig,
    pub metrics: Vec<EpochMetrics>,
    /// Final checkpoint directory when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Trains `state` on in-memory samples. With `out_dir`, writes
/// `metrics.csv`, periodic `epoch_NNN/` checkpoints and the final checkpoint.
pub fn train_samples(
    samples: &[Sample],
    mut state: NetworkState,
    mcfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut mcfg = mcfg.clone();
    mcfg.multitask = cfg.multitask;
    mcfg.validate()?;
    state.check(&mcfg)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset(out_dir.map(Path::to_path_buf).unwrap_or_default()));
    }
    let inputs = samples
        .iter()
        .map(|s| prepare_input(&s.rgb, &s.sparse_depth, &mcfg))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = Adam::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        shuffle(&mut order, mix(cfg.seed, epoch as u64));
        let mut sums = [0.0f64; 4];
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for &i in batch {
                let r = compute_gradients(
                    &state,
                    &mcfg,
                    cfg,
                    &inputs[i],
                    &samples[i],
                    mix(cfg.seed ^ 0xA5A5, step as u64),
                )?;
                let finite = [r.parts.consistency, r.parts.smoothness, r.parts.detection, r.total]
                    .iter()
                    .all(|v| v.is_finite())
                    && r.grads.values().all(Tensor::is_finite);
                if !finite {
                    return Err(Error::NonFinite {
                        epoch,
                        step: batch_idx,
                        detail: format!("loss parts {:?}, total {}", r.parts, r.total),
                    });
                }
                sums[0] += r.parts.consistency;
                sums[1] += r.parts.smoothness;
                sums[2] += r.parts.detection;
                sums[3] += r.total;
                for (k, g) in r.grads {
                    match acc.get_mut(&k) {
                        Some(a) => a.add_assign(&g),
                        None => {
                            acc.insert(k, g);
                        }
                    }
                }
                step += 1;
            }
            if batch.len() > 1 {
                for g in acc.values_mut() {
                    g.scale(1.0 / batch.len() as f32);
                }
            }
            debug_assert!(mcfg.multitask || acc.keys().all(|k| !is_detection_key(k)));
            clip_global_norm(&mut acc, cfg.grad_clip);
            adam.step(&mut state, &acc, lr);
        }
        let n = samples.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            lr,
            l_consistency: sums[0] / n,
            l_smoothness: sums[1] / n,
            l_detection: sums[2] / n,
            total: sums[3] / n,
        });
        if let (Some(dir), Some(every)) = (out_dir, cfg.checkpoint_every) {
            if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.epochs {
                save_checkpoint(&state, &mcfg, epoch + 1, &dir.join(format!("epoch_{:03}", epoch + 1)))?;
            }
        }
    }

    let checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join(METRICS_FILE);
            fs::write(&path, metrics_csv(&metrics)).map_err(|e| Error::io(&path, e))?;
            Some(save_checkpoint(&state, &mcfg, cfg.epochs, dir)?)
        }
        None => None,
    };
    Ok(TrainOutcome {
        state,
        config: mcfg,
        metrics,
        checkpoint,
    })
}

fn shuffle(order: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Reads every sample under `data_dir`, initializes from `cfg.seed` and trains.
/// The model input size is taken from the samples.
pub fn train(data_dir: &Path, out_dir: &Path, cfg: &TrainConfig, mcfg: &ModelConfig) -> Result<TrainOutcome> {
    let dirs = list_samples(data_dir)?;
    if dirs.is_empty() {
        return Err(Error::EmptyDataset(data_dir.to_path_buf()));
    }
    let samples = dirs.iter().map(|d| read_sample(d)).collect::<Result<Vec<_>>>()?;
    let (w, h) = (samples[0].width(), samples[0].height());
    if let Some(s) = samples.iter().find(|s| (s.width(), s.height()) != (w, h)) {
        return Err(Error::Shape(format!(
            "mixed sample sizes {w}x{h} and {}x{}",
            s.width(),
            s.height()
        )));
    }
    let mut mcfg = mcfg.clone();
    mcfg.multitask = cfg.multitask;
    (mcfg.width, mcfg.height) = (w, h);
    let state = NetworkState::init(&mcfg, cfg.seed)?;
    train_samples(&samples, state, &mcfg, cfg, Some(out_dir))
}

/// Copies every shared (non-detection) parameter of `single` into `multi`.
pub fn embed_single_into_multi(
    single: &NetworkState,
    single_cfg: &ModelConfig,
    multi: &NetworkState,
    multi_cfg: &ModelConfig,
) -> Result<NetworkState> {
    let mut a = single_cfg.clone();
    let mut b = multi_cfg.clone();
    a.multitask = true;
    b.multitask = true;
    if a != b {
        return Err(Error::KeyMismatch("configs differ beyond the multitask flag".into()));
    }
    single.check(single_cfg)?;
    multi.check(multi_cfg)?;
    let mut out = multi.clone();
    for (name, t) in single.iter().filter(|(k, _)| !is_detection_key(k)) {
        let slot = out
            .get_mut(name)
            .ok_or_else(|| Error::KeyMismatch(format!("{name} missing from the multi-task state")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", slot.shape(), t.shape())));
        }
        *slot = t.clone();
    }
    Ok(out)
}

/// Mean deterministic-inference consistency loss over `samples`.
pub fn mean_consistency(
    samples: &[Sample],
    state: &NetworkState,
    mcfg: &ModelConfig,
    mode: ConsistencyMode,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset(PathBuf::new()));
    }
    let mut total = 0.0;
    for s in samples {
        let (depth, _) = predict(&s.rgb, &s.sparse_depth, state, mcfg)?;
        total += consistency_loss(&depth, &s.dense_depth, mode)?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_period() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(4, &cfg), 1e-4);
        assert_eq!(lr_at(5, &cfg), 5e-5);
        assert_eq!(lr_at(12, &cfg), 2.5e-5);
        for e in 0..40 {
            assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = ModelConfig::tiny(32, 32);
        let mut state = NetworkState::init(&cfg, 0).unwrap();
        let before = state.get("decoder.out.b").unwrap().data()[0];
        let mut grads = BTreeMap::new();
        grads.insert("decoder.out.b".to_string(), Tensor::new(&[1], vec![3.0]));
        Adam::new().step(&mut state, &grads, 0.01);
        let after = state.get("decoder.out.b").unwrap().data()[0];
        assert!((before - after - 0.01).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::new(&[2], vec![30.0, 40.0]));
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g["a"].sum_sq().sqrt() - 10.0).abs() < 1e-5);
    }

    #[test]
    fn metrics_csv_header() {
        let csv = metrics_csv(&[EpochMetrics {
            epoch: 0,
            lr: 1e-4,
            l_consistency: 1.0,
            l_smoothness: 0.5,
            l_detection: 0.0,
            total: 1.05,
        }]);
        assert!(csv.starts_with("epoch,lr,l_consistency,l_smoothness,l_detection,total\n0,"));
    }
}
