use aerodepth::dataio::{load_checkpoint, write_sample, Sample};
use aerodepth::model::{is_detection_key, predict, ModelConfig, NetworkState};
use aerodepth::scenegen::{generate_sample, SceneParams};
use aerodepth::trainer::{embed_single_into_multi, lr_at, train, train_samples, TrainConfig, METRICS_FILE};
use aerodepth::Error;
use std::fs;

const W: usize = 64;
const H: usize = 48;

fn samples(n: u64) -> Vec<Sample> {
    let params = SceneParams {
        width: W,
        height: H,
        ..SceneParams::default()
    };
    (0..n)
        .map(|seed| generate_sample(seed, &params, 0.05).unwrap())
        .collect()
}

fn quick(multitask: bool) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        multitask,
        base_lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 1e-4);
    assert_eq!(lr_at(4, &cfg), 1e-4);
    assert_eq!(lr_at(5, &cfg), 5e-5);
    assert_eq!(lr_at(12, &cfg), 2.5e-5);
}

#[test]
fn single_task_training_leaves_detection_parameters_untouched() {
    let cfg = ModelConfig::tiny(W, H);
    let init = NetworkState::init(&cfg, 3).unwrap();
    let out = train_samples(&samples(3), init.clone(), &cfg, &quick(false), None).unwrap();
    let mut changed_shared = false;
    for (k, v) in init.iter() {
        let after = out.state.get(k).unwrap();
        if is_detection_key(k) {
            let same = v
                .data()
                .iter()
                .zip(after.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{k} moved");
        } else if v != after {
            changed_shared = true;
        }
    }
    assert!(changed_shared);
    assert!(out.metrics.iter().all(|m| m.l_detection == 0.0));
}

#[test]
fn multitask_training_moves_the_shared_encoder() {
    let cfg = ModelConfig::tiny(W, H);
    let init = NetworkState::init(&cfg, 4).unwrap();
    let data: Vec<Sample> = samples(12)
        .into_iter()
        .filter(|s| !s.boxes.is_empty())
        .take(2)
        .collect();
    let tc = TrainConfig {
        epochs: 1,
        ..quick(true)
    };
    let out = train_samples(&data, init.clone(), &cfg, &tc, None).unwrap();
    assert!(init
        .iter()
        .any(|(k, v)| k.starts_with("encoder.") && v != out.state.get(k).unwrap()));
    assert!(init
        .iter()
        .any(|(k, v)| is_detection_key(k) && v != out.state.get(k).unwrap()));
    assert!(out.metrics[0].l_detection > 0.0);
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = tempfile::tempdir().unwrap();
    for (i, s) in samples(3).iter().enumerate() {
        write_sample(s, &data.path().join(format!("{i:05}"))).unwrap();
    }
    let cfg = ModelConfig::tiny(W, H);
    let tc = TrainConfig {
        checkpoint_every: Some(1),
        ..quick(true)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(data.path(), a.path(), &tc, &cfg).unwrap();
    let rb = train(data.path(), b.path(), &tc, &cfg).unwrap();
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(ra.state, rb.state);
    let csv = fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(csv, fs::read_to_string(b.path().join(METRICS_FILE)).unwrap());
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,lr,l_consistency,l_smoothness,l_detection,total"));
    assert_eq!(load_checkpoint(&a.path().join("epoch_001")).unwrap().epoch, 1);
    let last = load_checkpoint(a.path()).unwrap();
    assert_eq!((last.epoch, last.state), (2, ra.state));
}

#[test]
fn empty_dataset_is_an_error() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let r = train(data.path(), out.path(), &quick(true), &ModelConfig::tiny(W, H));
    assert!(matches!(r, Err(Error::EmptyDataset(_))));
    let r = train_samples(
        &[],
        NetworkState::init(&ModelConfig::tiny(W, H), 0).unwrap(),
        &ModelConfig::tiny(W, H),
        &quick(true),
        None,
    );
    assert!(matches!(r, Err(Error::EmptyDataset(_))));
}

#[test]
fn embedding_copies_every_shared_parameter() {
    let multi_cfg = ModelConfig::tiny(W, H);
    let single_cfg = ModelConfig {
        multitask: false,
        ..multi_cfg.clone()
    };
    let single = NetworkState::init(&single_cfg, 10).unwrap();
    let multi = NetworkState::init(&multi_cfg, 11).unwrap();
    let merged = embed_single_into_multi(&single, &single_cfg, &multi, &multi_cfg).unwrap();
    for (k, v) in merged.iter() {
        let source = if is_detection_key(k) {
            multi.get(k)
        } else {
            single.get(k)
        };
        assert_eq!(Some(v), source, "{k}");
    }
    let s = &samples(1)[0];
    let (a, _) = predict(&s.rgb, &s.sparse_depth, &single, &single_cfg).unwrap();
    let (b, _) = predict(&s.rgb, &s.sparse_depth, &merged, &multi_cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn embedding_rejects_mismatched_configs() {
    let multi_cfg = ModelConfig::tiny(W, H);
    let other = ModelConfig::tiny(W * 2, H);
    let single = NetworkState::init(&other, 0).unwrap();
    let multi = NetworkState::init(&multi_cfg, 0).unwrap();
    assert!(embed_single_into_multi(&single, &other, &multi, &multi_cfg).is_err());
}
