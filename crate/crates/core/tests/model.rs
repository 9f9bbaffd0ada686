use aerodepth::dataio::{RgbImage, Sample};
use aerodepth::detgeom::iou;
use aerodepth::losses::LossWeights;
use aerodepth::model::{predict, predict_depth_stochastic, prepare_input, Mode, ModelConfig, NetworkState, Session};
use aerodepth::scenegen::{generate_sample, SceneParams};
use aerodepth::trainer::{compute_gradients, TrainConfig};

fn sample(w: usize, h: usize, seed: u64) -> Sample {
    let params = SceneParams {
        width: w,
        height: h,
        ..SceneParams::default()
    };
    generate_sample(seed, &params, 0.02).unwrap()
}

#[test]
fn depth_output_keeps_input_size() {
    for (w, h) in [(320, 240), (64, 64), (96, 160)] {
        let cfg = ModelConfig::tiny(w, h);
        let state = NetworkState::init(&cfg, 0).unwrap();
        let s = sample(w, h, 1);
        let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();
        let mut session = Session::new(&state, &cfg, Mode::Infer);
        let feats = session.forward_encoder(&input).unwrap();
        let (pw, ph) = (w.div_ceil(32) * 32, h.div_ceil(32) * 32);
        assert_eq!((feats.padded_width, feats.padded_height), (pw, ph));
        for (k, &stage) in feats.stages.iter().enumerate() {
            let f = 2usize << k;
            assert_eq!(
                session.graph.value(stage).shape(),
                [cfg.encoder_channels[k], ph / f, pw / f],
                "stage {k} at {w}x{h}"
            );
        }
        let depth = session.forward_depth(&feats);
        assert_eq!(session.graph.value(depth).shape(), [1, h, w]);
        let map = session.depth_map(depth).unwrap();
        assert!(map.values().iter().all(|v| v.is_finite() && *v > 0.0));
    }
}

#[test]
fn detection_pathway_has_five_pyramid_levels() {
    let (w, h) = (96, 64);
    let cfg = ModelConfig::tiny(w, h);
    let state = NetworkState::init(&cfg, 0).unwrap();
    let s = sample(w, h, 2);
    let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();
    let mut session = Session::new(&state, &cfg, Mode::Infer);
    let feats = session.forward_encoder(&input).unwrap();
    let out = session.forward_detection(&feats, None).unwrap();
    assert_eq!(out.fpn_levels.len(), 5);
    // P2..P5 at strides 4..32 of the padded input; P6 subsamples P5, keeping odd edges
    let sizes = [(24, 16), (12, 8), (6, 4), (3, 2), (2, 1)];
    for (&p, (w, h)) in out.fpn_levels.iter().zip(sizes) {
        assert_eq!(session.graph.value(p).shape(), [cfg.fpn_channels, h, w]);
    }
    assert!(out.terms.is_none());
}

#[test]
fn zero_weights_give_zero_stage_outputs() {
    let cfg = ModelConfig::tiny(64, 64);
    let state = NetworkState::init(&cfg, 0).unwrap().zeroed();
    let s = sample(64, 64, 3);
    let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();
    let mut session = Session::new(&state, &cfg, Mode::Infer);
    let feats = session.forward_encoder(&input).unwrap();
    for &stage in &feats.stages {
        assert!(session.graph.value(stage).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn inference_is_deterministic_and_independent_of_the_detection_flag() {
    let mut cfg = ModelConfig::tiny(64, 64);
    let state = NetworkState::init(&cfg, 5).unwrap();
    let s = sample(64, 64, 4);
    let (a, dets_a) = predict(&s.rgb, &s.sparse_depth, &state, &cfg).unwrap();
    let (b, dets_b) = predict(&s.rgb, &s.sparse_depth, &state, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(dets_a, dets_b);
    cfg.multitask = false;
    let (c, dets_c) = predict(&s.rgb, &s.sparse_depth, &state, &cfg).unwrap();
    assert_eq!(a, c);
    assert!(dets_c.is_empty());
}

#[test]
fn rgb_guides_the_depth_output() {
    let cfg = ModelConfig::tiny(64, 64);
    let state = NetworkState::init(&cfg, 6).unwrap();
    let s = sample(64, 64, 5);
    let (a, _) = predict(&s.rgb, &s.sparse_depth, &state, &cfg).unwrap();
    let flipped = RgbImage::new(64, 64, s.rgb.data().iter().map(|v| 255 - v).collect()).unwrap();
    let (b, _) = predict(&flipped, &s.sparse_depth, &state, &cfg).unwrap();
    assert_ne!(a, b);
}

#[test]
fn dropout_passes_follow_their_seed() {
    let cfg = ModelConfig::tiny(64, 64);
    let state = NetworkState::init(&cfg, 7).unwrap();
    let s = sample(64, 64, 6);
    let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();
    let a = predict_depth_stochastic(&input, &state, &cfg, 1).unwrap();
    let b = predict_depth_stochastic(&input, &state, &cfg, 1).unwrap();
    let c = predict_depth_stochastic(&input, &state, &cfg, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn encoder_grad_norm(grads: &std::collections::BTreeMap<String, aerodepth_tensor::Tensor>) -> f64 {
    grads
        .iter()
        .filter(|(k, _)| k.starts_with("encoder."))
        .map(|(_, g)| g.sum_sq())
        .sum()
}

#[test]
fn encoder_is_shared_by_both_objectives() {
    let cfg = ModelConfig::tiny(96, 64);
    let state = NetworkState::init(&cfg, 8).unwrap();
    let s = (0..20)
        .map(|seed| sample(96, 64, seed))
        .find(|s| !s.boxes.is_empty())
        .expect("a sample with structures");
    let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();

    let depth_only = TrainConfig {
        weights: LossWeights {
            w_consistency: 1.0,
            w_smoothness: 0.1,
            w_detection: 0.0,
            lambda: 0.0,
        },
        ..TrainConfig::default()
    };
    let mut single = cfg.clone();
    single.multitask = false;
    let r = compute_gradients(&state, &single, &depth_only, &input, &s, 1).unwrap();
    assert!(encoder_grad_norm(&r.grads) > 0.0);
    assert!(r.grads.keys().all(|k| !k.starts_with("detection.")));

    let detection_only = TrainConfig {
        weights: LossWeights {
            w_consistency: 0.0,
            w_smoothness: 0.0,
            w_detection: 1.0,
            lambda: 1.0,
        },
        ..TrainConfig::default()
    };
    let r = compute_gradients(&state, &cfg, &detection_only, &input, &s, 1).unwrap();
    assert!(r.parts.detection > 0.0);
    assert!(encoder_grad_norm(&r.grads) > 0.0);
    let decoder: f64 = r
        .grads
        .iter()
        .filter(|(k, _)| k.starts_with("decoder."))
        .map(|(_, g)| g.sum_sq())
        .sum();
    assert_eq!(decoder, 0.0);
}

#[test]
fn training_without_boxes_has_no_box_regression() {
    let cfg = ModelConfig::tiny(64, 64);
    let state = NetworkState::init(&cfg, 9).unwrap();
    let s = sample(64, 64, 7);
    let input = prepare_input(&s.rgb, &s.sparse_depth, &cfg).unwrap();
    let mut session = Session::new(&state, &cfg, Mode::Train { seed: 3 });
    let feats = session.forward_encoder(&input).unwrap();
    let out = session.forward_detection(&feats, Some(&[])).unwrap();
    let terms = out.terms.unwrap();
    assert_eq!(terms.rpn_box, 0.0);
    assert_eq!(terms.roi_box, 0.0);
    assert!(terms.rpn_objectness > 0.0 && terms.roi_classification > 0.0);
    assert!(out.detections.is_empty());

    let mut session = Session::new(&state, &cfg, Mode::Train { seed: 3 });
    let feats = session.forward_encoder(&input).unwrap();
    assert!(session.forward_detection(&feats, None).is_err());
}

#[test]
fn untrained_detections_respect_the_output_contract() {
    let cfg = ModelConfig::tiny(320, 240);
    let state = NetworkState::init(&cfg, 10).unwrap();
    let s = sample(320, 240, 8);
    let (_, dets) = predict(&s.rgb, &s.sparse_depth, &state, &cfg).unwrap();
    assert!(dets.len() <= cfg.detection.max_detections);
    for (i, a) in dets.iter().enumerate() {
        assert!(a.score > cfg.detection.score_threshold && a.score <= 1.0);
        assert!((1..=cfg.num_classes as u32).contains(&a.class_id));
        assert!(a.x_min >= 0.0 && a.y_min >= 0.0 && a.x_max <= 320.0 && a.y_max <= 240.0);
        assert!(a.x_min < a.x_max && a.y_min < a.y_max);
        if i > 0 {
            assert!(dets[i - 1].score >= a.score);
        }
        for b in &dets[i + 1..] {
            if a.class_id == b.class_id {
                assert!(iou(a, b) <= cfg.detection.nms_threshold);
            }
        }
    }
}
