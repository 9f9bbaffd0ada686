use aerodepth::dataio::{save_checkpoint, write_sample, DepthMap, Sample};
use aerodepth::harness::{
    compare_models, compare_uncertainty, depth_metrics, run_comparison, write_report, CorruptionGrid, EvalModel,
    Region, REPORT_CSV, REPORT_JSON, RMSE_PLOT, UNCERTAINTY_CSV,
};
use aerodepth::model::{ModelConfig, NetworkState};
use aerodepth::scenegen::{generate_sample, SceneParams};
use std::fs;
use std::path::Path;

const W: usize = 64;
const H: usize = 48;

fn samples() -> Vec<Sample> {
    let params = SceneParams {
        width: W,
        height: H,
        ..SceneParams::default()
    };
    (0..3)
        .map(|seed| generate_sample(seed + 40, &params, 0.05).unwrap())
        .collect()
}

fn checkpoint(dir: &Path, multitask: bool, dropout: f64, seed: u64) -> EvalModel {
    let cfg = ModelConfig {
        multitask,
        dropout,
        ..ModelConfig::tiny(W, H)
    };
    save_checkpoint(&NetworkState::init(&cfg, seed).unwrap(), &cfg, 1, dir).unwrap();
    EvalModel::load(dir).unwrap()
}

#[test]
fn metrics_follow_their_definitions() {
    let gt = DepthMap::new(4, 1, vec![0.0, 2.0, 4.0, 10.0]).unwrap();
    let pred = DepthMap::new(4, 1, vec![9.0, 3.0, 4.0, 6.0]).unwrap();
    let m = depth_metrics(&pred, &gt, None).unwrap();
    assert_eq!(m.count, 3);
    assert!((m.rmse - (17.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((m.mae - 5.0 / 3.0).abs() < 1e-12);
    assert!((m.rel - (0.5 + 0.0 + 0.4) / 3.0).abs() < 1e-12);
    // ratios 1.5, 1, 10/6
    assert!((m.delta1 - 1.0 / 3.0).abs() < 1e-12);
    assert!((m.delta2 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.delta3, 1.0);
    assert!(depth_metrics(&pred, &gt, Some(&[true, false, false, false])).is_err());
}

#[test]
fn self_comparison_has_zero_deltas_on_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let m = checkpoint(dir.path(), true, 0.2, 5);
    let data = samples();
    let report = compare_models(&m, &m, &data, &CorruptionGrid::default()).unwrap();
    assert_eq!(report.cells.len(), 8);
    let cells: Vec<(f64, bool)> = report.cells.iter().map(|c| (c.noise_level, c.masks_on)).collect();
    assert_eq!(
        cells,
        vec![
            (0.0, false),
            (0.0, true),
            (0.1, false),
            (0.1, true),
            (0.2, false),
            (0.2, true),
            (0.4, false),
            (0.4, true)
        ]
    );
    for c in &report.cells {
        assert_eq!((c.delta.rmse, c.delta.mae, c.delta.rel), (0.0, 0.0, 0.0));
        assert_eq!((c.delta.delta1, c.delta.delta2, c.delta.delta3), (0.0, 0.0, 0.0));
        assert_eq!(c.single, c.multi);
        assert_eq!(c.single.masked_rmse.is_some(), c.masks_on);
        for (a, b) in c.single.per_sample.iter().zip(&c.multi.per_sample) {
            assert_eq!(a.input_sha256, b.input_sha256);
        }
    }
    // clean and masked cells differ in their inputs; noise levels reuse the same draws
    assert_ne!(
        report.cells[0].single.per_sample[0].input_sha256,
        report.cells[1].single.per_sample[0].input_sha256
    );
    assert_ne!(
        report.cells[0].single.per_sample[0].input_sha256,
        report.cells[2].single.per_sample[0].input_sha256
    );
}

#[test]
fn single_task_cells_have_no_map() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let single = checkpoint(a.path(), false, 0.2, 1);
    let multi = checkpoint(b.path(), true, 0.2, 2);
    let grid = CorruptionGrid {
        noise_levels: vec![0.0],
        ..CorruptionGrid::default()
    };
    let report = compare_models(&single, &multi, &samples(), &grid).unwrap();
    assert_eq!(report.cells.len(), 2);
    for c in &report.cells {
        assert_eq!(c.single.map50, None);
        assert!(c.multi.map50.is_some());
        assert!((c.delta.rmse - (c.multi.aggregate.rmse - c.single.aggregate.rmse)).abs() < 1e-12);
    }
}

#[test]
fn mismatched_sizes_are_rejected() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let single = checkpoint(a.path(), false, 0.2, 1);
    let cfg = ModelConfig::tiny(W * 2, H);
    save_checkpoint(&NetworkState::init(&cfg, 0).unwrap(), &cfg, 1, b.path()).unwrap();
    let multi = EvalModel::load(b.path()).unwrap();
    assert!(compare_models(&single, &multi, &samples(), &CorruptionGrid::default()).is_err());
}

#[test]
fn zero_dropout_uncertainty_has_no_ratio() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let single = checkpoint(a.path(), false, 0.0, 1);
    let multi = checkpoint(b.path(), true, 0.0, 2);
    let u = compare_uncertainty(&single, &multi, &samples(), 3, 0).unwrap();
    assert_eq!(u.rows.len(), 4);
    let keys: Vec<(&str, Region)> = u.rows.iter().map(|r| (r.model.as_str(), r.region)).collect();
    assert_eq!(
        keys,
        vec![
            ("single", Region::InsideBoxes),
            ("single", Region::OutsideBoxes),
            ("multi", Region::InsideBoxes),
            ("multi", Region::OutsideBoxes)
        ]
    );
    assert!(u.rows.iter().all(|r| r.mean_variance == 0.0 && r.ratio.is_none()));
}

#[test]
fn report_files_are_written() {
    let root = tempfile::tempdir().unwrap();
    let (ca, cb, data, out) = (
        root.path().join("a"),
        root.path().join("b"),
        root.path().join("data"),
        root.path().join("out"),
    );
    let single = checkpoint(&ca, false, 0.2, 1);
    let multi = checkpoint(&cb, true, 0.2, 2);
    let set = samples();
    for (i, s) in set.iter().enumerate() {
        write_sample(s, &data.join(format!("{i:05}"))).unwrap();
    }
    let grid = CorruptionGrid::default();
    let mut report = run_comparison(&ca, &cb, &data, &grid).unwrap();
    assert_eq!(report, compare_models(&single, &multi, &set, &grid).unwrap());
    report.uncertainty = Some(compare_uncertainty(&single, &multi, &set, 2, 0).unwrap());
    let written = write_report(&report, &out).unwrap();
    for f in [REPORT_CSV, REPORT_JSON, RMSE_PLOT, UNCERTAINTY_CSV] {
        assert!(written.contains(&out.join(f)), "{f}");
    }
    assert!(written
        .iter()
        .any(|p| p.file_name().unwrap().to_string_lossy().starts_with("variance_multi_")));
    let csv = fs::read_to_string(out.join(REPORT_CSV)).unwrap();
    // header plus three rows per cell
    assert_eq!(csv.lines().count(), 1 + 8 * 3);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 8);
    assert_eq!(json["single"]["params_sha256"].as_str().unwrap().len(), 64);
}
