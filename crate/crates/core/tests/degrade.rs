use aerodepth::dataio::{DepthMap, SparseDepthMap};
use aerodepth::degrade::{
    add_distance_noise, degrade_dense, mask_boxes, sample_count, sparsify, CorruptionSpec, MaskSpec, PixelRect,
};
use proptest::prelude::*;

fn ramp(w: usize, h: usize) -> DepthMap {
    DepthMap::new(w, h, (0..w * h).map(|i| 5.0 + (i % 97) as f32 * 0.25).collect()).unwrap()
}

fn constant_sparse(w: usize, h: usize, d: f32) -> SparseDepthMap {
    SparseDepthMap::new(DepthMap::filled(w, h, d).unwrap(), 1.0).unwrap()
}

#[test]
fn default_density_keeps_538_pixels() {
    assert_eq!(sample_count(0.007, 320, 240), 538);
    let dense = ramp(320, 240);
    for seed in 0..5 {
        let s = sparsify(&dense, 0.007, seed).unwrap();
        assert_eq!(s.valid_count(), 538);
        for (i, &v) in s.map.values().iter().enumerate() {
            assert!(v == 0.0 || v == dense.values()[i]);
        }
    }
}

#[test]
fn quarter_density_on_a_4x4_map() {
    let dense = ramp(4, 4);
    let s = sparsify(&dense, 0.25, 3).unwrap();
    assert_eq!(s.valid_count(), 4);
    assert_eq!(sparsify(&dense, 1.0, 3).unwrap().map, dense);
}

#[test]
fn sparse_pixels_spread_over_quadrants() {
    let dense = ramp(320, 240);
    // hypergeometric: 538 draws from 76800, a quarter of which are in each quadrant
    let (n, k) = (76800.0f64, 538.0f64);
    let sd = (k * 0.25 * 0.75 * (n - k) / (n - 1.0)).sqrt();
    for seed in 0..100 {
        let s = sparsify(&dense, 0.007, seed).unwrap();
        let mut q = [0usize; 4];
        for (i, &v) in s.map.values().iter().enumerate() {
            if v > 0.0 {
                let (x, y) = (i % 320, i / 320);
                q[(x >= 160) as usize + 2 * (y >= 120) as usize] += 1;
            }
        }
        for c in q {
            assert!((c as f64 - 134.5).abs() <= 4.0 * sd, "seed {seed}: {q:?}");
        }
    }
}

#[test]
fn noise_std_scales_with_distance() {
    let s = constant_sparse(1000, 100, 10.0);
    let noisy = add_distance_noise(&s, 0.1, 11).unwrap();
    let n = noisy.map.values().len() as f64;
    let mean = noisy.map.values().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = noisy
        .map
        .values()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    assert!((var.sqrt() - 1.0).abs() < 0.03, "std {}", var.sqrt());
    assert!((mean - 10.0).abs() < 0.02);
    assert_eq!(add_distance_noise(&s, 0.0, 11).unwrap(), s);
}

#[test]
fn noise_magnitude_grows_with_level() {
    let s = SparseDepthMap::new(ramp(64, 64), 1.0).unwrap();
    let dev = |level: f64| -> Vec<f64> {
        let noisy = add_distance_noise(&s, level, 5).unwrap();
        noisy
            .map
            .values()
            .iter()
            .zip(s.map.values())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .collect()
    };
    let (lo, hi) = (dev(0.05), dev(0.2));
    // shared draws: each pixel's error scales with the level
    for (a, b) in lo.iter().zip(&hi) {
        assert!(a <= b);
    }
}

#[test]
fn invalid_pixels_stay_invalid_under_noise() {
    let dense = ramp(40, 30);
    let s = sparsify(&dense, 0.1, 1).unwrap();
    let noisy = add_distance_noise(&s, 0.4, 2).unwrap();
    for (a, b) in s.map.values().iter().zip(noisy.map.values()) {
        assert_eq!(*a == 0.0, *b == 0.0);
    }
}

#[test]
fn masking_drops_exactly_the_covered_pixels() {
    let s = constant_sparse(32, 32, 7.0);
    let r = PixelRect {
        x: 5,
        y: 8,
        w: 10,
        h: 10,
    };
    let m = mask_boxes(&s, &[r]).unwrap();
    assert_eq!(m.valid_count(), 32 * 32 - 100);
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(m.map.get(x, y) == 0.0, r.contains(x, y));
        }
    }
    assert!(mask_boxes(
        &s,
        &[PixelRect {
            x: 25,
            y: 0,
            w: 10,
            h: 4
        }]
    )
    .is_err());
    assert!(mask_boxes(&s, &[PixelRect { x: 0, y: 0, w: 0, h: 4 }]).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let dense = ramp(16, 16);
    assert!(sparsify(&dense, 0.0, 0).is_err());
    assert!(sparsify(&dense, 1.5, 0).is_err());
    assert!(sparsify(&dense, 0.001, 0).is_err());
    let s = constant_sparse(4, 4, 1.0);
    assert!(add_distance_noise(&s, -0.1, 0).is_err());
    let bad = CorruptionSpec {
        masks: MaskSpec::Random {
            count: 1,
            min_size: 5,
            max_size: 2,
        },
        ..CorruptionSpec::default()
    };
    assert!(degrade_dense(&dense, &[], &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn degradation_is_a_function_of_the_spec(
        seed in any::<u64>(),
        level in 0.0f64..0.5,
        count in 0usize..4,
    ) {
        let dense = ramp(48, 32);
        let spec = CorruptionSpec {
            density: 0.05,
            noise_level: level,
            masks: MaskSpec::Random { count, min_size: 2, max_size: 9 },
            seed,
        };
        let a = degrade_dense(&dense, &[], &spec).unwrap();
        let b = degrade_dense(&dense, &[], &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.1.len(), count);
        prop_assert!(a.0.map.values().iter().all(|v| *v == 0.0 || *v >= 0.001));
        prop_assert!(a.0.valid_count() <= sample_count(0.05, 48, 32));
    }
}
