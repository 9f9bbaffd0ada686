//! Central finite-difference checks of every differentiable op.

use aerodepth_tensor::{Graph, Roi, RoiAlignParams, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

/// Builds a graph from `inputs` (all params) and returns `sum(probe * out)`.
fn objective(inputs: &[Tensor], probe: &Tensor, build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out)
        .data()
        .iter()
        .zip(probe.data())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

/// Compares analytic gradients against central differences on up to
/// `samples` coordinates per input.
fn check(inputs: Vec<Tensor>, build: &dyn Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let probe = random(g.value(out).shape(), &mut rng);
    let grads = g.backward(vec![(out, probe.clone())]);

    let h = 1e-2f32;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient for every input");
        let n = inputs[i].numel();
        let coords: Vec<usize> = if n <= 40 {
            (0..n).collect()
        } else {
            (0..40).map(|_| rng.random_range(0..n)).collect()
        };
        for idx in coords {
            let mut plus = inputs.clone();
            plus[i].data_mut()[idx] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[idx] -= h;
            let step = (plus[i].data()[idx] - minus[i].data()[idx]) as f64;
            let fd = (objective(&plus, &probe, build) - objective(&minus, &probe, build)) / step;
            let an = analytic.data()[idx] as f64;
            assert!(
                (fd - an).abs() <= tol * (1.0 + fd.abs().max(an.abs())),
                "input {i} coord {idx}: analytic {an} vs numeric {fd}"
            );
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (1, 1, 0)] {
        let x = random(&[3, 7, 6], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        check(vec![x, w, b], &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), s, p), 2e-3);
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 4, 5], &mut rng);
    let w = random(&[3, 2, 4, 4], &mut rng);
    let b = random(&[2], &mut rng);
    check(
        vec![x, w, b],
        &|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
        2e-3,
    );
}

#[test]
fn group_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 5, 3], &mut rng);
    let gamma = random(&[4], &mut rng);
    let beta = random(&[4], &mut rng);
    check(
        vec![x, gamma, beta],
        &|g, v| g.group_norm(v[0], v[1], v[2], 2, 1e-5),
        5e-3,
    );
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // keep relu inputs away from the kink
    let x = random(&[2, 3, 3], &mut rng).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
    let y = random(&[2, 3, 3], &mut rng);
    check(
        vec![x.clone(), y],
        &|g, v| {
            let a = g.relu(v[0]);
            let b = g.softplus(v[1]);
            let c = g.add(a, b);
            g.scale(c, -1.5)
        },
        2e-3,
    );
    let mask = random(&[2, 3, 3], &mut rng);
    check(vec![x], &move |g, v| g.mul_const(v[0], mask.clone()), 2e-3);
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[2, 4, 6], &mut rng);
    let b = random(&[1, 4, 6], &mut rng);
    check(vec![a.clone(), b], &|g, v| g.concat(&[v[0], v[1]]), 1e-3);
    check(vec![a.clone()], &|g, v| g.reflect_pad(v[0], 7, 9), 1e-3);
    check(vec![a.clone()], &|g, v| g.crop(v[0], 3, 5), 1e-3);
    check(vec![a.clone()], &|g, v| g.upsample2x(v[0]), 1e-3);
    check(vec![a.clone()], &|g, v| g.subsample2x(v[0]), 1e-3);
    check(vec![a], &|g, v| g.reshape(v[0], &[2, 24]), 1e-3);
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let b = random(&[4], &mut rng);
    check(vec![x, w, b], &|g, v| g.linear(v[0], v[1], Some(v[2])), 2e-3);
}

#[test]
fn roi_align_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p2 = random(&[2, 12, 10], &mut rng);
    let p3 = random(&[2, 6, 5], &mut rng);
    let rois = vec![
        Roi {
            x_min: 3.3,
            y_min: 2.1,
            x_max: 17.6,
            y_max: 14.2,
            level: 0,
        },
        Roi {
            x_min: 1.0,
            y_min: 5.0,
            x_max: 30.0,
            y_max: 40.0,
            level: 1,
        },
        Roi {
            x_min: -4.0,
            y_min: -2.0,
            x_max: 6.0,
            y_max: 9.0,
            level: 0,
        },
    ];
    let params = RoiAlignParams {
        output_size: 3,
        sampling_ratio: 2,
        level_scales: vec![0.5, 0.25],
    };
    check(
        vec![p2, p3],
        &move |g, v| g.roi_align(&[v[0], v[1]], &rois, &params),
        2e-3,
    );
}

#[test]
fn unused_branches_get_no_gradient() {
    let mut g = Graph::new();
    let a = g.param(Tensor::full(&[1, 2, 2], 1.0));
    let b = g.param(Tensor::full(&[1, 2, 2], 2.0));
    let c = g.relu(a);
    let _unused = g.relu(b);
    let grads = g.backward(vec![(c, Tensor::full(&[1, 2, 2], 1.0))]);
    assert!(grads.get(a).is_some());
    assert!(grads.get(b).is_none());
}

#[test]
fn inference_graph_records_nothing() {
    let mut g = Graph::inference();
    let a = g.param(Tensor::full(&[1, 2, 2], 1.0));
    let c = g.relu(a);
    assert!(!g.requires_grad(c));
    assert!(g.backward(vec![(c, Tensor::full(&[1, 2, 2], 1.0))]).is_empty());
}
