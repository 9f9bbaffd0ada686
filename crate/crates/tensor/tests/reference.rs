use aerodepth_tensor::{conv2d_forward, Graph, Tensor};
use proptest::prelude::*;

fn naive_conv(x: &Tensor, w: &Tensor, b: &[f32], stride: usize, pad: usize) -> Tensor {
    let (c, h, wd) = x.chw();
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[oc] as f64;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                let xv = x.data()[(ic * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oc * c + ic) * k + ky) * k + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc as f32;
            }
        }
    }
    Tensor::new(&[o, oh, ow], out)
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_summation(
        (c, o, k, h, w, stride, pad, xs, ws, bs) in (1usize..4, 1usize..4, prop::sample::select(vec![1usize, 3, 5]), 5usize..12, 5usize..12, 1usize..3)
            .prop_flat_map(|(c, o, k, h, w, stride)| {
                (Just(c), Just(o), Just(k), Just(h), Just(w), Just(stride), 0..=k / 2, values(c * h * w), values(o * c * k * k), values(o))
            })
    ) {
        let x = Tensor::new(&[c, h, w], xs);
        let wt = Tensor::new(&[o, c, k, k], ws);
        let got = conv2d_forward(&x, &wt, Some(&Tensor::new(&[o], bs.clone())), stride, pad);
        let want = naive_conv(&x, &wt, &bs, stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn linear_matches_dot_products(
        (r, k, o, xs, ws) in (1usize..6, 1usize..9, 1usize..6)
            .prop_flat_map(|(r, k, o)| (Just(r), Just(k), Just(o), values(r * k), values(o * k)))
    ) {
        let mut g = Graph::inference();
        let x = g.input(Tensor::new(&[r, k], xs.clone()));
        let w = g.input(Tensor::new(&[o, k], ws.clone()));
        let y = g.linear(x, w, None);
        let out = g.value(y);
        for i in 0..r {
            for j in 0..o {
                let dot: f32 = (0..k).map(|t| xs[i * k + t] * ws[j * k + t]).sum();
                prop_assert!((out.data()[i * o + j] - dot).abs() < 1e-5);
            }
        }
    }
}
