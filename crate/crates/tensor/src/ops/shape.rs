use crate::{Graph, Tensor, Var};

fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

impl Graph {
    /// Concatenates `[c_i, h, w]` feature maps along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let (_, h, w) = self.value(parts[0]).chw();
        let mut channels = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw();
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            channels.push(c);
            data.extend_from_slice(self.value(p).data());
        }
        let total: usize = channels.iter().sum();
        let value = Tensor::new(&[total, h, w], data);
        let parts = parts.to_vec();
        self.push(value, &parts.clone(), move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let plane = h * w;
                let mut offset = 0;
                parts
                    .iter()
                    .zip(&channels)
                    .map(|(&p, &c)| {
                        let slice = gy.data()[offset * plane..(offset + c) * plane].to_vec();
                        offset += c;
                        (p, Tensor::new(&[c, h, w], slice))
                    })
                    .collect()
            })
        })
    }

    /// Reflect-pads the bottom and right edges so the map becomes `[c, h2, w2]`.
    pub fn reflect_pad(&mut self, x: Var, h2: usize, w2: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(h2 >= h && w2 >= w, "reflect_pad cannot shrink");
        assert!(h2 - h < h && w2 - w < w, "reflect padding wider than the map");
        let src = self.value(x).data();
        let mut out = vec![0.0f32; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let sy = reflect(y, h);
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + sy) * w + reflect(xx, w)];
                }
            }
        }
        self.push(Tensor::new(&[c, h2, w2], out), &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let mut dx = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        let sy = reflect(y, h);
                        for xx in 0..w2 {
                            dx[(ch * h + sy) * w + reflect(xx, w)] += gy.data()[(ch * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![(x, Tensor::new(&[c, h, w], dx))]
            })
        })
    }

    /// Keeps the top-left `[c, h2, w2]` window.
    pub fn crop(&mut self, x: Var, h2: usize, w2: usize) -> Var {
        let (c, h, w) = self.value(x).chw();
        assert!(h2 <= h && w2 <= w, "crop larger than the map");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * h2 * w2);
        for ch in 0..c {
            for y in 0..h2 {
                let row = (ch * h + y) * w;
                out.extend_from_slice(&src[row..row + w2]);
            }
        }
        self.push(Tensor::new(&[c, h2, w2], out), &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let mut dx = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        let row = (ch * h + y) * w;
                        dx[row..row + w2].copy_from_slice(&gy.data()[(ch * h2 + y) * w2..][..w2]);
                    }
                }
                vec![(x, Tensor::new(&[c, h, w], dx))]
            })
        })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (h2, w2) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![0.0f32; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::new(&[c, h2, w2], out), &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let mut dx = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(ch * h + y / 2) * w + xx / 2] += gy.data()[(ch * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![(x, Tensor::new(&[c, h, w], dx))]
            })
        })
    }

    /// Max-pool with kernel 1 and stride 2, i.e. keeps every other pixel.
    pub fn subsample2x(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(x).data();
        let mut out = vec![0.0f32; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + 2 * y) * w + 2 * xx];
                }
            }
        }
        self.push(Tensor::new(&[c, h2, w2], out), &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let mut dx = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(ch * h + 2 * y) * w + 2 * xx] = gy.data()[(ch * h2 + y) * w2 + xx];
                        }
                    }
                }
                vec![(x, Tensor::new(&[c, h, w], dx))]
            })
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let original = self.value(x).shape().to_vec();
        let value = self.value(x).clone().reshape(shape);
        self.push(value, &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| vec![(x, gy.clone().reshape(&original))])
        })
    }
}
