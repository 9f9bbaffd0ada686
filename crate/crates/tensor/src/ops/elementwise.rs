use crate::{Graph, Tensor, Var};

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, &[x], || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let mut dx = gy.clone();
                for (d, &xi) in dx.data_mut().iter_mut().zip(g.value(x).data()) {
                    if xi <= 0.0 {
                        *d = 0.0;
                    }
                }
                vec![(x, dx)]
            })
        })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        self.push(value, &[x], || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let mut dx = gy.clone();
                for (d, &xi) in dx.data_mut().iter_mut().zip(g.value(x).data()) {
                    *d *= sigmoid(xi);
                }
                vec![(x, dx)]
            })
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, &[a, b], || {
            Box::new(move |_: &Graph, gy: &Tensor| vec![(a, gy.clone()), (b, gy.clone())])
        })
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, &[x], || {
            Box::new(move |_: &Graph, gy: &Tensor| vec![(x, gy.map(|v| v * factor))])
        })
    }

    /// Elementwise product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Var {
        assert_eq!(self.value(x).shape(), mask.shape(), "mask shape mismatch");
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(mask.data()) {
            *v *= *m;
        }
        self.push(value, &[x], move || {
            Box::new(move |_: &Graph, gy: &Tensor| {
                let mut dx = gy.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
                    *d *= *m;
                }
                vec![(x, dx)]
            })
        })
    }
}
