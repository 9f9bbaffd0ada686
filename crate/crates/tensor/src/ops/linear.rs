use crate::gemm::{sgemm, MatRef};
use crate::{Graph, Tensor, Var};

impl Graph {
    /// Affine map of rows: `x: [r, k]`, `weight: [o, k]`, `bias: [o]` -> `[r, o]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let (r, k) = self.value(x).rows_cols();
        let (o, wk) = self.value(weight).rows_cols();
        assert_eq!(k, wk, "linear input width {k} vs weight {o}x{wk}");
        let mut out = vec![0.0f32; r * o];
        sgemm(
            1.0,
            MatRef::row_major(self.value(x).data(), r, k),
            MatRef::transposed(self.value(weight).data(), k, o),
            0.0,
            &mut out,
            o,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), o, "linear bias shape");
            for row in out.chunks_mut(o.max(1)) {
                for (v, bb) in row.iter_mut().zip(bv) {
                    *v += *bb;
                }
            }
        }
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(Tensor::new(&[r, o], out), &parents, move || {
            Box::new(move |g: &Graph, gy: &Tensor| {
                let xv = g.value(x);
                let wv = g.value(weight);
                let mut dw = vec![0.0f32; o * k];
                sgemm(
                    1.0,
                    MatRef::transposed(gy.data(), o, r),
                    MatRef::row_major(xv.data(), r, k),
                    0.0,
                    &mut dw,
                    k,
                );
                let mut grads = vec![(weight, Tensor::new(&[o, k], dw))];
                if g.requires_grad(x) {
                    let mut dx = vec![0.0f32; r * k];
                    sgemm(
                        1.0,
                        MatRef::row_major(gy.data(), r, o),
                        MatRef::row_major(wv.data(), o, k),
                        0.0,
                        &mut dx,
                        k,
                    );
                    grads.push((x, Tensor::new(&[r, k], dx)));
                }
                if let Some(b) = bias {
                    let mut db = vec![0.0f64; o];
                    for row in gy.data().chunks(o.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v as f64;
                        }
                    }
                    grads.push((b, Tensor::new(&[o], db.into_iter().map(|v| v as f32).collect())));
                }
                grads
            })
        })
    }
}
