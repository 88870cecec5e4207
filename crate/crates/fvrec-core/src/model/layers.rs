//! Linear layers and small MLPs with explicit forward caches and hand-derived
//! backward passes.

use crate::error::{Error, Result};
use crate::numerics::{
    leaky_relu_grad_scalar, leaky_relu_scalar, matmul, matmul_nt, matmul_tn, selu_grad_scalar,
    selu_scalar, Mat, RngStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Selu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu_scalar(x),
            Activation::LeakyRelu => leaky_relu_scalar(x),
        }
    }

    #[inline]
    fn grad(&self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu_grad_scalar(x),
            Activation::LeakyRelu => leaky_relu_grad_scalar(x),
        }
    }
}

/// y = x W + b with W stored input x output.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Gradients for one linear layer.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dw: Mat,
    pub db: Vec<f64>,
}

impl Linear {
    /// Fan-in scaled normal init (suits self-normalizing nets), zero bias.
    pub fn init(input: usize, output: usize, rng: &mut RngStream) -> Self {
        let std = (1.0 / input as f64).sqrt();
        let mut w = Mat::zeros(input, output);
        for v in w.data_mut() {
            *v = rng.normal() * std;
        }
        Linear {
            w,
            b: vec![0.0; output],
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let mut y = matmul(x, &self.w)?;
        y.add_row_broadcast(&self.b)?;
        Ok(y)
    }

    /// Returns (gradients, d_input).
    pub fn backward(&self, x: &Mat, dy: &Mat) -> Result<(LinearGrads, Mat)> {
        let dw = matmul_tn(x, dy)?;
        let db = dy.col_sums();
        let dx = matmul_nt(dy, &self.w)?;
        Ok((LinearGrads { dw, db }, dx))
    }
}

/// Stack of linear layers with `act` applied between them, and after the last
/// layer only when `activate_last` is set.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
    pub activate_last: bool,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
    pub out: Mat,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LinearGrads>,
}

impl Mlp {
    pub fn init(widths: &[usize], act: Activation, activate_last: bool, rng: &mut RngStream) -> Self {
        assert!(widths.len() >= 2, "mlp needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(w[0], w[1], &mut rng.fork(&format!("l{i}"))))
            .collect();
        Mlp {
            layers,
            act,
            activate_last,
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<MlpCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = layer.forward(&cur)?;
            if !p.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation after layer {i}"
                )));
            }
            let next = if i + 1 < self.layers.len() || self.activate_last {
                p.map(|v| self.act.apply(v))
            } else {
                p.clone()
            };
            inputs.push(cur);
            pre.push(p);
            cur = next;
        }
        Ok(MlpCache {
            inputs,
            pre,
            out: cur,
        })
    }

    /// Backpropagates `d_out` (gradient w.r.t. the cache's `out`) and returns
    /// per-layer gradients plus the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Mat) -> Result<(MlpGrads, Mat)> {
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LinearGrads>> = (0..n_layers).map(|_| None).collect();
        let mut d_cur = d_out.clone();
        for i in (0..n_layers).rev() {
            let activated = i + 1 < n_layers || self.activate_last;
            let d_pre = if activated {
                let mut d = d_cur.clone();
                for (g, &p) in d.data_mut().iter_mut().zip(cache.pre[i].data()) {
                    *g *= self.act.grad(p);
                }
                d
            } else {
                d_cur
            };
            let (lg, dx) = self.layers[i].backward(&cache.inputs[i], &d_pre)?;
            grads[i] = Some(lg);
            d_cur = dx;
        }
        Ok((
            MlpGrads {
                layers: grads.into_iter().map(|g| g.unwrap()).collect(),
            },
            d_cur,
        ))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.cols())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn flatten_params(mlp: &Mlp) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &mlp.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    fn load_params(mlp: &mut Mlp, flat: &[f64]) {
        let mut i = 0;
        for l in &mut mlp.layers {
            let n = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = l.b.len();
            l.b.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        for act in [Activation::Selu, Activation::LeakyRelu] {
            let mut rng = RngStream::new(42);
            let mlp = Mlp::init(&[3, 5, 2], act, false, &mut rng);
            let mut x = Mat::zeros(4, 3);
            rng.fill_normal(x.data_mut());
            // loss = 0.5 * sum(out^2)
            let cache = mlp.forward(&x).unwrap();
            let d_out = cache.out.clone();
            let (grads, dx) = mlp.backward(&cache, &d_out).unwrap();

            let mut analytic = Vec::new();
            for g in &grads.layers {
                analytic.extend_from_slice(g.dw.data());
                analytic.extend_from_slice(&g.db);
            }
            let params = flatten_params(&mlp);
            let mut probe = mlp.clone();
            let err = finite_diff_check(
                |p| {
                    load_params(&mut probe, p);
                    let c = probe.forward(&x).unwrap();
                    0.5 * c.out.data().iter().map(|v| v * v).sum::<f64>()
                },
                &params,
                &analytic,
                1e-5,
            );
            assert!(err < 1e-6, "param grad err {err} for {act:?}");

            let err = finite_diff_check(
                |p| {
                    let xm = Mat::from_vec(4, 3, p.to_vec()).unwrap();
                    let c = mlp.forward(&xm).unwrap();
                    0.5 * c.out.data().iter().map(|v| v * v).sum::<f64>()
                },
                x.data(),
                dx.data(),
                1e-5,
            );
            assert!(err < 1e-6, "input grad err {err} for {act:?}");
        }
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = RngStream::new(9);
        let mlp = Mlp::init(&[4, 6, 3], Activation::Selu, false, &mut rng);
        let mut x = Mat::zeros(3, 4);
        rng.fill_normal(x.data_mut());
        let full = mlp.forward(&x).unwrap().out;
        for r in 0..3 {
            let single = Mat::from_rows(&[x.row(r).to_vec()]).unwrap();
            let out = mlp.forward(&single).unwrap().out;
            for (a, b) in out.row(0).iter().zip(full.row(r)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
