use super::mlp::{Dense, Gradients, Mlp};
use super::{scalar, Scalar};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S = f64> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Dense<S>>,
    pub v: Vec<Dense<S>>,
}

fn zeros_like<S: Scalar>(net: &Mlp<S>) -> Vec<Dense<S>> {
    net.layers
        .iter()
        .map(|l| Dense {
            w: ndarray::Array2::zeros(l.w.dim()),
            b: ndarray::Array1::zeros(l.b.len()),
        })
        .collect()
}

fn slice_mut<S, D: ndarray::Dimension>(a: &mut ndarray::Array<S, D>) -> &mut [S] {
    a.as_slice_mut().expect("standard layout")
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Mlp<S>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros_like(net),
            v: zeros_like(net),
        }
    }

    /// Descends along `grads`.
    pub fn apply(&mut self, net: &mut Mlp<S>, grads: &Gradients<S>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps): (S, S, S) = (scalar(self.beta1), scalar(self.beta2), scalar(self.eps));
        let (nb1, nb2) = (S::one() - b1, S::one() - b2);
        let (inv_c1, inv_c2): (S, S) = (scalar(1.0 / c1), scalar(1.0 / c2));
        let lr: S = scalar(self.lr);
        let update = |p: &mut [S], g: &[S], m: &mut [S], v: &mut [S]| {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + nb1 * gi;
                v[i] = b2 * v[i] + nb2 * gi * gi;
                p[i] = p[i] - lr * (m[i] * inv_c1) / ((v[i] * inv_c2).sqrt() + eps);
            }
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            update(
                slice_mut(&mut layer.w),
                g.w.as_slice().expect("standard layout"),
                slice_mut(&mut m.w),
                slice_mut(&mut v.w),
            );
            update(
                slice_mut(&mut layer.b),
                g.b.as_slice().expect("standard layout"),
                slice_mut(&mut m.b),
                slice_mut(&mut v.b),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::OutputActivation;
    use ndarray::{array, Array1};

    fn scalar_net(w: f64) -> Mlp {
        Mlp {
            layers: vec![Dense {
                w: array![[w]],
                b: Array1::zeros(1),
            }],
            output: OutputActivation::Identity,
        }
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![Dense {
                w: array![[g]],
                b: Array1::zeros(1),
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.7);
        let mut opt = Adam::new(&net, 1e-3, 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            opt.apply(&mut net, &grad(0.0));
        }
        assert_eq!(net.layers[0].w[[0, 0]], 0.7);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 1e-3, 0.9, 0.999, 1e-8);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            opt.apply(&mut net, &grad(3.0));
            let w = net.layers[0].w[[0, 0]];
            last_step = prev - w;
            prev = w;
        }
        assert!((last_step - 1e-3).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn ten_step_trace_matches_recursion() {
        let gs = [0.5, -1.0, 2.0, 0.1, 0.0, -0.3, 1.5, 0.7, -2.0, 0.25];
        let mut net = scalar_net(1.0);
        let mut opt = Adam::new(&net, 0.01, 0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, &g) in gs.iter().enumerate() {
            opt.apply(&mut net, &grad(g));
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vhat = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= 0.01 * mhat / (vhat.sqrt() + 1e-8);
            assert!((net.layers[0].w[[0, 0]] - w).abs() < 1e-14);
        }
    }
}
