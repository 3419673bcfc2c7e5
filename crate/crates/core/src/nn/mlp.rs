use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{scalar, Scalar};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Dense layer computing `x · w + b` for row-major batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S = f64> {
    /// `inputs × outputs`.
    pub w: Array2<S>,
    pub b: Array1<S>,
}

/// Feed-forward network with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S = f64> {
    pub layers: Vec<Dense<S>>,
    pub output: OutputActivation,
}

/// Per-layer inputs and pre-activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache<S = f64> {
    inputs: Vec<Array2<S>>,
    pre: Vec<Array2<S>>,
    out: Array2<S>,
}

impl<S> Cache<S> {
    pub fn output(&self) -> &Array2<S> {
        &self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S = f64> {
    pub layers: Vec<Dense<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)`, with the
    /// final layer additionally scaled by `final_scale`.
    pub fn new(sizes: &[usize], output: OutputActivation, final_scale: f64, rng: &mut RandomStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let bound = 1.0 / (sizes[i] as f64).sqrt();
                let scale = if i + 1 == n { final_scale } else { 1.0 };
                let w = Array2::from_shape_simple_fn((sizes[i], sizes[i + 1]), || {
                    scalar(rng.gen_range(-bound..bound) * scale)
                });
                let b = Array1::from_shape_simple_fn(sizes[i + 1], || scalar(rng.gen_range(-bound..bound) * scale));
                Dense { w, b }
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<S>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    fn finish(&self, z: &mut Array2<S>, last: bool) {
        if !last {
            z.mapv_inplace(|v| v.max(S::zero()));
        } else if self.output == OutputActivation::Tanh {
            z.mapv_inplace(S::tanh);
        }
    }

    pub fn forward(&self, x: ArrayView2<S>) -> Result<Array2<S>> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut h = x.dot(&self.layers[0].w) + &self.layers[0].b;
        self.finish(&mut h, n == 1);
        for (i, l) in self.layers.iter().enumerate().skip(1) {
            h = h.dot(&l.w) + &l.b;
            self.finish(&mut h, i + 1 == n);
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[S]) -> Result<Vec<S>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<S>) -> Result<Cache<S>> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            let mut a = z.clone();
            self.finish(&mut a, i + 1 == n);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(Cache { inputs, pre, out: h })
    }

    /// Reverse-mode gradients of `Σ upstream ⊙ output` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, cache: &Cache<S>, upstream: ArrayView2<S>) -> Result<(Gradients<S>, Array2<S>)> {
        if upstream.dim() != cache.out.dim() {
            return Err(Error::shape("upstream gradient", cache.out.len(), upstream.len()));
        }
        let n = self.layers.len();
        let mut delta = upstream.to_owned();
        if self.output == OutputActivation::Tanh {
            Zip::from(&mut delta).and(&cache.out).for_each(|d, &y| *d = *d * (S::one() - y * y));
        }
        let mut grads = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let mut gw = cache.inputs[i].t().dot(&delta);
            if !gw.is_standard_layout() {
                gw = gw.as_standard_layout().into_owned();
            }
            let gb = delta.sum_axis(Axis(0));
            let mut below = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                Zip::from(&mut below)
                    .and(&cache.pre[i - 1])
                    .for_each(|d, &z| {
                        if z <= S::zero() {
                            *d = S::zero()
                        }
                    });
            }
            grads.push(Dense { w: gw, b: gb });
            delta = below;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `self ← χ·source + (1 − χ)·self`.
    pub fn soft_update_from(&mut self, source: &Mlp<S>, chi: f64) {
        let (chi, keep): (S, S) = (scalar(chi), scalar(1.0 - chi));
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.w).and(&s.w).for_each(|t, &s| *t = chi * s + keep * *t);
            Zip::from(&mut t.b).and(&s.b).for_each(|t, &s| *t = chi * s + keep * *t);
        }
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameters", self.num_params(), flat.len()));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p = *it.next().expect("length checked"));
        }
        Ok(())
    }
}

impl<S: Scalar> Gradients<S> {
    pub fn flat(&self) -> Vec<S> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn scale(&mut self, c: S) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|x| x * c);
            l.b.mapv_inplace(|x| x * c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_actor_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[5, 8, 3], OutputActivation::Tanh);
        assert_eq!(net.forward_one(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp {
            layers: vec![Dense {
                w: Array2::eye(3),
                b: Array1::zeros(3),
            }],
            output: OutputActivation::Identity,
        };
        assert_eq!(net.forward_one(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
        assert!(net.forward_one(&[1.0]).is_err());
    }

    fn scalar_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.layers.len();
        for (i, l) in net.layers.iter().enumerate() {
            let mut z = vec![0.0; l.w.ncols()];
            for j in 0..l.w.ncols() {
                let mut acc = l.b[j];
                for (k, hk) in h.iter().enumerate() {
                    acc += hk * l.w[[k, j]];
                }
                z[j] = if i + 1 < n {
                    acc.max(0.0)
                } else if net.output == OutputActivation::Tanh {
                    acc.tanh()
                } else {
                    acc
                };
            }
            h = z;
        }
        h
    }

    #[test]
    fn forward_matches_scalar_evaluation() {
        let mut rng = RandomStream::from_seed(4);
        for act in [OutputActivation::Identity, OutputActivation::Tanh] {
            let net = Mlp::<f64>::new(&[3, 4, 2], act, 1.0, &mut rng);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let got = net.forward_one(&x).unwrap();
                let want = scalar_forward(&net, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn linear_squared_loss_gradient() {
        let net = Mlp {
            layers: vec![Dense {
                w: array![[0.5], [-1.0]],
                b: array![0.2],
            }],
            output: OutputActivation::Identity,
        };
        let x = array![[2.0, 3.0]];
        let y: f64 = 1.0;
        let cache = net.forward_cached(x.view()).unwrap();
        let yhat = cache.output()[[0, 0]];
        let up = array![[2.0 * (yhat - y)]];
        let (g, _) = net.backward(&cache, up.view()).unwrap();
        assert!((g.layers[0].w[[0, 0]] - 2.0 * (yhat - y) * 2.0).abs() < 1e-14);
        assert!((g.layers[0].w[[1, 0]] - 2.0 * (yhat - y) * 3.0).abs() < 1e-14);
        assert!((g.layers[0].b[0] - 2.0 * (yhat - y)).abs() < 1e-14);
    }

    #[test]
    fn flat_params_round_trip_and_soft_update() {
        let mut rng = RandomStream::from_seed(1);
        let a = Mlp::<f64>::new(&[3, 4, 2], OutputActivation::Tanh, 1.0, &mut rng);
        let mut b = Mlp::<f64>::new(&[3, 4, 2], OutputActivation::Tanh, 1.0, &mut rng);
        let mut c = b.clone();
        c.set_flat_params(&a.flat_params()).unwrap();
        assert_eq!(c, a);
        let before = b.clone();
        b.soft_update_from(&a, 0.0);
        assert_eq!(b, before);
        b.soft_update_from(&a, 1.0);
        assert_eq!(b, a);
    }
}
