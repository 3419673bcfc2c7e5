//! Feed-forward networks with exact gradients, Adam and experience replay.

pub mod adam;
pub mod mlp;
pub mod replay;

pub use adam::Adam;
pub use mlp::{Cache, Dense, Gradients, Mlp, OutputActivation};
pub use replay::{Batch, ReplayBuffer};

/// Float type the networks are generic over.
pub trait Scalar:
    ndarray::LinalgScalar + ndarray::ScalarOperand + num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug + Send + Sync
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn scalar<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite conversion")
}

/// Largest relative deviation between backprop and central finite differences
/// of `Σ weights ⊙ net(x)`, over all parameters and inputs. Relative error is
/// measured against `max(|analytic|, |numeric|, floor)`. `params` restricts
/// the parameter probes to the given flat indices.
pub fn gradient_check(
    net: &Mlp<f64>,
    x: ndarray::ArrayView2<f64>,
    weights: ndarray::ArrayView2<f64>,
    h: f64,
    floor: f64,
    params: Option<&[usize]>,
) -> crate::Result<f64> {
    let objective = |n: &Mlp<f64>, x: ndarray::ArrayView2<f64>| -> crate::Result<f64> { Ok((n.forward(x)? * &weights).sum()) };
    let cache = net.forward_cached(x)?;
    let (grads, input_grad) = net.backward(&cache, weights)?;
    let analytic = grads.flat();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let all: Vec<usize>;
    let params = match params {
        Some(p) => p,
        None => {
            all = (0..base.len()).collect();
            &all
        }
    };
    let mut p = base.clone();
    for &i in params {
        p[i] = base[i] + h;
        probe.set_flat_params(&p)?;
        let up = objective(&probe, x)?;
        p[i] = base[i] - h;
        probe.set_flat_params(&p)?;
        let down = objective(&probe, x)?;
        p[i] = base[i];
        worst = worst.max(rel(analytic[i], (up - down) / (2.0 * h)));
    }
    let mut xp = x.to_owned();
    for idx in 0..xp.len() {
        let (r, c) = (idx / xp.ncols(), idx % xp.ncols());
        let orig = xp[[r, c]];
        xp[[r, c]] = orig + h;
        let up = objective(net, xp.view())?;
        xp[[r, c]] = orig - h;
        let down = objective(net, xp.view())?;
        xp[[r, c]] = orig;
        worst = worst.max(rel(input_grad[[r, c]], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = RandomStream::from_seed(12);
        for (sizes, act) in [
            (vec![3, 4, 2], OutputActivation::Identity),
            (vec![6, 5, 5, 3], OutputActivation::Tanh),
            (vec![9, 7, 7, 1], OutputActivation::Identity),
        ] {
            let net = Mlp::<f64>::new(&sizes, act, 1.0, &mut rng);
            let x = Array2::from_shape_simple_fn((4, sizes[0]), || rng.gen_range(-1.0..1.0));
            let w = Array2::from_shape_simple_fn((4, *sizes.last().unwrap()), || rng.gen_range(-1.0..1.0));
            let err = gradient_check(&net, x.view(), w.view(), 1e-5, 1e-6, None).unwrap();
            assert!(err < 1e-4, "{sizes:?}: {err}");
        }
    }
}
