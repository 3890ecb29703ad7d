//! Central finite-difference verification of analytical gradients.

use crate::error::Result;

use super::Tensor;

/// Compare autodiff gradients of a scalar-valued function against
/// central finite differences, coordinate by coordinate over every
/// tensor in `inputs`. Returns the worst relative error.
///
/// `f` must rebuild its graph from the current contents of `inputs`
/// on every call; the checker perturbs those buffers in place.
pub fn finite_diff_gradcheck(
    f: impl Fn() -> Result<Tensor>,
    inputs: &[Tensor],
    eps: f64,
) -> Result<f64> {
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst = 0.0f64;
    for (t, grads) in inputs.iter().zip(&analytic) {
        let original = t.data();
        for i in 0..original.len() {
            let mut bumped = original.clone();
            bumped[i] = original[i] + eps;
            t.set_data(&bumped);
            let up = f()?.item();
            bumped[i] = original[i] - eps;
            t.set_data(&bumped);
            let down = f()?.item();
            t.set_data(&original);

            let numeric = (up - down) / (2.0 * eps);
            let a = grads[i];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-6);
            worst = worst.max(rel);
        }
        t.zero_grad();
    }
    Ok(worst)
}

/// Push values away from zero by at least `margin`, preserving sign
/// (zeros become `+margin`). Keeps relu kinks out of the finite
/// difference stencil.
pub fn nudge_away_from_zero(t: &Tensor, margin: f64) {
    let data: Vec<f64> = t
        .data()
        .iter()
        .map(|&x| {
            if x.abs() >= margin {
                x
            } else if x < 0.0 {
                -margin
            } else {
                margin
            }
        })
        .collect();
    t.set_data(&data);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let x = Tensor::param(vec![1.5, -0.7, 2.2, 0.4], &[4]).unwrap();
        let xc = x.clone();
        let err = finite_diff_gradcheck(move || Ok(xc.mul(&xc)?.sum_all()), &[x.clone()], 1e-5)
            .unwrap();
        assert!(err < 1e-8, "rel error {err}");
        // and the analytic gradient itself is 2x
        x.zero_grad();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        for (g, v) in x.grad().unwrap().iter().zip(x.data()) {
            assert!((g - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::param((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[2, 3]).unwrap();
        let b = Tensor::param((0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[3, 4]).unwrap();
        let (ac, bc) = (a.clone(), b.clone());
        let err = finite_diff_gradcheck(
            move || Ok(ac.matmul(&bc)?.sum_all()),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel error {err}");
    }

    #[test]
    fn conv_sigmoid_mean_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::param(
            (0..1 * 2 * 5 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[1, 2, 5, 5],
        )
        .unwrap();
        let w = Tensor::param(
            (0..3 * 2 * 3 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            &[3, 2, 3, 3],
        )
        .unwrap();
        let bias = Tensor::param(vec![0.1, -0.2, 0.3], &[3]).unwrap();
        let (xc, wc, bc) = (x.clone(), w.clone(), bias.clone());
        let err = finite_diff_gradcheck(
            move || Ok(xc.conv2d(&wc, &bc, (1, 1), (1, 1))?.sigmoid().mean_all()),
            &[x, w, bias],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "rel error {err}");
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        use crate::tensor::gru::{GruDirection, GruParams};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, t, d, h) = (1, 3, 2, 2);
        let mut mk = |n: usize, s: &[usize]| {
            Tensor::param((0..n).map(|_| rng.gen_range(-0.6..0.6)).collect(), s).unwrap()
        };
        let x = mk(b * t * d, &[b, t, d]);
        let w_x = mk(d * 3 * h, &[d, 3 * h]);
        let w_h = mk(h * 3 * h, &[h, 3 * h]);
        let bias = mk(3 * h, &[3 * h]);
        let params = GruParams {
            hidden: h,
            fwd: GruDirection { w_x: w_x.clone(), w_h: w_h.clone(), bias: bias.clone() },
            bwd: None,
        };
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || Ok(xc.gru_layer(&params)?.mul(&xc.gru_layer(&params)?)?.mean_all()),
            &[x, w_x, w_h, bias],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "rel error {err}");
    }

    #[test]
    fn batch_norm_train_gradient_matches_finite_differences() {
        use crate::tensor::norm::{BatchNormState, Mode};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::param(
            (0..2 * 2 * 3 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            &[2, 2, 3, 3],
        )
        .unwrap();
        let gamma = Tensor::param(vec![1.2, 0.8], &[2]).unwrap();
        let beta = Tensor::param(vec![0.1, -0.1], &[2]).unwrap();
        let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
        let err = finite_diff_gradcheck(
            move || {
                let mut state = BatchNormState::new(2);
                let y = xc.batch_norm(&gc, &bc, &mut state, Mode::Train)?;
                Ok(y.mul(&y)?.mean_all())
            },
            &[x, gamma, beta],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "rel error {err}");
    }

    #[test]
    fn softmax_and_adaptive_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::param((0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[2, 6]).unwrap();
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || {
                let s = xc.softmax_lastdim();
                let p = xc.adaptive_avg_axis(1, 3)?;
                Ok(s.sum_all().add(&p.mul(&p)?.sum_all())?.reshape(&[1])?.sum_all())
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel error {err}");
    }
}
