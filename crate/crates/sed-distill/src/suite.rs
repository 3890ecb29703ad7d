//! Finite-difference verification suites used by both the `gradcheck`
//! CLI subcommand and the integration tests: one check per
//! differentiable op, plus a full forward pass of a micro SE-CRNN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{SECRNNConfig, SeCrnn};
use crate::tensor::gru::{GruDirection, GruParams};
use crate::tensor::{finite_diff_gradcheck, nudge_away_from_zero, Tensor};

pub const OP_TOLERANCE: f64 = 1e-3;
pub const MODEL_TOLERANCE: f64 = 1e-2;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape).unwrap()
}

/// Max relative error of every differentiable op against central
/// finite differences. Returns (op name, worst relative error) pairs.
pub fn op_gradcheck_suite() -> Result<Vec<(String, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240817);
    let mut results = Vec::new();
    let mut push = |name: &str, err: f64| results.push((name.to_string(), err));
    let eps = 1e-5;

    {
        let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        let (ac, bc, cc) = (a.clone(), b.clone(), c.clone());
        let err = finite_diff_gradcheck(
            move || Ok(ac.add(&bc)?.mul(&ac.sub(&bc)?)?.add(&cc)?.mean_all()),
            &[a, b, c],
            eps,
        )?;
        push("add/sub/mul (broadcast)", err);
    }
    {
        let x = rand_tensor(&mut rng, &[6], 0.2, 1.5);
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || Ok(xc.exp().log().sigmoid().tanh().mul_scalar(1.3).mean_all()),
            &[x],
            eps,
        )?;
        push("exp/log/sigmoid/tanh", err);
    }
    {
        let x = rand_tensor(&mut rng, &[2, 2, 4], -1.0, 1.0);
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || Ok(xc.softmax_lastdim().mul(&xc.softmax_lastdim())?.mean_all()),
            &[x],
            eps,
        )?;
        push("softmax_lastdim", err);
    }
    {
        let x = rand_tensor(&mut rng, &[5], -1.0, 1.0);
        nudge_away_from_zero(&x, 0.05);
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || Ok(xc.leaky_relu(0.1).mul(&xc.relu())?.mean_all()),
            &[x],
            eps,
        )?;
        push("relu/leaky_relu", err);
    }
    {
        let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        let err =
            finite_diff_gradcheck(move || Ok(ac.matmul(&bc)?.mean_all()), &[a, b], eps)?;
        push("matmul", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = rand_tensor(&mut rng, &[3], -0.3, 0.3);
        let (xc, wc, bc) = (x.clone(), w.clone(), b.clone());
        let err = finite_diff_gradcheck(
            move || Ok(xc.conv2d(&wc, &bc, (1, 1), (1, 1))?.sigmoid().mean_all()),
            &[x, w, b],
            eps,
        )?;
        push("conv2d", err);
    }
    {
        use crate::tensor::{BatchNormState, Mode};
        let x = rand_tensor(&mut rng, &[2, 3, 4, 2], -1.0, 1.0);
        let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
        let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
        let err = finite_diff_gradcheck(
            move || {
                let mut state = BatchNormState::new(3);
                Ok(xc.batch_norm(&gc, &bc, &mut state, Mode::Train)?.mean_all())
            },
            &[x, gamma, beta],
            eps,
        )?;
        push("batch_norm (train)", err);
    }
    {
        let (b, t, d, h) = (1, 3, 2, 2);
        let x = rand_tensor(&mut rng, &[b, t, d], -0.8, 0.8);
        let mk3 = |rng: &mut ChaCha8Rng| {
            (
                rand_tensor(rng, &[d, 3 * h], -0.6, 0.6),
                rand_tensor(rng, &[h, 3 * h], -0.6, 0.6),
                rand_tensor(rng, &[3 * h], -0.3, 0.3),
            )
        };
        let (wx_f, wh_f, b_f) = mk3(&mut rng);
        let (wx_b, wh_b, b_b) = mk3(&mut rng);
        let params = GruParams {
            hidden: h,
            fwd: GruDirection { w_x: wx_f.clone(), w_h: wh_f.clone(), bias: b_f.clone() },
            bwd: Some(GruDirection { w_x: wx_b.clone(), w_h: wh_b.clone(), bias: b_b.clone() }),
        };
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || Ok(xc.gru_layer(&params)?.mul(&xc.gru_layer(&params)?)?.mean_all()),
            &[x, wx_f, wh_f, b_f, wx_b, wh_b, b_b],
            eps,
        )?;
        push("gru (bidirectional)", err);
    }
    {
        let x = rand_tensor(&mut rng, &[2, 6, 3], -1.0, 1.0);
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || {
                let pooled = xc.adaptive_avg_axis(1, 4)?;
                Ok(pooled.mul(&pooled)?.mean_all())
            },
            &[x],
            eps,
        )?;
        push("adaptive_avg_axis", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 3, 2, 2], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[1, 3], 0.1, 0.9);
        let (xc, gc) = (x.clone(), g.clone());
        let err = finite_diff_gradcheck(
            move || Ok(xc.scale_channels(&gc)?.global_avg_pool()?.mean_all()),
            &[x, g],
            eps,
        )?;
        push("scale_channels + global_avg_pool", err);
    }
    {
        let x = rand_tensor(&mut rng, &[1, 2, 3, 2], -1.0, 1.0);
        let g = rand_tensor(&mut rng, &[1, 3, 2], 0.1, 0.9);
        let (xc, gc) = (x.clone(), g.clone());
        let err = finite_diff_gradcheck(
            move || Ok(xc.scale_time_freq(&gc)?.mean_channels()?.mean_all()),
            &[x, g],
            eps,
        )?;
        push("scale_time_freq + mean_channels", err);
    }
    {
        let a = rand_tensor(&mut rng, &[2, 2], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        let err = finite_diff_gradcheck(
            move || {
                let cat = Tensor::concat(&[ac.clone(), bc.clone()], 1)?;
                let sliced = cat.narrow(1, 1, 3)?.reshape(&[6])?;
                Ok(sliced.mul(&sliced)?.mean_all())
            },
            &[a, b],
            eps,
        )?;
        push("concat/narrow/reshape", err);
    }
    {
        let x = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
        let xc = x.clone();
        let err = finite_diff_gradcheck(
            move || {
                let t = xc.transpose_12()?;
                Ok(t.mul(&t)?.mean_all())
            },
            &[x],
            eps,
        )?;
        push("transpose_12", err);
    }
    Ok(results)
}

/// Finite-difference check of a full micro SE-CRNN forward pass,
/// over every trainable parameter and the input.
pub fn model_gradcheck() -> Result<f64> {
    let cfg = SECRNNConfig {
        conv_channels: [2, 2, 2, 2, 2, 2, 2],
        n_mels: 8,
        gru_hidden: 2,
        n_classes: 2,
        dropout: 0.0,
        embedding_dim: 3,
        eefd_enabled: true,
        variant_name: "micro".to_string(),
    };
    let model = SeCrnn::new(cfg, 4242)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 1, 6, 8], -1.0, 1.0);

    let mut inputs = vec![x.clone()];
    for (_, p) in model.params_iter() {
        inputs.push(p.clone());
    }
    let xc = x.clone();
    finite_diff_gradcheck(
        move || {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model.forward_train(&xc, &mut rng)?;
            let feats = out.transformed_feats.as_ref().expect("eefd enabled");
            Ok(out
                .frame_probs
                .mean_all()
                .add(&out.clip_probs.mean_all())?
                .add(&feats.mean_all())?)
        },
        &inputs,
        // a small step keeps leaky-relu kinks (batch norm centers
        // pre-activations near zero) out of the difference stencil
        1e-6,
    )
}
