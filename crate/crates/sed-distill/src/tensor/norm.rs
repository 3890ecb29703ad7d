//! Batch normalization over the channel axis of `[B, C, T, F]` maps.

use crate::error::{Result, SedError};

use super::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics, one entry per channel. Updated in train mode
/// with `running = (1 - momentum) * running + momentum * batch`.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

impl Tensor {
    /// Train mode normalizes with batch statistics (biased variance) and
    /// updates `state`; eval mode uses the running statistics and builds
    /// no backward rule. Epsilon keeps zero-variance channels finite.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(SedError::Dimension(format!(
                "batch_norm expects [B, C, T, F], got {shape:?}"
            )));
        }
        let (b, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);
        if gamma.shape() != vec![c] || beta.shape() != vec![c] {
            return Err(SedError::Dimension(format!(
                "batch_norm: gamma/beta must be [{c}], got {:?}/{:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let tf = t * f;
        let per_channel = b * tf;
        let x = self.data();
        let gd = gamma.data();
        let bd = beta.data();

        match mode {
            Mode::Eval => {
                let mut out = vec![0.0; x.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let inv = 1.0 / (state.running_var[ci] + BN_EPS).sqrt();
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            out[base + k] =
                                gd[ci] * (x[base + k] - state.running_mean[ci]) * inv + bd[ci];
                        }
                    }
                }
                // Eval forwards are inference-only; no backward rule.
                Tensor::from_vec(out, &shape)
            }
            Mode::Train => {
                if per_channel < 2 {
                    return Err(SedError::Config(
                        "batch_norm train mode needs B*T*F >= 2".into(),
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            s += x[base + k];
                        }
                    }
                    mean[ci] = s / per_channel as f64;
                    let mut v = 0.0;
                    for bi in 0..b {
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            let d = x[base + k] - mean[ci];
                            v += d * d;
                        }
                    }
                    var[ci] = v / per_channel as f64;
                }
                for ci in 0..c {
                    state.running_mean[ci] =
                        (1.0 - BN_MOMENTUM) * state.running_mean[ci] + BN_MOMENTUM * mean[ci];
                    state.running_var[ci] =
                        (1.0 - BN_MOMENTUM) * state.running_var[ci] + BN_MOMENTUM * var[ci];
                }

                let mut xhat = vec![0.0; x.len()];
                let mut out = vec![0.0; x.len()];
                let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * tf;
                        for k in 0..tf {
                            let h = (x[base + k] - mean[ci]) * inv_std[ci];
                            xhat[base + k] = h;
                            out[base + k] = gd[ci] * h + bd[ci];
                        }
                    }
                }

                let saved_xhat = xhat;
                let saved_gamma = gd;
                Ok(Tensor::make_op(
                    "batch_norm",
                    vec![self.clone(), gamma.clone(), beta.clone()],
                    out,
                    shape.clone(),
                    Box::new(move |g| {
                        let n = per_channel as f64;
                        let mut gx = vec![0.0; saved_xhat.len()];
                        let mut ggamma = vec![0.0; c];
                        let mut gbeta = vec![0.0; c];
                        for ci in 0..c {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for bi in 0..b {
                                let base = (bi * c + ci) * tf;
                                for k in 0..tf {
                                    sum_g += g[base + k];
                                    sum_gx += g[base + k] * saved_xhat[base + k];
                                }
                            }
                            ggamma[ci] = sum_gx;
                            gbeta[ci] = sum_g;
                            let coef = saved_gamma[ci] * inv_std[ci];
                            for bi in 0..b {
                                let base = (bi * c + ci) * tf;
                                for k in 0..tf {
                                    gx[base + k] = coef
                                        * (g[base + k]
                                            - sum_g / n
                                            - saved_xhat[base + k] * sum_gx / n);
                                }
                            }
                        }
                        vec![Some(gx), Some(ggamma), Some(gbeta)]
                    }),
                ))
            }
        }
    }
}
