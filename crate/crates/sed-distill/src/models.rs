//! The SE-CRNN model family: a seven-block conv stack with SE and
//! tfwSE attention, two BiGRU layers, context gating, frame and clip
//! prediction heads, and an optional train-time embedding distillation
//! branch.
//!
//! Pooling happens on the frequency axis only (halved after each of
//! the first six blocks, residual bins averaged after the last), so
//! the frame rate of the input is preserved end to end.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SedError};
use crate::tensor::{BatchNormState, GruDirection, GruParams, Mode, Tensor};

pub const SE_REDUCTION: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SECRNNConfig {
    pub conv_channels: [usize; 7],
    pub n_mels: usize,
    pub gru_hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub eefd_enabled: bool,
    pub variant_name: String,
}

impl SECRNNConfig {
    pub fn se_crnn_8() -> Self {
        SECRNNConfig {
            conv_channels: [8, 16, 32, 64, 64, 64, 64],
            n_mels: 128,
            gru_hidden: 64,
            n_classes: 10,
            dropout: 0.5,
            embedding_dim: 768,
            eefd_enabled: true,
            variant_name: "SE-CRNN-8".into(),
        }
    }

    pub fn se_crnn_16() -> Self {
        SECRNNConfig {
            conv_channels: [16, 32, 64, 128, 128, 128, 128],
            n_mels: 128,
            gru_hidden: 128,
            n_classes: 10,
            dropout: 0.5,
            embedding_dim: 768,
            eefd_enabled: true,
            variant_name: "SE-CRNN-16".into(),
        }
    }

    /// Desk-scale variant for smoke tests and synthetic-data runs.
    pub fn tiny(n_mels: usize, n_classes: usize) -> Self {
        SECRNNConfig {
            conv_channels: [4, 8, 8, 16, 16, 16, 16],
            n_mels,
            gru_hidden: 16,
            n_classes,
            dropout: 0.0,
            embedding_dim: 768,
            eefd_enabled: true,
            variant_name: "SE-CRNN-tiny".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.iter().any(|&c| c == 0) {
            return Err(SedError::Config("conv channel counts must be positive".into()));
        }
        if self.n_mels == 0 || self.gru_hidden == 0 || self.n_classes == 0 {
            return Err(SedError::Config("n_mels, gru_hidden, n_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SedError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.eefd_enabled && self.embedding_dim == 0 {
            return Err(SedError::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }

    /// key=value serialization used inside checkpoints.
    pub fn to_kv(&self) -> String {
        let chans: Vec<String> = self.conv_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "variant_name={}\nconv_channels={}\nn_mels={}\ngru_hidden={}\nn_classes={}\ndropout={}\nembedding_dim={}\neefd_enabled={}\n",
            self.variant_name,
            chans.join(","),
            self.n_mels,
            self.gru_hidden,
            self.n_classes,
            self.dropout,
            self.embedding_dim,
            self.eefd_enabled
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| SedError::Format(format!("checkpoint config missing key {k}")))
        };
        let chan_list: Vec<usize> = get("conv_channels")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SedError::Format(format!("bad conv_channels: {e}")))?;
        let conv_channels: [usize; 7] = chan_list
            .try_into()
            .map_err(|_| SedError::Format("conv_channels must have 7 entries".into()))?;
        let parse = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| SedError::Format(format!("bad {k}: {e}")))
        };
        Ok(SECRNNConfig {
            conv_channels,
            n_mels: parse("n_mels")?,
            gru_hidden: parse("gru_hidden")?,
            n_classes: parse("n_classes")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|e| SedError::Format(format!("bad dropout: {e}")))?,
            embedding_dim: parse("embedding_dim")?,
            eefd_enabled: get("eefd_enabled")? == "true",
            variant_name: get("variant_name")?.clone(),
        })
    }
}

/// Forward-pass result. `transformed_feats` is present iff the
/// embedding distillation branch is enabled.
pub struct ModelOutput {
    /// `[B, T, K]`
    pub frame_probs: Tensor,
    /// `[B, K]`
    pub clip_probs: Tensor,
    /// `[B, T, embedding_dim]`
    pub transformed_feats: Option<Tensor>,
}

/// Channel-attention gate: global average pool, FC reduce/expand,
/// sigmoid, per-channel rescale.
pub fn se_block(x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor) -> Result<Tensor> {
    let pooled = x.global_avg_pool()?;
    let gates = pooled
        .matmul(w1)?
        .add(b1)?
        .relu()
        .matmul(w2)?
        .add(b2)?
        .sigmoid();
    x.scale_channels(&gates)
}

/// Frequency-wise attention applied to each time frame independently:
/// channel-mean, per-frame FC reduce/expand over frequency, sigmoid,
/// per-(frame, frequency) rescale broadcast over channels.
pub fn tfw_se_block(
    x: &Tensor,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
) -> Result<Tensor> {
    let shape = x.shape();
    let (b, t, f) = (shape[0], shape[2], shape[3]);
    let avg = x.mean_channels()?; // [B, T, F]
    let gates = avg
        .reshape(&[b * t, f])?
        .matmul(w1)?
        .add(b1)?
        .relu()
        .matmul(w2)?
        .add(b2)?
        .sigmoid()
        .reshape(&[b, t, f])?;
    x.scale_time_freq(&gates)
}

/// y = x * sigmoid(x W + b), elementwise over the last dimension.
pub fn context_gating(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let gate = linear_lastdim(x, w, b)?.sigmoid();
    x.mul(&gate)
}

/// Linear layer over the last dimension of a 2-d or 3-d tensor.
pub fn linear_lastdim(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    let d = *shape.last().unwrap();
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let out = x.reshape(&[rows, d])?.matmul(w)?.add(b)?;
    let mut out_shape = shape.clone();
    *out_shape.last_mut().unwrap() = w.shape()[1];
    out.reshape(&out_shape)
}

/// Attention pooling of frame probabilities into clip probabilities:
/// per-class softmax over time of the attention logits weights the
/// frame probabilities, so the result is a convex combination.
pub fn clip_pooling(frame_probs: &Tensor, attn_logits: &Tensor) -> Result<Tensor> {
    let shape = frame_probs.shape();
    if shape != attn_logits.shape() || shape.len() != 3 {
        return Err(SedError::Dimension(format!(
            "clip_pooling: frame {shape:?} vs attention {:?}",
            attn_logits.shape()
        )));
    }
    let (b, t, k) = (shape[0], shape[1], shape[2]);
    let weights = attn_logits.transpose_12()?.softmax_lastdim(); // [B, K, T]
    let frames = frame_probs.transpose_12()?; // [B, K, T]
    weights
        .mul(&frames)?
        .adaptive_avg_axis(2, 1)?
        .mul_scalar(t as f64)
        .reshape(&[b, k])
}

struct ConvBlock {
    has_attention: bool,
    /// frequency length entering the block, after previous pooling
    in_freq: usize,
    /// pooled frequency length leaving the block
    out_freq: usize,
}

/// A built SE-CRNN. Trainable parameters live in a name-indexed
/// registry so forward passes can run either on the stored parameters
/// or on substituted ones (used by the gradient-coupled EMA forward).
pub struct SeCrnn {
    pub cfg: SECRNNConfig,
    names: Vec<String>,
    params: HashMap<String, Tensor>,
    bn_states: Vec<RefCell<BatchNormState>>,
    blocks: Vec<ConvBlock>,
}

fn init_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    // draw in f32 so freshly initialized parameters are exactly
    // representable in the checkpoint's 32-bit value encoding
    let data: Vec<f64> = (0..n)
        .map(|_| (rng.gen_range(-bound..bound) as f32) as f64)
        .collect();
    Tensor::param(data, shape).unwrap()
}

impl SeCrnn {
    pub fn new(cfg: SECRNNConfig, seed: u64) -> Result<SeCrnn> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = HashMap::new();
        let add = |names: &mut Vec<String>,
                       params: &mut HashMap<String, Tensor>,
                       name: String,
                       t: Tensor| {
            names.push(name.clone());
            params.insert(name, t);
        };

        let mut blocks = Vec::new();
        let mut bn_states = Vec::new();
        let mut in_ch = 1;
        let mut freq = cfg.n_mels;
        for (i, &out_ch) in cfg.conv_channels.iter().enumerate() {
            let last = i == cfg.conv_channels.len() - 1;
            let fan_in = in_ch * 9;
            add(
                &mut names,
                &mut params,
                format!("block{i}.conv.w"),
                init_uniform(&mut rng, fan_in, &[out_ch, in_ch, 3, 3]),
            );
            add(&mut names, &mut params, format!("block{i}.conv.b"), {
                let t = Tensor::zeros(&[out_ch]);
                t.set_requires_grad(true);
                t
            });
            add(&mut names, &mut params, format!("block{i}.bn.gamma"), {
                let t = Tensor::full(&[out_ch], 1.0);
                t.set_requires_grad(true);
                t
            });
            add(&mut names, &mut params, format!("block{i}.bn.beta"), {
                let t = Tensor::zeros(&[out_ch]);
                t.set_requires_grad(true);
                t
            });
            bn_states.push(RefCell::new(BatchNormState::new(out_ch)));

            if !last {
                let red_c = (out_ch / SE_REDUCTION).max(1);
                add(
                    &mut names,
                    &mut params,
                    format!("block{i}.se.w1"),
                    init_uniform(&mut rng, out_ch, &[out_ch, red_c]),
                );
                add(&mut names, &mut params, format!("block{i}.se.b1"), {
                    let t = Tensor::zeros(&[red_c]);
                    t.set_requires_grad(true);
                    t
                });
                add(
                    &mut names,
                    &mut params,
                    format!("block{i}.se.w2"),
                    init_uniform(&mut rng, red_c, &[red_c, out_ch]),
                );
                add(&mut names, &mut params, format!("block{i}.se.b2"), {
                    let t = Tensor::zeros(&[out_ch]);
                    t.set_requires_grad(true);
                    t
                });

                let red_f = (freq / SE_REDUCTION).max(1);
                add(
                    &mut names,
                    &mut params,
                    format!("block{i}.tfw.w1"),
                    init_uniform(&mut rng, freq, &[freq, red_f]),
                );
                add(&mut names, &mut params, format!("block{i}.tfw.b1"), {
                    let t = Tensor::zeros(&[red_f]);
                    t.set_requires_grad(true);
                    t
                });
                add(
                    &mut names,
                    &mut params,
                    format!("block{i}.tfw.w2"),
                    init_uniform(&mut rng, red_f, &[red_f, freq]),
                );
                add(&mut names, &mut params, format!("block{i}.tfw.b2"), {
                    let t = Tensor::zeros(&[freq]);
                    t.set_requires_grad(true);
                    t
                });
            }

            let out_freq = if last { 1 } else { freq.div_ceil(2) };
            blocks.push(ConvBlock {
                has_attention: !last,
                in_freq: freq,
                out_freq,
            });
            freq = out_freq;
            in_ch = out_ch;
        }

        let c_last = cfg.conv_channels[6];
        if cfg.eefd_enabled {
            add(
                &mut names,
                &mut params,
                "eefd.w_t".into(),
                init_uniform(&mut rng, c_last, &[c_last, cfg.embedding_dim]),
            );
            add(&mut names, &mut params, "eefd.b_t".into(), {
                let t = Tensor::zeros(&[cfg.embedding_dim]);
                t.set_requires_grad(true);
                t
            });
            add(
                &mut names,
                &mut params,
                "eefd.w_m".into(),
                init_uniform(&mut rng, c_last + cfg.embedding_dim, &[c_last + cfg.embedding_dim, c_last]),
            );
            add(&mut names, &mut params, "eefd.b_m".into(), {
                let t = Tensor::zeros(&[c_last]);
                t.set_requires_grad(true);
                t
            });
        }

        let h = cfg.gru_hidden;
        for (li, d_in) in [(1usize, c_last), (2, 2 * h)] {
            for dir in ["fwd", "bwd"] {
                add(
                    &mut names,
                    &mut params,
                    format!("gru{li}.{dir}.w_x"),
                    init_uniform(&mut rng, d_in, &[d_in, 3 * h]),
                );
                add(
                    &mut names,
                    &mut params,
                    format!("gru{li}.{dir}.w_h"),
                    init_uniform(&mut rng, h, &[h, 3 * h]),
                );
                add(&mut names, &mut params, format!("gru{li}.{dir}.bias"), {
                    let t = Tensor::zeros(&[3 * h]);
                    t.set_requires_grad(true);
                    t
                });
            }
        }

        add(
            &mut names,
            &mut params,
            "cg.w".into(),
            init_uniform(&mut rng, 2 * h, &[2 * h, 2 * h]),
        );
        add(&mut names, &mut params, "cg.b".into(), {
            let t = Tensor::zeros(&[2 * h]);
            t.set_requires_grad(true);
            t
        });
        for head in ["frame", "attn"] {
            add(
                &mut names,
                &mut params,
                format!("head.{head}.w"),
                init_uniform(&mut rng, 2 * h, &[2 * h, cfg.n_classes]),
            );
            add(&mut names, &mut params, format!("head.{head}.b"), {
                let t = Tensor::zeros(&[cfg.n_classes]);
                t.set_requires_grad(true);
                t
            });
        }

        Ok(SeCrnn {
            cfg,
            names,
            params,
            bn_states,
            blocks,
        })
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    pub fn param_count(&self) -> usize {
        self.names.iter().map(|n| self.params[n].numel()).sum()
    }

    pub fn params_iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.names.iter().map(move |n| (n, &self.params[n]))
    }

    /// Batch-norm running statistics, as named buffers (not trained,
    /// but serialized alongside parameters).
    pub fn buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, state) in self.bn_states.iter().enumerate() {
            let s = state.borrow();
            out.push((format!("block{i}.bn.running_mean"), s.running_mean.clone()));
            out.push((format!("block{i}.bn.running_var"), s.running_var.clone()));
        }
        out
    }

    pub fn set_buffer(&self, name: &str, values: &[f64]) -> Result<()> {
        let (block, field) = name
            .strip_prefix("block")
            .and_then(|rest| rest.split_once('.'))
            .ok_or_else(|| SedError::Format(format!("unknown buffer {name}")))?;
        let idx: usize = block
            .parse()
            .map_err(|_| SedError::Format(format!("unknown buffer {name}")))?;
        let mut state = self
            .bn_states
            .get(idx)
            .ok_or_else(|| SedError::Format(format!("unknown buffer {name}")))?
            .borrow_mut();
        let slot = match field {
            "bn.running_mean" => &mut state.running_mean,
            "bn.running_var" => &mut state.running_var,
            _ => return Err(SedError::Format(format!("unknown buffer {name}"))),
        };
        if slot.len() != values.len() {
            return Err(SedError::Architecture(format!(
                "buffer {name}: expected {} values, got {}",
                slot.len(),
                values.len()
            )));
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// Test hook: make the EEFD merge projection select exactly the
    /// original convolution features, so an EEFD-enabled model matches
    /// a disabled one value for value.
    pub fn set_passthrough_merge(&self) -> Result<()> {
        if !self.cfg.eefd_enabled {
            return Err(SedError::Config("eefd disabled".into()));
        }
        let c = self.cfg.conv_channels[6];
        let e = self.cfg.embedding_dim;
        let mut w = vec![0.0; (c + e) * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        self.params["eefd.w_m"].set_data(&w);
        self.params["eefd.b_m"].set_data(&vec![0.0; c]);
        Ok(())
    }

    pub fn forward_eval(&self, logmel: &Tensor) -> Result<ModelOutput> {
        self.forward_with(&self.params, logmel, Mode::Eval, None)
    }

    pub fn forward_train(&self, logmel: &Tensor, rng: &mut ChaCha8Rng) -> Result<ModelOutput> {
        self.forward_with(&self.params, logmel, Mode::Train, Some(rng))
    }

    /// Forward with substituted parameters (same names/shapes as the
    /// registry). Batch-norm states are still this model's own.
    pub fn forward_with(
        &self,
        params: &HashMap<String, Tensor>,
        logmel: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ModelOutput> {
        let shape = logmel.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[3] != self.cfg.n_mels {
            return Err(SedError::Dimension(format!(
                "forward expects [B, 1, T, {}], got {shape:?}",
                self.cfg.n_mels
            )));
        }
        let (b, t) = (shape[0], shape[2]);
        let p = |name: &str| -> Result<&Tensor> {
            params
                .get(name)
                .ok_or_else(|| SedError::Architecture(format!("missing parameter {name}")))
        };

        let mut x = logmel.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            x = x.conv2d(
                p(&format!("block{i}.conv.w"))?,
                p(&format!("block{i}.conv.b"))?,
                (1, 1),
                (1, 1),
            )?;
            {
                let mut state = self.bn_states[i].borrow_mut();
                x = x.batch_norm(
                    p(&format!("block{i}.bn.gamma"))?,
                    p(&format!("block{i}.bn.beta"))?,
                    &mut state,
                    mode,
                )?;
            }
            x = x.leaky_relu(LEAKY_SLOPE);
            if block.has_attention {
                x = se_block(
                    &x,
                    p(&format!("block{i}.se.w1"))?,
                    p(&format!("block{i}.se.b1"))?,
                    p(&format!("block{i}.se.w2"))?,
                    p(&format!("block{i}.se.b2"))?,
                )?;
                x = tfw_se_block(
                    &x,
                    p(&format!("block{i}.tfw.w1"))?,
                    p(&format!("block{i}.tfw.b1"))?,
                    p(&format!("block{i}.tfw.w2"))?,
                    p(&format!("block{i}.tfw.b2"))?,
                )?;
            }
            debug_assert_eq!(x.shape()[3], block.in_freq);
            if block.out_freq != block.in_freq {
                x = x.adaptive_avg_axis(3, block.out_freq)?;
            }
        }

        let c = self.cfg.conv_channels[6];
        // [B, C, T, 1] -> [B, T, C]
        let btc = x.reshape(&[b, c, t])?.transpose_12()?;

        let (mut merged, transformed) = if self.cfg.eefd_enabled {
            let transformed =
                linear_lastdim(&btc, p("eefd.w_t")?, p("eefd.b_t")?)?;
            let joined = Tensor::concat(&[btc.clone(), transformed.clone()], 2)?;
            let merged = linear_lastdim(&joined, p("eefd.w_m")?, p("eefd.b_m")?)?;
            (merged, Some(transformed))
        } else {
            (btc, None)
        };

        merged = self.dropout(&merged, mode, rng.as_deref_mut())?;

        let h = self.cfg.gru_hidden;
        let gru =
            |li: usize, input: &Tensor, params_map: &HashMap<String, Tensor>| -> Result<Tensor> {
                let dir = |d: &str| -> Result<GruDirection> {
                    Ok(GruDirection {
                        w_x: params_map
                            .get(&format!("gru{li}.{d}.w_x"))
                            .ok_or_else(|| SedError::Architecture(format!("missing gru{li}.{d}.w_x")))?
                            .clone(),
                        w_h: params_map[&format!("gru{li}.{d}.w_h")].clone(),
                        bias: params_map[&format!("gru{li}.{d}.bias")].clone(),
                    })
                };
                let gp = GruParams {
                    hidden: h,
                    fwd: dir("fwd")?,
                    bwd: Some(dir("bwd")?),
                };
                input.gru_layer(&gp)
            };
        let g1 = gru(1, &merged, params)?;
        let g2 = gru(2, &g1, params)?;

        let gated = context_gating(&g2, p("cg.w")?, p("cg.b")?)?;
        let gated = self.dropout(&gated, mode, rng.as_deref_mut())?;

        let frame_probs = linear_lastdim(&gated, p("head.frame.w")?, p("head.frame.b")?)?.sigmoid();
        let attn_logits = linear_lastdim(&gated, p("head.attn.w")?, p("head.attn.b")?)?;
        let clip_probs = clip_pooling(&frame_probs, &attn_logits)?;

        Ok(ModelOutput {
            frame_probs,
            clip_probs,
            transformed_feats: transformed,
        })
    }

    fn dropout(&self, x: &Tensor, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        if mode == Mode::Eval || self.cfg.dropout == 0.0 {
            return Ok(x.clone());
        }
        let rng = match rng {
            Some(r) => r,
            None => return Ok(x.clone()),
        };
        let p = self.cfg.dropout;
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| {
                if (rng.next_u32() as f64 / u32::MAX as f64) < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mask_t = Tensor::from_vec(mask, &x.shape())?;
        x.mul(&mask_t)
    }

    /// Copy all parameter and buffer values from another model of the
    /// same architecture.
    pub fn copy_from(&self, other: &SeCrnn) -> Result<()> {
        for name in &self.names {
            let src = other
                .params
                .get(name)
                .ok_or_else(|| SedError::Architecture(format!("missing parameter {name}")))?;
            if src.shape() != self.params[name].shape() {
                return Err(SedError::Architecture(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    src.shape(),
                    self.params[name].shape()
                )));
            }
            self.params[name].set_data(&src.data());
        }
        for (name, values) in other.buffers() {
            self.set_buffer(&name, &values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_cfg() -> SECRNNConfig {
        SECRNNConfig {
            conv_channels: [2, 2, 2, 2, 2, 2, 2],
            n_mels: 16,
            gru_hidden: 2,
            n_classes: 2,
            dropout: 0.0,
            embedding_dim: 8,
            eefd_enabled: true,
            variant_name: "micro".into(),
        }
    }

    fn rand_input(b: usize, t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..b * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[b, 1, t, f],
        )
        .unwrap()
    }

    #[test]
    fn se_block_identity_gate_and_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (b, c, t, f) = (2, 4, 3, 5);
        let x = Tensor::from_vec(
            (0..b * c * t * f).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            &[b, c, t, f],
        )
        .unwrap();
        // saturate the gate so it is 1 for every channel
        let w1 = Tensor::zeros(&[c, 1]);
        let b1 = Tensor::zeros(&[1]);
        let w2 = Tensor::zeros(&[1, c]);
        let b2 = Tensor::full(&[c], 40.0);
        let y = se_block(&x, &w1, &b1, &w2, &b2).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-12);
        }

        // arbitrary gates never increase magnitude
        let w1 = Tensor::from_vec(vec![0.3; c * 2], &[c, 2]).unwrap();
        let b1 = Tensor::zeros(&[2]);
        let w2 = Tensor::from_vec(vec![-0.7; 2 * c], &[2, c]).unwrap();
        let b2 = Tensor::zeros(&[c]);
        let y = se_block(&x, &w1, &b1, &w2, &b2).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= e.abs() + 1e-12);
        }
    }

    #[test]
    fn se_block_matches_naive_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (b, c, t, f) = (2, 4, 3, 3);
        let xd: Vec<f64> = (0..b * c * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w1d: Vec<f64> = (0..c * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1d: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2d: Vec<f64> = (0..2 * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b2d: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(xd.clone(), &[b, c, t, f]).unwrap();
        let y = se_block(
            &x,
            &Tensor::from_vec(w1d.clone(), &[c, 2]).unwrap(),
            &Tensor::from_vec(b1d.clone(), &[2]).unwrap(),
            &Tensor::from_vec(w2d.clone(), &[2, c]).unwrap(),
            &Tensor::from_vec(b2d.clone(), &[c]).unwrap(),
        )
        .unwrap()
        .data();

        // step-by-step scalar reimplementation
        let tf = t * f;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for bi in 0..b {
            let mut pooled = vec![0.0; c];
            for ci in 0..c {
                pooled[ci] =
                    xd[(bi * c + ci) * tf..(bi * c + ci + 1) * tf].iter().sum::<f64>() / tf as f64;
            }
            let mut hidden = vec![0.0; 2];
            for j in 0..2 {
                let mut s = b1d[j];
                for ci in 0..c {
                    s += pooled[ci] * w1d[ci * 2 + j];
                }
                hidden[j] = s.max(0.0);
            }
            for ci in 0..c {
                let mut s = b2d[ci];
                for j in 0..2 {
                    s += hidden[j] * w2d[j * c + ci];
                }
                let gate = sig(s);
                for k in 0..tf {
                    let idx = (bi * c + ci) * tf + k;
                    assert!((y[idx] - xd[idx] * gate).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn tfw_se_matches_naive_and_is_frame_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (b, c, t, f) = (1, 3, 4, 4);
        let xd: Vec<f64> = (0..b * c * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let red = 2;
        let w1 = Tensor::from_vec((0..f * red).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[f, red]).unwrap();
        let b1 = Tensor::from_vec((0..red).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[red]).unwrap();
        let w2 = Tensor::from_vec((0..red * f).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[red, f]).unwrap();
        let b2 = Tensor::from_vec((0..f).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[f]).unwrap();

        let x = Tensor::from_vec(xd.clone(), &[b, c, t, f]).unwrap();
        let y = tfw_se_block(&x, &w1, &b1, &w2, &b2).unwrap().data();

        // naive: per frame, channel-average then FC-FC-sigmoid gate
        let (w1d, b1d, w2d, b2d) = (w1.data(), b1.data(), w2.data(), b2.data());
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for ti in 0..t {
            let mut avg = vec![0.0; f];
            for fi in 0..f {
                for ci in 0..c {
                    avg[fi] += xd[(ci * t + ti) * f + fi];
                }
                avg[fi] /= c as f64;
            }
            let mut hid = vec![0.0; red];
            for j in 0..red {
                let mut s = b1d[j];
                for fi in 0..f {
                    s += avg[fi] * w1d[fi * red + j];
                }
                hid[j] = s.max(0.0);
            }
            for fi in 0..f {
                let mut s = b2d[fi];
                for j in 0..red {
                    s += hid[j] * w2d[j * f + fi];
                }
                let gate = sig(s);
                for ci in 0..c {
                    let idx = (ci * t + ti) * f + fi;
                    assert!((y[idx] - xd[idx] * gate).abs() < 1e-10);
                }
            }
        }

        // permuting time frames permutes the output identically
        let mut perm_x = xd.clone();
        for ci in 0..c {
            for ti in 0..t {
                let src = (ci * t + ti) * f;
                let dst = (ci * t + (t - 1 - ti)) * f;
                perm_x[dst..dst + f].copy_from_slice(&xd[src..src + f]);
            }
        }
        let yp = tfw_se_block(
            &Tensor::from_vec(perm_x, &[b, c, t, f]).unwrap(),
            &w1,
            &b1,
            &w2,
            &b2,
        )
        .unwrap()
        .data();
        for ci in 0..c {
            for ti in 0..t {
                for fi in 0..f {
                    let a = y[(ci * t + ti) * f + fi];
                    let p = yp[(ci * t + (t - 1 - ti)) * f + fi];
                    assert!((a - p).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn context_gating_saturated_zero_and_half() {
        let x = Tensor::from_vec(vec![0.4, -1.2, 0.9], &[1, 3]).unwrap();
        let w0 = Tensor::zeros(&[3, 3]);
        // b = 20 saturates the sigmoid
        let y = context_gating(&x, &w0, &Tensor::full(&[3], 20.0)).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-8);
        }
        // b = 0, W = 0 halves the input
        let y = context_gating(&x, &w0, &Tensor::zeros(&[3])).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_pooling_uniform_onehot_and_convexity() {
        let frame = Tensor::from_vec(vec![0.1, 0.9, 0.5, 0.3, 0.7, 0.2], &[1, 3, 2]).unwrap();
        // uniform attention -> mean over frames
        let uniform = Tensor::zeros(&[1, 3, 2]);
        let clip = clip_pooling(&frame, &uniform).unwrap().data();
        assert!((clip[0] - (0.1 + 0.5 + 0.7) / 3.0).abs() < 1e-12);
        assert!((clip[1] - (0.9 + 0.3 + 0.2) / 3.0).abs() < 1e-12);

        // near-one-hot attention at frame 1 -> frame 1 probabilities
        let onehot =
            Tensor::from_vec(vec![0.0, 0.0, 50.0, 50.0, 0.0, 0.0], &[1, 3, 2]).unwrap();
        let clip = clip_pooling(&frame, &onehot).unwrap().data();
        assert!((clip[0] - 0.5).abs() < 1e-10);
        assert!((clip[1] - 0.3).abs() < 1e-10);

        // arbitrary attention stays inside the per-class frame range
        let attn = Tensor::from_vec(vec![1.3, -0.2, 0.4, 2.0, -1.0, 0.3], &[1, 3, 2]).unwrap();
        let clip = clip_pooling(&frame, &attn).unwrap().data();
        assert!(clip[0] >= 0.1 && clip[0] <= 0.7);
        assert!(clip[1] >= 0.2 && clip[1] <= 0.9);
    }

    #[test]
    fn micro_model_builds_and_runs_forward() {
        let model = SeCrnn::new(micro_cfg(), 1).unwrap();
        let x = rand_input(1, 8, 16, 3);
        let out = model.forward_eval(&x).unwrap();
        assert_eq!(out.frame_probs.shape(), vec![1, 8, 2]);
        assert_eq!(out.clip_probs.shape(), vec![1, 2]);
        assert_eq!(out.transformed_feats.as_ref().unwrap().shape(), vec![1, 8, 8]);
        assert!(out
            .frame_probs
            .data()
            .iter()
            .chain(out.clip_probs.data().iter())
            .all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn tiny_spec_channels_build_and_run() {
        let cfg = SECRNNConfig {
            conv_channels: [2, 2, 2, 2, 2, 2, 2],
            n_mels: 64,
            gru_hidden: 2,
            n_classes: 3,
            dropout: 0.0,
            embedding_dim: 16,
            eefd_enabled: false,
            variant_name: "tiny-smoke".into(),
        };
        let model = SeCrnn::new(cfg, 0).unwrap();
        let x = rand_input(1, 64, 64, 4);
        let out = model.forward_eval(&x).unwrap();
        assert_eq!(out.frame_probs.shape(), vec![1, 64, 3]);
        assert!(out.transformed_feats.is_none());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = SeCrnn::new(micro_cfg(), 5).unwrap();
        let x = rand_input(2, 6, 16, 9);
        let a = model.forward_eval(&x).unwrap();
        let b = model.forward_eval(&x).unwrap();
        assert_eq!(a.frame_probs.data(), b.frame_probs.data());
        assert_eq!(a.clip_probs.data(), b.clip_probs.data());
    }

    #[test]
    fn passthrough_merge_matches_eefd_disabled() {
        let seed = 17;
        let with = SeCrnn::new(micro_cfg(), seed).unwrap();
        with.set_passthrough_merge().unwrap();
        let mut cfg = micro_cfg();
        cfg.eefd_enabled = false;
        let without = SeCrnn::new(cfg, seed).unwrap();
        // align shared parameters by name
        for (name, t) in without.params_iter() {
            t.set_data(&with.param(name).data());
        }
        let x = rand_input(1, 6, 16, 23);
        let a = with.forward_eval(&x).unwrap();
        let b = without.forward_eval(&x).unwrap();
        for (p, q) in a.frame_probs.data().iter().zip(b.frame_probs.data()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn eefd_gradient_reaches_conv_parameters() {
        let model = SeCrnn::new(micro_cfg(), 2).unwrap();
        let x = rand_input(1, 5, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.forward_train(&x, &mut rng).unwrap();
        let t = out.transformed_feats.unwrap();
        t.mul(&t).unwrap().mean_all().backward().unwrap();
        let g = model.param("block0.conv.w").grad().expect("no grad on conv");
        let norm: f64 = g.iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "gradient through transformed feats is zero");
    }

    #[test]
    fn eefd_transform_shape_contract() {
        // B=2, C=64-like via micro dims: check [B, T, E] and [B, T, C]
        let model = SeCrnn::new(micro_cfg(), 8).unwrap();
        let x = rand_input(2, 7, 16, 30);
        let out = model.forward_eval(&x).unwrap();
        assert_eq!(out.transformed_feats.unwrap().shape(), vec![2, 7, 8]);
    }

    #[test]
    fn preset_parameter_counts_match_published_sizes() {
        let m8 = SeCrnn::new(SECRNNConfig::se_crnn_8(), 0).unwrap();
        let n8 = m8.param_count() as f64;
        assert!(
            (n8 - 400_000.0).abs() / 400_000.0 < 0.15,
            "SE-CRNN-8 has {n8} params"
        );
        let m16 = SeCrnn::new(SECRNNConfig::se_crnn_16(), 0).unwrap();
        let n16 = m16.param_count() as f64;
        assert!(
            (n16 - 1_300_000.0).abs() / 1_300_000.0 < 0.15,
            "SE-CRNN-16 has {n16} params"
        );
    }

    #[test]
    fn wrong_frequency_count_is_dimension_error() {
        let model = SeCrnn::new(micro_cfg(), 1).unwrap();
        let x = rand_input(1, 8, 17, 3);
        assert!(matches!(
            model.forward_eval(&x),
            Err(SedError::Dimension(_))
        ));
    }

    #[test]
    fn config_kv_roundtrip() {
        let cfg = SECRNNConfig::se_crnn_8();
        let back = SECRNNConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(cfg, back);
    }
}
