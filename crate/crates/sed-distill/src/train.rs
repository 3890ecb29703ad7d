//! Dual-distillation training: mean-student EMA, teacher distillation
//! through the mean student, train-time embedding feature
//! distillation, loss scheduling, Adam, and the training loop.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, param_hash, save_checkpoint};
use crate::error::{Result, SedError};
use crate::eval::{self, ClipEval};
use crate::models::{ModelOutput, SECRNNConfig, SeCrnn};
use crate::synth::{compose_batch, Batch, BatchComposition, DatasetCache, Split};
use crate::tensor::Tensor;

pub const DEFAULT_EMA_ALPHA: f64 = 0.999;
pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 48;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_RAMP_EPOCHS: usize = 50;
const BCE_EPS: f64 = 1e-7;
const PSDS_THRESHOLDS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    SupervisedOnly,
    MeanTeacher,
    Cdtd,
    Takd,
    TakdEefd,
}

impl TrainMode {
    pub fn needs_teacher(&self) -> bool {
        matches!(self, TrainMode::Cdtd | TrainMode::Takd | TrainMode::TakdEefd)
    }

    pub fn uses_mean_student(&self) -> bool {
        *self != TrainMode::SupervisedOnly
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::SupervisedOnly => "supervised_only",
            TrainMode::MeanTeacher => "mean_teacher",
            TrainMode::Cdtd => "cdtd",
            TrainMode::Takd => "takd",
            TrainMode::TakdEefd => "takd_eefd",
        }
    }
}

impl FromStr for TrainMode {
    type Err = SedError;
    fn from_str(s: &str) -> Result<TrainMode> {
        match s.to_ascii_lowercase().as_str() {
            "supervised_only" => Ok(TrainMode::SupervisedOnly),
            "mean_teacher" => Ok(TrainMode::MeanTeacher),
            "cdtd" => Ok(TrainMode::Cdtd),
            "takd" => Ok(TrainMode::Takd),
            "takd_eefd" | "takd+eefd" => Ok(TrainMode::TakdEefd),
            other => Err(SedError::Usage(format!("unknown mode {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmaCoupling {
    Detached,
    Coupled,
}

impl EmaCoupling {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmaCoupling::Detached => "detached",
            EmaCoupling::Coupled => "coupled",
        }
    }
}

impl FromStr for EmaCoupling {
    type Err = SedError;
    fn from_str(s: &str) -> Result<EmaCoupling> {
        match s.to_ascii_lowercase().as_str() {
            "detached" => Ok(EmaCoupling::Detached),
            "coupled" => Ok(EmaCoupling::Coupled),
            other => Err(SedError::Usage(format!("unknown coupling {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    None,
    Mixup,
    TimeMask,
    Both,
}

impl Augmentation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Mixup => "mixup",
            Augmentation::TimeMask => "time_mask",
            Augmentation::Both => "both",
        }
    }
}

impl FromStr for Augmentation {
    type Err = SedError;
    fn from_str(s: &str) -> Result<Augmentation> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Augmentation::None),
            "mixup" => Ok(Augmentation::Mixup),
            "time_mask" => Ok(Augmentation::TimeMask),
            "both" => Ok(Augmentation::Both),
            other => Err(SedError::Usage(format!("unknown augmentation {other}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub ema_alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ramp_epochs: usize,
    pub mode: TrainMode,
    pub ema_gradient_coupling: EmaCoupling,
    pub seed: u64,
    pub batch_composition: BatchComposition,
    pub augmentation: Augmentation,
    /// Validation clips are capped to keep desk-scale runs fast.
    pub val_max_clips: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ema_alpha: DEFAULT_EMA_ALPHA,
            lr: DEFAULT_LR,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            ramp_epochs: DEFAULT_RAMP_EPOCHS,
            mode: TrainMode::TakdEefd,
            ema_gradient_coupling: EmaCoupling::Coupled,
            seed: 0,
            batch_composition: BatchComposition { strong: 12, weak: 12, unlabeled: 24 },
            augmentation: Augmentation::None,
            val_max_clips: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(SedError::Config(format!("ema_alpha must be in [0,1], got {}", self.ema_alpha)));
        }
        if self.ramp_epochs > self.epochs {
            return Err(SedError::Config(format!(
                "ramp_epochs {} exceeds epochs {}",
                self.ramp_epochs, self.epochs
            )));
        }
        if self.batch_composition.total() != self.batch_size {
            return Err(SedError::Config(format!(
                "batch composition sums to {}, batch_size is {}",
                self.batch_composition.total(),
                self.batch_size
            )));
        }
        if self.lr <= 0.0 {
            return Err(SedError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "ema_alpha={}\nlr={}\nbatch_size={}\nepochs={}\nramp_epochs={}\nmode={}\n\
             ema_gradient_coupling={}\nseed={}\nbatch_strong={}\nbatch_weak={}\n\
             batch_unlabeled={}\naugmentation={}\nval_max_clips={}\n",
            self.ema_alpha,
            self.lr,
            self.batch_size,
            self.epochs,
            self.ramp_epochs,
            self.mode.as_str(),
            self.ema_gradient_coupling.as_str(),
            self.seed,
            self.batch_composition.strong,
            self.batch_composition.weak,
            self.batch_composition.unlabeled,
            self.augmentation.as_str(),
            self.val_max_clips
        )
    }

    /// Apply one key=value override (config-file line or CLI flag).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| SedError::Config(format!("bad value for {key}: {e}"));
        match key {
            "ema_alpha" => self.ema_alpha = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "lr" => self.lr = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "epochs" => self.epochs = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "ramp_epochs" => self.ramp_epochs = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "mode" => self.mode = value.parse()?,
            "ema_gradient_coupling" => self.ema_gradient_coupling = value.parse()?,
            "seed" => self.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "batch_strong" => self.batch_composition.strong = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "batch_weak" => self.batch_composition.weak = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "batch_unlabeled" => self.batch_composition.unlabeled = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "augmentation" => self.augmentation = value.parse()?,
            "val_max_clips" => self.val_max_clips = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            other => return Err(SedError::Config(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SedError::Config(format!("config line has no '=': {line}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub step: usize,
    pub mu: f64,
    pub l_cls: f64,
    pub l_con: f64,
    pub l_takd: f64,
    pub l_eefd: f64,
    pub l_total: f64,
}

/// μ = exp(−5·(1−r)²), r = min(1, step / ramp_steps).
pub fn mu_schedule(global_step: usize, ramp_steps: usize) -> f64 {
    assert!(ramp_steps >= 1, "ramp_steps must be >= 1");
    let r = (global_step as f64 / ramp_steps as f64).min(1.0);
    (-5.0 * (1.0 - r) * (1.0 - r)).exp()
}

fn bce(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    if probs.shape() != targets.shape() {
        return Err(SedError::Input(format!(
            "label shape {:?} does not match output shape {:?}",
            targets.shape(),
            probs.shape()
        )));
    }
    let p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let ones = Tensor::full(&p.shape(), 1.0);
    let pos = targets.mul(&p.log())?;
    let neg = ones.sub(targets)?.mul(&ones.sub(&p)?.log())?;
    Ok(pos.add(&neg)?.mean_all().neg())
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.mean_all())
}

/// BCE of frame predictions against strong labels plus BCE of clip
/// predictions against weak labels (strong clips contribute collapsed
/// clip labels too). Unlabeled clips contribute nothing.
pub fn classification_loss(out: &ModelOutput, batch: &Batch) -> Result<Tensor> {
    let comp = batch.composition;
    let mut loss = Tensor::zeros(&[]);
    if comp.strong > 0 {
        let frame = out.frame_probs.narrow(0, 0, comp.strong)?;
        loss = loss.add(&bce(&frame, &batch.frame_labels)?)?;
    }
    let labeled = comp.strong + comp.weak;
    if labeled > 0 {
        let clip = out.clip_probs.narrow(0, 0, labeled)?;
        loss = loss.add(&bce(&clip, &batch.clip_labels)?)?;
    }
    Ok(loss)
}

/// MSE between student and (detached) mean-student predictions at
/// both frame and clip level, over every clip in the batch.
pub fn consistency_loss(student: &ModelOutput, mean: &ModelOutput) -> Result<Tensor> {
    let frame = mse(&student.frame_probs, &mean.frame_probs.detach())?;
    let clip = mse(&student.clip_probs, &mean.clip_probs.detach())?;
    frame.add(&clip)
}

/// Distillation between mean-student and frozen-teacher predictions:
/// clip-level MSE plus frame-level MSE. n counts clips; the frame and
/// class axes are mean-reduced inside each term, which for equal
/// shapes equals the global element mean.
pub fn takd_loss(mean: &ModelOutput, teacher: &ModelOutput) -> Result<Tensor> {
    let clip = mse(&mean.clip_probs, &teacher.clip_probs.detach())?;
    let frame = mse(&mean.frame_probs, &teacher.frame_probs.detach())?;
    clip.add(&frame)
}

/// Same functional form as `takd_loss` but on the student's own
/// predictions (conventional dual-teacher distillation).
pub fn cdtd_loss(student: &ModelOutput, teacher: &ModelOutput) -> Result<Tensor> {
    takd_loss(student, teacher)
}

/// Feature distillation: transformed features `[B, T, E]` are pooled
/// along time to the embedding length `T_e`, then compared by MSE.
pub fn eefd_loss(transformed: &Tensor, embeddings: &Tensor) -> Result<Tensor> {
    let ts = transformed.shape();
    let es = embeddings.shape();
    if ts.len() != 3 || es.len() != 3 || ts[2] != es[2] {
        return Err(SedError::Dimension(format!(
            "eefd_loss widths differ: transformed {ts:?} vs embeddings {es:?}"
        )));
    }
    let pooled = transformed.adaptive_avg_axis(1, es[1])?;
    mse(&pooled, &embeddings.detach())
}

/// L_total = L_CLS + μ·(L_CON + L_TAKD + L_EEFD).
pub fn total_loss(
    l_cls: &Tensor,
    l_con: &Tensor,
    l_takd: &Tensor,
    l_eefd: &Tensor,
    mu: f64,
) -> Result<Tensor> {
    let extra = l_con.add(l_takd)?.add(l_eefd)?;
    l_cls.add(&extra.mul_scalar(mu))
}

/// m ← α·m + (1−α)·s for every parameter, in place (numeric, no
/// graph). Batch-norm running statistics are copied from the student.
pub fn ema_update(mean: &SeCrnn, student: &SeCrnn, alpha: f64) -> Result<()> {
    if mean.param_names() != student.param_names() {
        return Err(SedError::Architecture(
            "ema_update: parameter name sets differ".into(),
        ));
    }
    for (name, m) in mean.params_iter() {
        let s = student.param(name);
        if m.shape() != s.shape() {
            return Err(SedError::Architecture(format!(
                "ema_update: parameter {name} shapes differ: {:?} vs {:?}",
                m.shape(),
                s.shape()
            )));
        }
        let mv = m.data();
        let sv = s.data();
        let new: Vec<f64> = mv
            .iter()
            .zip(&sv)
            .map(|(&mi, &si)| alpha * mi + (1.0 - alpha) * si)
            .collect();
        m.set_data(&new);
    }
    for (name, values) in student.buffers() {
        mean.set_buffer(&name, &values)?;
    }
    Ok(())
}

/// Adam with bias correction; β=(0.9, 0.999), ε=1e-8.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = (&'a String, &'a Tensor)>) {
        self.t += 1;
        let correction = (1.0 - self.beta2.powi(self.t as i32)).sqrt()
            / (1.0 - self.beta1.powi(self.t as i32));
        let lr_t = self.lr * correction;
        for (name, tensor) in params {
            let Some(grad) = tensor.grad() else { continue };
            let n = grad.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let mut data = tensor.data();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                data[i] -= lr_t * m[i] / (v[i].sqrt() + self.eps);
            }
            tensor.set_data(&data);
        }
    }
}

/// Student, EMA mean student, and optional frozen teacher.
pub struct ModelTriple {
    pub student: SeCrnn,
    pub mean_student: SeCrnn,
    pub teacher: Option<SeCrnn>,
}

impl ModelTriple {
    pub fn new(model_cfg: SECRNNConfig, seed: u64, teacher: Option<SeCrnn>) -> Result<ModelTriple> {
        let student = SeCrnn::new(model_cfg.clone(), seed)?;
        let mean_student = SeCrnn::new(model_cfg, seed)?;
        mean_student.copy_from(&student)?;
        Ok(ModelTriple { student, mean_student, teacher })
    }
}

fn check_finite(value: f64, component: &str, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SedError::Divergence { component: component.to_string(), step: step as u64 })
    }
}

/// One optimization step. Ordering: student forward → L_CLS →
/// pre-update mean-student forward (detached) → L_CON → EMA update →
/// post-update mean-student and teacher forwards → L_TAKD, L_EEFD →
/// L_total → backprop into the student only → Adam.
pub fn train_step(
    triple: &ModelTriple,
    batch: &Batch,
    cfg: &TrainConfig,
    opt: &mut Adam,
    step: usize,
    ramp_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let student = &triple.student;
    let mean = &triple.mean_student;
    let zero = Tensor::zeros(&[]);

    // (1)-(2) student forward and classification loss
    let out_s = student.forward_train(&batch.features, rng)?;
    let l_cls = classification_loss(&out_s, batch)?;

    // (3) consistency against the pre-update mean student
    let l_con = if cfg.mode.uses_mean_student() {
        let out_m = mean.forward_train(&batch.features, rng)?;
        consistency_loss(&out_s, &out_m)?
    } else {
        zero.clone()
    };

    // (4) EMA update; in coupled mode keep the (1−α)·s term
    // differentiable for the post-update forward below
    let coupled_params: Option<HashMap<String, Tensor>> = if cfg.mode.uses_mean_student() {
        let coupled = matches!(cfg.mode, TrainMode::Takd | TrainMode::TakdEefd)
            && cfg.ema_gradient_coupling == EmaCoupling::Coupled;
        let map = if coupled {
            let alpha = cfg.ema_alpha;
            let mut map = HashMap::new();
            for (name, m) in mean.params_iter() {
                let frozen: Vec<f64> = m.data().iter().map(|&v| alpha * v).collect();
                let base = Tensor::from_vec(frozen, &m.shape())?;
                let s = student.param(name).mul_scalar(1.0 - alpha);
                map.insert(name.clone(), base.add(&s)?);
            }
            Some(map)
        } else {
            None
        };
        ema_update(mean, student, cfg.ema_alpha)?;
        map
    } else {
        None
    };

    // (5) distillation terms
    let (l_takd, l_eefd) = if cfg.mode.needs_teacher() {
        let teacher = triple
            .teacher
            .as_ref()
            .ok_or_else(|| SedError::Config("mode requires a teacher model".into()))?;
        let out_kd = teacher.forward_eval(&batch.features)?;
        match cfg.mode {
            TrainMode::Cdtd => (cdtd_loss(&out_s, &out_kd)?, zero.clone()),
            _ => {
                let out_ms = match &coupled_params {
                    Some(map) => {
                        mean.forward_with(map, &batch.features, crate::tensor::Mode::Train, Some(rng))?
                    }
                    None => {
                        let out = mean.forward_train(&batch.features, rng)?;
                        ModelOutput {
                            frame_probs: out.frame_probs.detach(),
                            clip_probs: out.clip_probs.detach(),
                            transformed_feats: out.transformed_feats.map(|t| t.detach()),
                        }
                    }
                };
                let l_takd = takd_loss(&out_ms, &out_kd)?;
                let l_eefd = if cfg.mode == TrainMode::TakdEefd {
                    let feats = out_ms.transformed_feats.as_ref().ok_or_else(|| {
                        SedError::Config("takd_eefd mode requires an eefd-enabled model".into())
                    })?;
                    eefd_loss(feats, &batch.embeddings)?
                } else {
                    zero.clone()
                };
                (l_takd, l_eefd)
            }
        }
    } else {
        (zero.clone(), zero.clone())
    };

    // (6) total loss with scheduled μ
    let mu = mu_schedule(step, ramp_steps);
    let l_total = total_loss(&l_cls, &l_con, &l_takd, &l_eefd, mu)?;

    let breakdown = LossBreakdown {
        step,
        mu,
        l_cls: check_finite(l_cls.item(), "l_cls", step)?,
        l_con: check_finite(l_con.item(), "l_con", step)?,
        l_takd: check_finite(l_takd.item(), "l_takd", step)?,
        l_eefd: check_finite(l_eefd.item(), "l_eefd", step)?,
        l_total: check_finite(l_total.item(), "l_total", step)?,
    };

    // (7) backprop into the student, Adam update
    for (_, p) in student.params_iter() {
        p.zero_grad();
    }
    l_total.backward()?;
    opt.step(student.params_iter());
    for (_, p) in student.params_iter() {
        p.zero_grad();
    }
    Ok(breakdown)
}

fn sample_beta_02(rng: &mut ChaCha8Rng) -> f64 {
    // Johnk's algorithm for Beta(a, a) with a = 0.2
    let a = 0.2;
    loop {
        let u: f64 = rng.gen_range(0.0f64..1.0);
        let v: f64 = rng.gen_range(0.0f64..1.0);
        let x = u.powf(1.0 / a);
        let y = v.powf(1.0 / a);
        if x + y <= 1.0 && x + y > 0.0 {
            return x / (x + y);
        }
    }
}

fn mix(dst: &mut [f64], src: &[f64], lambda: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = lambda * *d + (1.0 - lambda) * s;
    }
}

/// Mixup pairs clips within the same split segment (a convex
/// combination of strong and unlabeled labels would be meaningless);
/// time masking zeroes a random span of at most 5% of the frames in
/// the features only.
pub fn augment(batch: &Batch, kind: Augmentation, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if kind == Augmentation::None {
        return Ok(Batch {
            features: batch.features.clone(),
            frame_labels: batch.frame_labels.clone(),
            clip_labels: batch.clip_labels.clone(),
            embeddings: batch.embeddings.clone(),
            composition: batch.composition,
            clip_ids: batch.clip_ids.clone(),
        });
    }
    let comp = batch.composition;
    let b = comp.total();
    let f_shape = batch.features.shape();
    let (t, f) = (f_shape[2], f_shape[3]);
    let clip_f = t * f;
    let mut feats = batch.features.data();
    let mut frame_labels = batch.frame_labels.data();
    let mut clip_labels = batch.clip_labels.data();
    let mut emb = batch.embeddings.data();
    let e_shape = batch.embeddings.shape();
    let clip_e = e_shape[1] * e_shape[2];
    let k = if comp.strong + comp.weak > 0 {
        clip_labels.len() / (comp.strong + comp.weak)
    } else {
        0
    };

    if matches!(kind, Augmentation::Mixup | Augmentation::Both) {
        let lambda = sample_beta_02(rng);
        let src_feats = feats.clone();
        let src_frame = frame_labels.clone();
        let src_clip = clip_labels.clone();
        let src_emb = emb.clone();
        let segments = [
            (0, comp.strong),
            (comp.strong, comp.weak),
            (comp.strong + comp.weak, comp.unlabeled),
        ];
        for (start, len) in segments {
            for i in 0..len {
                let a = start + i;
                let b_idx = start + (len - 1 - i); // pair with segment-reversed clip
                mix(&mut feats[a * clip_f..(a + 1) * clip_f], &src_feats[b_idx * clip_f..(b_idx + 1) * clip_f], lambda);
                mix(&mut emb[a * clip_e..(a + 1) * clip_e], &src_emb[b_idx * clip_e..(b_idx + 1) * clip_e], lambda);
                if a < comp.strong {
                    let clip_l = t * k;
                    mix(&mut frame_labels[a * clip_l..(a + 1) * clip_l], &src_frame[b_idx * clip_l..(b_idx + 1) * clip_l], lambda);
                }
                if a < comp.strong + comp.weak {
                    mix(&mut clip_labels[a * k..(a + 1) * k], &src_clip[b_idx * k..(b_idx + 1) * k], lambda);
                }
            }
        }
    }

    if matches!(kind, Augmentation::TimeMask | Augmentation::Both) {
        let max_span = ((t as f64 * 0.05) as usize).max(1);
        for clip in 0..b {
            let span = rng.gen_range(1..=max_span);
            let start = rng.gen_range(0..=(t - span));
            for fi in start..start + span {
                for bin in 0..f {
                    feats[clip * clip_f + fi * f + bin] = 0.0;
                }
            }
        }
    }

    Ok(Batch {
        features: Tensor::from_vec(feats, &f_shape)?,
        frame_labels: Tensor::from_vec(frame_labels, &batch.frame_labels.shape())?,
        clip_labels: Tensor::from_vec(clip_labels, &batch.clip_labels.shape())?,
        embeddings: Tensor::from_vec(emb, &e_shape)?,
        composition: comp,
        clip_ids: batch.clip_ids.clone(),
    })
}

pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_student: PathBuf,
    pub final_mean_student: PathBuf,
    pub best_val_segment_f1: f64,
    pub final_breakdown: LossBreakdown,
    /// (start, end) hash of teacher parameters, when a teacher is used.
    pub teacher_hash: Option<(u64, u64)>,
}

/// Validation clips: unlabeled clips with held-out ground truth when
/// available, otherwise strong clips; sorted by id, capped.
fn validation_ids(cache: &DatasetCache, cap: usize) -> Vec<String> {
    let mut ids: Vec<String> = cache
        .manifest
        .split_ids(Split::Unlabeled)
        .iter()
        .filter(|r| cache.truth.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if ids.is_empty() {
        ids = cache
            .manifest
            .split_ids(Split::Strong)
            .iter()
            .map(|r| r.id.clone())
            .collect();
    }
    ids.sort();
    ids.truncate(cap);
    ids
}

struct ValMetrics {
    segment_f1: f64,
    event_f1: f64,
    psds_lite: f64,
}

fn validate_model(model: &SeCrnn, cache: &DatasetCache, ids: &[String]) -> Result<ValMetrics> {
    let k = cache.manifest.class_names.len();
    let fcfg = &cache.manifest.feature_config;
    let frame_dur = fcfg.hop_size as f64 / fcfg.sample_rate as f64;
    let duration = cache.n_frames as f64 * frame_dur;
    let mut probs = Vec::new();
    let mut truths = Vec::new();
    let mut durations = Vec::new();
    for id in ids {
        let logmel = &cache.features[id];
        let shape = logmel.shape();
        let x = Tensor::from_vec(logmel.data(), &[1, 1, shape[0], shape[1]])?;
        let out = model.forward_eval(&x)?;
        let fp = out.frame_probs.reshape(&[shape[0], k])?;
        probs.push(Tensor::from_vec(fp.data(), &[shape[0], k])?);
        truths.push(cache.truth.get(id).cloned().unwrap_or_default());
        durations.push(duration);
    }
    let mut preds = Vec::new();
    for p in &probs {
        preds.push(eval::decode(p, eval::DEFAULT_THRESHOLD, eval::DEFAULT_MEDIAN_LEN, frame_dur)?);
    }
    let clips: Vec<ClipEval> = preds
        .iter()
        .zip(&truths)
        .map(|(pred, truth)| ClipEval { pred, truth, duration_s: duration })
        .collect();
    Ok(ValMetrics {
        segment_f1: eval::segment_f1(&clips, k, eval::DEFAULT_SEGMENT_S),
        event_f1: eval::event_f1(&clips, k, eval::DEFAULT_COLLAR_S),
        psds_lite: eval::psds_lite(
            &probs,
            &truths,
            &durations,
            k,
            &PSDS_THRESHOLDS,
            eval::DEFAULT_MEDIAN_LEN,
            frame_dur,
        )?,
    })
}

/// Full deterministic training run: per-epoch metrics CSV, best
/// checkpoint by validation segment-F1, final student and
/// mean-student checkpoints.
pub fn train_loop(
    model_cfg: SECRNNConfig,
    cfg: &TrainConfig,
    cache: &DatasetCache,
    teacher_path: Option<&Path>,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    model_cfg.validate()?;
    if cfg.mode.needs_teacher() && teacher_path.is_none() {
        return Err(SedError::Config(format!(
            "mode {} requires a teacher checkpoint (--teacher)",
            cfg.mode.as_str()
        )));
    }
    let teacher = teacher_path.map(load_checkpoint).transpose()?;
    let hash_start = teacher.as_ref().map(param_hash);
    let triple = ModelTriple::new(model_cfg, cfg.seed, teacher)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("run_config.txt"), cfg.to_kv())?;

    let val_ids = validation_ids(cache, cfg.val_max_clips);
    let n_train = cache.manifest.records.len();
    let batches_per_epoch = (n_train / cfg.batch_size).max(1);
    let ramp_steps = (cfg.ramp_epochs * batches_per_epoch).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut csv = String::from(
        "epoch,mu,l_cls,l_con,l_takd,l_eefd,l_total,val_segment_f1,val_event_f1,psds_lite\n",
    );
    let metrics_path = out_dir.join("metrics.csv");
    let best_path = out_dir.join("student_best.ckpt");
    let mut best_f1 = f64::NEG_INFINITY;
    let mut step = 0usize;
    let mut last = LossBreakdown::default();

    for epoch in 0..cfg.epochs {
        let mut sums = LossBreakdown::default();
        for _ in 0..batches_per_epoch {
            let batch = compose_batch(cache, cfg.batch_composition, &mut rng)?;
            let batch = augment(&batch, cfg.augmentation, &mut rng)?;
            let b = train_step(&triple, &batch, cfg, &mut opt, step, ramp_steps, &mut rng)?;
            sums.mu += b.mu;
            sums.l_cls += b.l_cls;
            sums.l_con += b.l_con;
            sums.l_takd += b.l_takd;
            sums.l_eefd += b.l_eefd;
            sums.l_total += b.l_total;
            step += 1;
        }
        let n = batches_per_epoch as f64;
        last = LossBreakdown {
            step,
            mu: sums.mu / n,
            l_cls: sums.l_cls / n,
            l_con: sums.l_con / n,
            l_takd: sums.l_takd / n,
            l_eefd: sums.l_eefd / n,
            l_total: sums.l_total / n,
        };
        let val = validate_model(&triple.student, cache, &val_ids)?;
        csv.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{:.6}\n",
            epoch, last.mu, last.l_cls, last.l_con, last.l_takd, last.l_eefd, last.l_total,
            val.segment_f1, val.event_f1, val.psds_lite
        ));
        if val.segment_f1 > best_f1 {
            best_f1 = val.segment_f1;
            save_checkpoint(&triple.student, &best_path)?;
        }
    }

    let mut file = std::fs::File::create(&metrics_path)?;
    file.write_all(csv.as_bytes())?;
    let final_student = out_dir.join("student_final.ckpt");
    let final_mean = out_dir.join("mean_student_final.ckpt");
    save_checkpoint(&triple.student, &final_student)?;
    save_checkpoint(&triple.mean_student, &final_mean)?;
    let hash_end = triple.teacher.as_ref().map(param_hash);

    Ok(RunArtifacts {
        metrics_path,
        best_checkpoint: best_path,
        final_student,
        final_mean_student: final_mean,
        best_val_segment_f1: best_f1,
        final_breakdown: last,
        teacher_hash: hash_start.zip(hash_end),
    })
}
