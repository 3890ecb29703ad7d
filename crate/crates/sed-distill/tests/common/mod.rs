//! Shared fixtures for integration tests.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sed_distill::audio::FeatureConfig;
use sed_distill::models::{ModelOutput, SECRNNConfig, SeCrnn};
use sed_distill::synth::{
    compose_batch, generate_dataset, BatchComposition, DatasetCache, DatasetConfig,
};
use sed_distill::tensor::{Mode, Tensor};
use sed_distill::train::{
    classification_loss, consistency_loss, eefd_loss, ema_update, takd_loss, total_loss,
    EmaCoupling, TrainMode,
};

pub fn desk_feature_config() -> FeatureConfig {
    FeatureConfig {
        window_size: 512,
        hop_size: 256,
        n_mels: 16,
        ..FeatureConfig::default()
    }
}

pub fn tiny_dataset(
    dir: &Path,
    strong: usize,
    weak: usize,
    unlabeled: usize,
    seed: u64,
    embedding_dim: usize,
) -> DatasetCache {
    let cfg = DatasetConfig {
        k_classes: 3,
        n_strong: strong,
        n_weak: weak,
        n_unlabeled: unlabeled,
        duration_s: 1.0,
        snr_db: 6.0,
        feature_config: desk_feature_config(),
    };
    generate_dataset(dir, &cfg, seed).unwrap();
    DatasetCache::load(dir, seed, embedding_dim).unwrap()
}

pub fn tiny_model_cfg(embedding_dim: usize) -> SECRNNConfig {
    let mut cfg = SECRNNConfig::tiny(16, 3);
    cfg.embedding_dim = embedding_dim;
    cfg
}

/// Student gradients after one full loss evaluation (no optimizer
/// step), replicating the train-step ordering. `mode` selects which
/// distillation terms exist; rng usage is identical across modes so
/// gradients are bit-comparable.
pub fn student_grads_for(
    mode: TrainMode,
    coupling: EmaCoupling,
    alpha: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let dir = tempfile::tempdir().unwrap();
    let cache = tiny_dataset(dir.path(), 2, 1, 2, seed, 24);
    let model_cfg = tiny_model_cfg(24);
    let teacher = SeCrnn::new(model_cfg.clone(), 50).unwrap();
    let student = SeCrnn::new(model_cfg.clone(), seed).unwrap();
    let mean = SeCrnn::new(model_cfg, seed).unwrap();
    mean.copy_from(&student).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = compose_batch(
        &cache,
        BatchComposition { strong: 2, weak: 1, unlabeled: 1 },
        &mut rng,
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let out_s = student.forward_train(&batch.features, &mut rng).unwrap();
    let l_cls = classification_loss(&out_s, &batch).unwrap();
    let out_m = mean.forward_train(&batch.features, &mut rng).unwrap();
    let l_con = consistency_loss(&out_s, &out_m).unwrap();

    let coupled_map = if coupling == EmaCoupling::Coupled {
        let mut map = HashMap::new();
        for (name, m) in mean.params_iter() {
            let frozen: Vec<f64> = m.data().iter().map(|&v| alpha * v).collect();
            let base = Tensor::from_vec(frozen, &m.shape()).unwrap();
            let s = student.param(name).mul_scalar(1.0 - alpha);
            map.insert(name.clone(), base.add(&s).unwrap());
        }
        Some(map)
    } else {
        None
    };
    ema_update(&mean, &student, alpha).unwrap();

    let out_kd = teacher.forward_eval(&batch.features).unwrap();
    let (l_takd, l_eefd) = if mode == TrainMode::SupervisedOnly {
        (Tensor::zeros(&[]), Tensor::zeros(&[]))
    } else {
        let out_ms = match &coupled_map {
            Some(map) => mean
                .forward_with(map, &batch.features, Mode::Train, Some(&mut rng))
                .unwrap(),
            None => {
                let out = mean.forward_train(&batch.features, &mut rng).unwrap();
                ModelOutput {
                    frame_probs: out.frame_probs.detach(),
                    clip_probs: out.clip_probs.detach(),
                    transformed_feats: out.transformed_feats.map(|t| t.detach()),
                }
            }
        };
        let l_takd = takd_loss(&out_ms, &out_kd).unwrap();
        let l_eefd =
            eefd_loss(out_ms.transformed_feats.as_ref().unwrap(), &batch.embeddings).unwrap();
        (l_takd, l_eefd)
    };

    let l_total = total_loss(&l_cls, &l_con, &l_takd, &l_eefd, 1.0).unwrap();
    for (_, p) in student.params_iter() {
        p.zero_grad();
    }
    l_total.backward().unwrap();
    student
        .params_iter()
        .map(|(_, p)| p.grad().unwrap_or_default())
        .collect()
}
