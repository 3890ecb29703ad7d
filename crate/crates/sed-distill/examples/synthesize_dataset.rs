//! Generate a small synthetic dataset and inspect its manifest.
//!
//! Clips are pink noise with class-specific tone bursts. Strong clips
//! carry frame-level annotations, weak clips carry clip-level labels,
//! unlabeled clips carry nothing; held-out ground truth for all clips
//! lands in a sidecar file the trainer uses only for validation.

use sed_distill::audio::FeatureConfig;
use sed_distill::synth::{generate_dataset, DatasetConfig, Split};

fn main() -> sed_distill::Result<()> {
    let dir = std::env::temp_dir().join("sed-synth-example");
    let cfg = DatasetConfig {
        k_classes: 4,
        n_strong: 5,
        n_weak: 5,
        n_unlabeled: 10,
        duration_s: 3.0,
        snr_db: 6.0,
        feature_config: FeatureConfig {
            window_size: 1024,
            hop_size: 256,
            n_mels: 64,
            ..FeatureConfig::default()
        },
    };
    let (manifest, truth) = generate_dataset(&dir, &cfg, 7)?;

    println!("dataset at {}", dir.display());
    println!("classes: {:?}", manifest.class_names);
    for split in [Split::Strong, Split::Weak, Split::Unlabeled] {
        println!("{split:?}: {} clips", manifest.split_ids(split).len());
    }

    let strong = &manifest.split_ids(Split::Strong)[0];
    println!("\n{} events:", strong.id);
    for e in &strong.events {
        println!(
            "  class {} from {:.2}s to {:.2}s",
            e.class_index, e.onset_s, e.offset_s
        );
    }

    let unlabeled = &manifest.split_ids(Split::Unlabeled)[0];
    println!(
        "\n{}: {} events in manifest, {} in held-out truth",
        unlabeled.id,
        unlabeled.events.len(),
        truth[&unlabeled.id].len()
    );
    Ok(())
}
