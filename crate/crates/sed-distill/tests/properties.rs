//! Property-based invariants: numeric identities of tensor ops and
//! lossless round-trips of the on-disk formats.

use proptest::prelude::*;

use sed_distill::eval;
use sed_distill::synth::{
    load_ground_truth, save_ground_truth, write_embedding_cache, read_embedding_cache,
    GroundTruth, LabeledEvent, Manifest, ClipRecord, Split,
};
use sed_distill::audio::FeatureConfig;
use sed_distill::tensor::Tensor;
use sed_distill::train::mu_schedule;

fn finite_vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, d in 1usize..8, seed in any::<u64>()) {
        let mut state = seed;
        let vals: Vec<f64> = (0..rows * d)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 40.0 - 20.0
            })
            .collect();
        let t = Tensor::from_vec(vals, &[rows, d]).unwrap();
        let s = t.softmax_lastdim().data();
        for r in 0..rows {
            let sum: f64 = s[r * d..(r + 1) * d].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
            prop_assert!(s[r * d..(r + 1) * d].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn detach_blocks_gradient_flow(vals in finite_vals(6)) {
        let x = Tensor::param(vals.clone(), &[6]).unwrap();
        let through = x.mul_scalar(3.0).detach();
        let loss = through.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        // only the direct factor contributes: d/dx (c * x) = c
        for (gi, vi) in g.iter().zip(&vals) {
            prop_assert!((gi - 3.0 * vi).abs() < 1e-9);
        }
    }

    #[test]
    fn mu_schedule_is_monotone_and_bounded(ramp in 1usize..200, step in 0usize..400) {
        let mu = mu_schedule(step, ramp);
        prop_assert!(mu > 0.0 && mu <= 1.0);
        prop_assert!(mu_schedule(step + 1, ramp) >= mu);
        if step >= ramp {
            prop_assert_eq!(mu, 1.0);
        }
    }

    #[test]
    fn decode_produces_wellformed_events(t in 3usize..40, k in 1usize..5, seed in any::<u64>()) {
        let mut state = seed | 1;
        let vals: Vec<f64> = (0..t * k)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let probs = Tensor::from_vec(vals, &[t, k]).unwrap();
        let frame_dur = 0.02;
        let events = eval::decode(&probs, 0.5, 3, frame_dur).unwrap();
        for e in &events {
            prop_assert!(e.class_index < k);
            prop_assert!(e.onset_s < e.offset_s);
            prop_assert!(e.onset_s >= 0.0);
            prop_assert!(e.offset_s <= t as f64 * frame_dur + 1e-9);
        }
    }

    #[test]
    fn ground_truth_roundtrips_exactly(
        n in 0usize..5,
        times in prop::collection::vec((0.0f64..9.0, 0.01f64..1.0, 0usize..5), 0..12),
    ) {
        let mut truth = GroundTruth::new();
        for (i, chunk) in times.chunks(3).enumerate().take(n.max(1)) {
            let events: Vec<LabeledEvent> = chunk
                .iter()
                .map(|&(onset, len, class)| LabeledEvent {
                    class_index: class,
                    onset_s: onset,
                    offset_s: onset + len,
                })
                .collect();
            truth.insert(format!("clip_{i:03}"), events);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.jsonl");
        save_ground_truth(&truth, &path).unwrap();
        let back = load_ground_truth(&path).unwrap();
        prop_assert_eq!(back, truth);
    }

    #[test]
    fn manifest_roundtrips_exactly(
        durs in prop::collection::vec(0.5f64..20.0, 1..6),
        seed in any::<u64>(),
    ) {
        let records: Vec<ClipRecord> = durs
            .iter()
            .enumerate()
            .map(|(i, &d)| ClipRecord {
                id: format!("clip_{i:03}"),
                split: [Split::Strong, Split::Weak, Split::Unlabeled][i % 3],
                duration: d,
                events: vec![LabeledEvent { class_index: i % 3, onset_s: d * 0.1, offset_s: d * 0.7 }],
                weak_labels: vec![i % 3],
                wave_path: format!("waves/clip_{i:03}.f32"),
                seed: seed.wrapping_add(i as u64),
            })
            .collect();
        let manifest = Manifest {
            class_names: vec!["a".into(), "b".into(), "c".into()],
            feature_config: FeatureConfig::default(),
            records,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        prop_assert_eq!(back.class_names, manifest.class_names);
        prop_assert_eq!(back.records.len(), manifest.records.len());
        for (b, m) in back.records.iter().zip(&manifest.records) {
            prop_assert_eq!(
                serde_json::to_string(b).unwrap(),
                serde_json::to_string(m).unwrap()
            );
        }
    }

    #[test]
    fn embedding_cache_roundtrips_f32_exactly(t in 1usize..9, d in 1usize..9, seed in any::<u64>()) {
        let mut state = seed | 1;
        let vals: Vec<f64> = (0..t * d)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32 as f64
            })
            .collect();
        let emb = Tensor::from_vec(vals.clone(), &[t, d]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        write_embedding_cache(&path, &emb).unwrap();
        let back = read_embedding_cache(&path).unwrap();
        prop_assert_eq!(back.shape(), vec![t, d]);
        let bits_a: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = vals.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits_a, bits_b);
    }
}
