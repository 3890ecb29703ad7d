//! Deterministic synthetic dataset generation, a frozen mock embedding
//! provider, and semi-supervised batch composition.
//!
//! Each class is a distinguishable signal family: a class-specific
//! carrier band with a class-specific amplitude envelope, placed over a
//! pink-noise background at a configurable SNR. Everything is a pure
//! function of (seed, config); per-clip RNG streams are derived from
//! (dataset seed, clip id).

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{extract_log_mel, read_wave_f32le, write_wave_f32le, FeatureConfig};
use crate::error::{Result, SedError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Strong,
    Weak,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub class_index: usize,
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub split: Split,
    pub duration: f64,
    /// Frame-level annotations; populated for strong clips only.
    pub events: Vec<LabeledEvent>,
    /// Clip-level class set; populated for strong and weak clips.
    pub weak_labels: Vec<usize>,
    pub wave_path: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub feature_config: FeatureConfig,
    #[serde(skip)]
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let k = self.class_names.len();
        for r in &self.records {
            if !seen.insert(r.id.clone()) {
                return Err(SedError::Format(format!("duplicate clip id {}", r.id)));
            }
            for e in &r.events {
                if e.class_index >= k {
                    return Err(SedError::Format(format!(
                        "clip {}: class {} out of range (K={k})",
                        r.id, e.class_index
                    )));
                }
                if !(0.0 <= e.onset_s && e.onset_s < e.offset_s && e.offset_s <= r.duration) {
                    return Err(SedError::Format(format!(
                        "clip {}: bad event interval [{}, {}]",
                        r.id, e.onset_s, e.offset_s
                    )));
                }
            }
            if r.weak_labels.iter().any(|&c| c >= k) {
                return Err(SedError::Format(format!("clip {}: weak label out of range", r.id)));
            }
        }
        Ok(())
    }

    pub fn split_ids(&self, split: Split) -> Vec<&ClipRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// JSON-lines: a header object with class names and feature config,
    /// then one record per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = serde_json::to_string(self).map_err(fmt_err)?;
        writeln!(file, "{header}")?;
        for r in &self.records {
            writeln!(file, "{}", serde_json::to_string(r).map_err(fmt_err)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| SedError::Format("empty manifest".into()))??;
        let mut manifest: Manifest = serde_json::from_str(&header).map_err(fmt_err)?;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            manifest
                .records
                .push(serde_json::from_str(&line).map_err(fmt_err)?);
        }
        manifest.validate()?;
        Ok(manifest)
    }
}

fn fmt_err(e: serde_json::Error) -> SedError {
    SedError::Format(e.to_string())
}

/// Held-out ground truth for weak and unlabeled clips, kept outside
/// the training manifest.
pub type GroundTruth = HashMap<String, Vec<LabeledEvent>>;

#[derive(Serialize, Deserialize)]
struct TruthLine {
    id: String,
    events: Vec<LabeledEvent>,
}

pub fn save_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let mut ids: Vec<&String> = truth.keys().collect();
    ids.sort();
    for id in ids {
        let line = TruthLine {
            id: id.clone(),
            events: truth[id].clone(),
        };
        writeln!(file, "{}", serde_json::to_string(&line).map_err(fmt_err)?)?;
    }
    Ok(())
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let file = std::fs::File::open(path)?;
    let mut truth = GroundTruth::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TruthLine = serde_json::from_str(&line).map_err(fmt_err)?;
        truth.insert(parsed.id, parsed.events);
    }
    Ok(truth)
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub k_classes: usize,
    pub n_strong: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub duration_s: f64,
    pub snr_db: f64,
    pub feature_config: FeatureConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            k_classes: 5,
            n_strong: 20,
            n_weak: 20,
            n_unlabeled: 60,
            duration_s: 10.0,
            snr_db: 6.0,
            feature_config: FeatureConfig::default(),
        }
    }
}

fn clip_seed(dataset_seed: u64, clip_id: &str) -> u64 {
    // FNV-1a over the id, folded with the dataset seed
    let mut h: u64 = 0xcbf29ce484222325 ^ dataset_seed;
    for b in clip_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Carrier frequency of a class's band, spaced geometrically.
pub fn class_carrier_hz(class: usize) -> f64 {
    400.0 * 1.55f64.powi(class as i32)
}

fn pink_noise(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    // Paul Kellet's three-pole pinking filter over uniform white noise
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let white: f64 = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            (b0 + b1 + b2 + white * 0.1848) * sigma
        })
        .collect()
}

fn synth_event(wave: &mut [f64], event: &LabeledEvent, sample_rate: f64, amplitude: f64) {
    let start = (event.onset_s * sample_rate) as usize;
    let end = ((event.offset_s * sample_rate) as usize).min(wave.len());
    if start >= end {
        return;
    }
    let carrier = class_carrier_hz(event.class_index);
    let len = (end - start) as f64;
    let family = event.class_index % 3;
    for (i, sample) in wave[start..end].iter_mut().enumerate() {
        let t = i as f64 / sample_rate;
        let pos = i as f64 / len;
        // short fade at both edges
        let fade = (pos * 20.0).min((1.0 - pos) * 20.0).min(1.0).max(0.0);
        let envelope = match family {
            0 => 1.0,                                                       // sustained
            1 => 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 8.0 * t).sin(),  // 8 Hz tremolo
            _ => (-3.0 * pos).exp(),                                        // decaying burst
        };
        let tone = (2.0 * std::f64::consts::PI * carrier * t).sin()
            + 0.3 * (2.0 * std::f64::consts::PI * 2.0 * carrier * t).sin();
        *sample += amplitude * fade * envelope * tone;
    }
}

const BACKGROUND_SIGMA: f64 = 0.02;

/// Render one clip's waveform from its record, deterministically.
pub fn render_clip(record: &ClipRecord, events: &[LabeledEvent], cfg: &DatasetConfig) -> Vec<f64> {
    let sr = cfg.feature_config.sample_rate as f64;
    let n = (record.duration * sr) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(record.seed);
    let mut wave = pink_noise(&mut rng, n, BACKGROUND_SIGMA);
    let amplitude = BACKGROUND_SIGMA * 10f64.powf(cfg.snr_db / 20.0);
    for e in events {
        synth_event(&mut wave, e, sr, amplitude);
    }
    wave
}

fn draw_events(rng: &mut ChaCha8Rng, k: usize, duration: f64) -> Vec<LabeledEvent> {
    let n_events = rng.gen_range(1..=3usize);
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let class_index = rng.gen_range(0..k);
        let min_len = 0.4;
        let max_len = (duration * 0.4).max(min_len + 0.1);
        let len = rng.gen_range(min_len..max_len);
        let onset = rng.gen_range(0.0..(duration - len));
        events.push(LabeledEvent {
            class_index,
            onset_s: onset,
            offset_s: onset + len,
        });
    }
    events
}

/// Generate waveform files, the manifest, and the held-out ground
/// truth sidecar under `out_dir`. Returns the manifest and full truth
/// (including strong clips) for in-process use.
pub fn generate_dataset(
    out_dir: &Path,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<(Manifest, GroundTruth)> {
    if cfg.k_classes < 2 {
        return Err(SedError::Config("k_classes must be >= 2".into()));
    }
    cfg.feature_config.validate()?;
    std::fs::create_dir_all(out_dir.join("waves"))?;

    let mut records = Vec::new();
    let mut truth = GroundTruth::new();
    let splits = [
        (Split::Strong, cfg.n_strong, "strong"),
        (Split::Weak, cfg.n_weak, "weak"),
        (Split::Unlabeled, cfg.n_unlabeled, "unlabeled"),
    ];
    for (split, count, tag) in splits {
        for i in 0..count {
            let id = format!("{tag}_{i:04}");
            let cseed = clip_seed(seed, &id);
            let mut rng = ChaCha8Rng::seed_from_u64(cseed.wrapping_add(1));
            let events = draw_events(&mut rng, cfg.k_classes, cfg.duration_s);
            let weak: Vec<usize> = events
                .iter()
                .map(|e| e.class_index)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let wave_rel = format!("waves/{id}.f32");
            let record = ClipRecord {
                id: id.clone(),
                split,
                duration: cfg.duration_s,
                events: if split == Split::Strong { events.clone() } else { vec![] },
                weak_labels: if split == Split::Unlabeled { vec![] } else { weak },
                wave_path: wave_rel.clone(),
                seed: cseed,
            };
            let wave = render_clip(&record, &events, cfg);
            write_wave_f32le(&out_dir.join(&wave_rel), &wave)?;
            truth.insert(id, events);
            records.push(record);
        }
    }

    let manifest = Manifest {
        class_names: (0..cfg.k_classes).map(|c| format!("class_{c}")).collect(),
        feature_config: cfg.feature_config.clone(),
        records,
    };
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    save_ground_truth(&truth, &out_dir.join("ground_truth.jsonl"))?;
    Ok((manifest, truth))
}

pub const EMBEDDING_DIM: usize = 768;
/// Mock embeddings run at half the log-mel frame rate, which forces
/// the adaptive temporal pooling in the feature distillation loss to
/// do real work.
pub const EMBEDDING_CONTEXT: usize = 2;

/// Frozen deterministic stand-in for a large pre-trained embedding
/// model: a fixed random linear projection of stacked log-mel context
/// windows followed by tanh. Identical inputs give identical outputs
/// for a given seed, forever.
pub struct MockEmbeddingProvider {
    n_mels: usize,
    dim: usize,
    proj: Vec<f64>,
}

impl MockEmbeddingProvider {
    pub fn new(n_mels: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let d_in = n_mels * EMBEDDING_CONTEXT;
        let scale = (3.0 / d_in as f64).sqrt();
        let proj = (0..d_in * dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        MockEmbeddingProvider { n_mels, dim, proj }
    }

    /// `logmel: [T, F]` -> `[T_e, dim]` with `T_e = T / 2`. No gradient.
    pub fn embed(&self, logmel: &Tensor) -> Result<Tensor> {
        let shape = logmel.shape();
        if shape.len() != 2 || shape[1] != self.n_mels {
            return Err(SedError::Dimension(format!(
                "embed expects [T, {}], got {shape:?}",
                self.n_mels
            )));
        }
        let t = shape[0];
        let t_e = (t / EMBEDDING_CONTEXT).max(1);
        let x = logmel.data();
        let f = self.n_mels;
        let d_in = f * EMBEDDING_CONTEXT;
        let mut out = vec![0.0; t_e * self.dim];
        for j in 0..t_e {
            // stacked context window: frames [2j, 2j+1], clamped to T
            let mut ctx = Vec::with_capacity(d_in);
            for w in 0..EMBEDDING_CONTEXT {
                let fi = (j * EMBEDDING_CONTEXT + w).min(t - 1);
                ctx.extend_from_slice(&x[fi * f..(fi + 1) * f]);
            }
            for d in 0..self.dim {
                let mut acc = 0.0;
                for (i, &v) in ctx.iter().enumerate() {
                    acc += v * self.proj[i * self.dim + d];
                }
                out[j * self.dim + d] = acc.tanh();
            }
        }
        Tensor::from_vec(out, &[t_e, self.dim])
    }
}

/// Per-clip binary embedding cache: header (T_e: u64, width: u64),
/// then row-major 32-bit little-endian values.
pub fn write_embedding_cache(path: &Path, emb: &Tensor) -> Result<()> {
    let shape = emb.shape();
    let mut bytes = Vec::with_capacity(16 + emb.numel() * 4);
    bytes.extend_from_slice(&(shape[0] as u64).to_le_bytes());
    bytes.extend_from_slice(&(shape[1] as u64).to_le_bytes());
    for v in emb.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_embedding_cache(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(SedError::Format(format!("{}: truncated header", path.display())));
    }
    let t_e = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let width = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + t_e * width * 4 {
        return Err(SedError::Format(format!(
            "{}: expected {} value bytes, found {}",
            path.display(),
            t_e * width * 4,
            bytes.len() - 16
        )));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(data, &[t_e, width])
}

/// Everything the training loop needs per clip, precomputed once.
pub struct DatasetCache {
    pub manifest: Manifest,
    pub truth: GroundTruth,
    /// log-mel `[T, F]` per clip id
    pub features: HashMap<String, Tensor>,
    /// mock embeddings `[T_e, dim]` per clip id
    pub embeddings: HashMap<String, Tensor>,
    pub n_frames: usize,
}

impl DatasetCache {
    pub fn load(dir: &Path, embedding_seed: u64, embedding_dim: usize) -> Result<DatasetCache> {
        let manifest = Manifest::load(&dir.join("manifest.jsonl"))?;
        let truth_path = dir.join("ground_truth.jsonl");
        let truth = if truth_path.exists() {
            load_ground_truth(&truth_path)?
        } else {
            GroundTruth::new()
        };
        let provider =
            MockEmbeddingProvider::new(manifest.feature_config.n_mels, embedding_dim, embedding_seed);
        let mut features = HashMap::new();
        let mut embeddings = HashMap::new();
        let mut n_frames = 0;
        for r in &manifest.records {
            let wave = read_wave_f32le(&dir.join(&r.wave_path))?;
            let logmel = extract_log_mel(&wave, &manifest.feature_config)?;
            n_frames = logmel.shape()[0];
            embeddings.insert(r.id.clone(), provider.embed(&logmel)?);
            features.insert(r.id.clone(), logmel);
        }
        Ok(DatasetCache {
            manifest,
            truth,
            features,
            embeddings,
            n_frames,
        })
    }

    /// Frame/clip label tensors for one clip, on the feature frame grid.
    pub fn labels_for(&self, record: &ClipRecord, k: usize) -> (Vec<f64>, Vec<f64>) {
        let cfg = &self.manifest.feature_config;
        let t = self.n_frames;
        let mut frame = vec![0.0; t * k];
        for e in &record.events {
            for fi in 0..t {
                let time = cfg.frame_time(fi);
                if time >= e.onset_s && time < e.offset_s {
                    frame[fi * k + e.class_index] = 1.0;
                }
            }
        }
        let mut clip = vec![0.0; k];
        for &c in &record.weak_labels {
            clip[c] = 1.0;
        }
        // strong clips carry collapsed weak labels from their events
        for e in &record.events {
            clip[e.class_index] = 1.0;
        }
        (frame, clip)
    }
}

/// Batch counts per split; strong rows come first, then weak, then
/// unlabeled, so loss terms can slice instead of masking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchComposition {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
}

impl BatchComposition {
    pub fn total(&self) -> usize {
        self.strong + self.weak + self.unlabeled
    }
}

pub struct Batch {
    /// `[B, 1, T, F]`
    pub features: Tensor,
    /// `[strong, T, K]`
    pub frame_labels: Tensor,
    /// `[strong + weak, K]`
    pub clip_labels: Tensor,
    /// `[B, T_e, dim]`
    pub embeddings: Tensor,
    pub composition: BatchComposition,
    pub clip_ids: Vec<String>,
}

pub fn compose_batch(
    cache: &DatasetCache,
    composition: BatchComposition,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let k = cache.manifest.class_names.len();
    let mut chosen: Vec<&ClipRecord> = Vec::with_capacity(composition.total());
    for (split, want) in [
        (Split::Strong, composition.strong),
        (Split::Weak, composition.weak),
        (Split::Unlabeled, composition.unlabeled),
    ] {
        let pool = cache.manifest.split_ids(split);
        if pool.len() < want {
            return Err(SedError::Config(format!(
                "batch needs {want} {split:?} clips, dataset has {}",
                pool.len()
            )));
        }
        // sample without replacement
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for i in 0..want {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        chosen.extend(indices[..want].iter().map(|&i| pool[i]));
    }

    let t = cache.n_frames;
    let f = cache.manifest.feature_config.n_mels;
    let mut feats = Vec::with_capacity(composition.total() * t * f);
    let mut frame_labels = Vec::with_capacity(composition.strong * t * k);
    let mut clip_labels = Vec::with_capacity((composition.strong + composition.weak) * k);
    let mut emb_data = Vec::new();
    let mut t_e = 0;
    let mut ids = Vec::new();
    for (i, record) in chosen.iter().enumerate() {
        ids.push(record.id.clone());
        feats.extend_from_slice(&cache.features[&record.id].data());
        let emb = &cache.embeddings[&record.id];
        t_e = emb.shape()[0];
        emb_data.extend_from_slice(&emb.data());
        let (frame, clip) = cache.labels_for(record, k);
        if i < composition.strong {
            frame_labels.extend_from_slice(&frame);
        }
        if i < composition.strong + composition.weak {
            clip_labels.extend_from_slice(&clip);
        }
    }
    let dim = if t_e > 0 { emb_data.len() / (composition.total() * t_e) } else { 0 };
    Ok(Batch {
        features: Tensor::from_vec(feats, &[composition.total(), 1, t, f])?,
        frame_labels: Tensor::from_vec(frame_labels, &[composition.strong, t, k])?,
        clip_labels: Tensor::from_vec(
            clip_labels,
            &[composition.strong + composition.weak, k],
        )?,
        embeddings: Tensor::from_vec(emb_data, &[composition.total(), t_e, dim])?,
        composition,
        clip_ids: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg() -> DatasetConfig {
        DatasetConfig {
            k_classes: 3,
            n_strong: 4,
            n_weak: 3,
            n_unlabeled: 5,
            duration_s: 1.0,
            snr_db: 6.0,
            feature_config: FeatureConfig {
                window_size: 512,
                hop_size: 128,
                n_mels: 32,
                ..FeatureConfig::default()
            },
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_waveforms() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = desk_cfg();
        generate_dataset(d1.path(), &cfg, 99).unwrap();
        generate_dataset(d2.path(), &cfg, 99).unwrap();
        let a = std::fs::read(d1.path().join("waves/strong_0000.f32")).unwrap();
        let b = std::fs::read(d2.path().join("waves/strong_0000.f32")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn split_counts_are_as_requested() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = desk_cfg();
        cfg.n_strong = 4;
        cfg.n_weak = 3;
        cfg.n_unlabeled = 5;
        let (manifest, _) = generate_dataset(dir.path(), &cfg, 1).unwrap();
        assert_eq!(manifest.records.len(), 12);
        assert_eq!(manifest.split_ids(Split::Strong).len(), 4);
        assert_eq!(manifest.split_ids(Split::Weak).len(), 3);
        assert_eq!(manifest.split_ids(Split::Unlabeled).len(), 5);
        // label hygiene per split
        for r in manifest.split_ids(Split::Weak) {
            assert!(r.events.is_empty() && !r.weak_labels.is_empty());
        }
        for r in manifest.split_ids(Split::Unlabeled) {
            assert!(r.events.is_empty() && r.weak_labels.is_empty());
        }
    }

    #[test]
    fn event_band_energy_exceeds_background() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = desk_cfg();
        let (manifest, truth) = generate_dataset(dir.path(), &cfg, 5).unwrap();
        let sr = cfg.feature_config.sample_rate as f64;
        let mut checked = 0;
        for r in manifest.split_ids(Split::Strong) {
            let wave = read_wave_f32le(&dir.path().join(&r.wave_path)).unwrap();
            for e in &truth[&r.id] {
                let carrier = class_carrier_hz(e.class_index);
                // Goertzel-style band energy around the carrier
                let band_energy = |lo: usize, hi: usize| -> f64 {
                    let seg = &wave[lo..hi];
                    let n = seg.len() as f64;
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, &s) in seg.iter().enumerate() {
                        let ang = 2.0 * std::f64::consts::PI * carrier * i as f64 / sr;
                        re += s * ang.cos();
                        im -= s * ang.sin();
                    }
                    (re * re + im * im) / n
                };
                let on_lo = (e.onset_s * sr) as usize;
                let on_hi = (e.offset_s * sr) as usize;
                let span = on_hi - on_lo;
                // background window of equal length elsewhere in the clip
                let (bg_lo, bg_hi) = if on_lo >= span {
                    (0, span)
                } else if on_hi + span <= wave.len() {
                    (wave.len() - span, wave.len())
                } else {
                    continue;
                };
                let on = band_energy(on_lo, on_hi);
                let off = band_energy(bg_lo, bg_hi);
                assert!(
                    on > off,
                    "class {} event band energy {on} not above background {off}",
                    e.class_index
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn manifest_roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, _) = generate_dataset(dir.path(), &desk_cfg(), 2).unwrap();
        let loaded = Manifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.records.len(), manifest.records.len());
        assert_eq!(loaded.class_names, manifest.class_names);
        for (a, b) in loaded.records.iter().zip(&manifest.records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.split, b.split);
            assert_eq!(a.events, b.events);
            assert_eq!(a.weak_labels, b.weak_labels);
        }
    }

    #[test]
    fn mock_embeddings_are_frozen_and_768_wide() {
        let provider = MockEmbeddingProvider::new(32, EMBEDDING_DIM, 7);
        let x = Tensor::from_vec((0..9 * 32).map(|i| (i as f64 * 0.13).sin()).collect(), &[9, 32])
            .unwrap();
        let a = provider.embed(&x).unwrap();
        let b = provider.embed(&x).unwrap();
        assert_eq!(a.shape(), vec![4, EMBEDDING_DIM]);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn embeddings_differ_across_classes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = desk_cfg();
        generate_dataset(dir.path(), &cfg, 3).unwrap();
        let cache = DatasetCache::load(dir.path(), 3, EMBEDDING_DIM).unwrap();
        // mean embedding vectors of two different strong clips differ
        let ids: Vec<&String> = cache.embeddings.keys().collect();
        let a = cache.embeddings[ids[0]].data();
        let b = cache.embeddings[ids[1]].data();
        let la = a.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&a[..la / 2]) - mean(&b[..la / 2])).abs() > 0.0);
    }

    #[test]
    fn embedding_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let data: Vec<f64> = (0..3 * 4).map(|i| (i as f32 as f64) * 0.25 - 1.0).collect();
        let emb = Tensor::from_vec(data.clone(), &[3, 4]).unwrap();
        write_embedding_cache(&path, &emb).unwrap();
        let back = read_embedding_cache(&path).unwrap();
        assert_eq!(back.shape(), vec![3, 4]);
        assert_eq!(back.data(), data);
    }

    #[test]
    fn batch_composition_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = desk_cfg();
        cfg.n_strong = 2;
        cfg.n_weak = 2;
        cfg.n_unlabeled = 4;
        generate_dataset(dir.path(), &cfg, 4).unwrap();
        let cache = DatasetCache::load(dir.path(), 4, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let comp = BatchComposition { strong: 2, weak: 2, unlabeled: 4 };
        let batch = compose_batch(&cache, comp, &mut rng).unwrap();
        assert_eq!(batch.features.shape()[0], 8);
        assert_eq!(batch.frame_labels.shape()[0], 2);
        assert_eq!(batch.clip_labels.shape()[0], 4);
        assert_eq!(batch.embeddings.shape(), vec![8, cache.n_frames / 2, 16]);
        // unlabeled clips occupy the tail and contribute no label rows
        assert_eq!(batch.clip_ids.len(), 8);
        assert!(batch.clip_ids[4..].iter().all(|id| id.starts_with("unlabeled")));
    }

    #[test]
    fn frame_labels_match_annotated_intervals() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = desk_cfg();
        let (manifest, _) = generate_dataset(dir.path(), &cfg, 8).unwrap();
        let cache = DatasetCache::load(dir.path(), 8, 16).unwrap();
        let k = manifest.class_names.len();
        let record = &cache.manifest.split_ids(Split::Strong)[0].clone();
        let (frame, clip) = cache.labels_for(record, k);
        let fcfg = &cache.manifest.feature_config;
        for e in &record.events {
            for fi in 0..cache.n_frames {
                let time = fcfg.frame_time(fi);
                let expect = if time >= e.onset_s && time < e.offset_s { 1.0 } else { 0.0 };
                if expect == 1.0 {
                    assert_eq!(frame[fi * k + e.class_index], 1.0);
                }
            }
            assert_eq!(clip[e.class_index], 1.0);
        }

        // frame grid re-contains the original interval within one hop
        let hop_s = fcfg.hop_size as f64 / fcfg.sample_rate as f64;
        for e in &record.events {
            let on_frame = (0..cache.n_frames)
                .find(|&fi| frame[fi * k + e.class_index] == 1.0)
                .unwrap();
            let off_frame = (0..cache.n_frames)
                .rev()
                .find(|&fi| frame[fi * k + e.class_index] == 1.0)
                .unwrap();
            let on_s = fcfg.frame_time(on_frame);
            let off_s = fcfg.frame_time(off_frame + 1);
            assert!(on_s >= e.onset_s - hop_s && on_s <= e.onset_s + hop_s);
            assert!(off_s >= e.offset_s - hop_s && off_s <= e.offset_s + hop_s);
        }
    }
}
