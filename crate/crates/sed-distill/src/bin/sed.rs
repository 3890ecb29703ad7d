use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use sed_distill::audio::FeatureConfig;
use sed_distill::checkpoint::{inspect_checkpoint, load_checkpoint};
use sed_distill::error::SedError;
use sed_distill::eval::{self, ClipEval, MetricsReport};
use sed_distill::models::SECRNNConfig;
use sed_distill::suite::{model_gradcheck, op_gradcheck_suite, MODEL_TOLERANCE, OP_TOLERANCE};
use sed_distill::synth::{generate_dataset, BatchComposition, DatasetCache, DatasetConfig};
use sed_distill::tensor::Tensor;
use sed_distill::train::{train_loop, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(name = "sed", version, about = "Sound event detection with dual knowledge distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        strong: usize,
        #[arg(long, default_value_t = 20)]
        weak: usize,
        #[arg(long, default_value_t = 160)]
        unlabeled: usize,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 6.0)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        n_mels: usize,
        #[arg(long, default_value_t = 2048)]
        window: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
    },
    /// Supervised run on the strong split, producing a teacher checkpoint
    PretrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "se-crnn-16")]
        model: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 768)]
        embedding_dim: usize,
        /// Extra overrides as key=value (repeatable)
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Train a student in any mode
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// key=value config file; flags override file values
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "se-crnn-8")]
        model: String,
        #[arg(long, default_value_t = 768)]
        embedding_dim: usize,
        /// Extra overrides as key=value (repeatable)
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint against a dataset's ground truth
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the JSON report here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference verification of every differentiable op
    Gradcheck,
    /// Dump a checkpoint's config and tensor names/shapes
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn preset(name: &str) -> Result<SECRNNConfig, SedError> {
    match name {
        "se-crnn-8" => Ok(SECRNNConfig::se_crnn_8()),
        "se-crnn-16" => Ok(SECRNNConfig::se_crnn_16()),
        "tiny" => Ok(SECRNNConfig::tiny(128, 10)),
        other => Err(SedError::Usage(format!(
            "unknown model {other}; expected se-crnn-8, se-crnn-16, or tiny"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), SedError> {
    match cli.cmd {
        Command::SynthData {
            out, classes, strong, weak, unlabeled, duration, snr, seed, n_mels, window, hop,
        } => {
            let cfg = DatasetConfig {
                k_classes: classes,
                n_strong: strong,
                n_weak: weak,
                n_unlabeled: unlabeled,
                duration_s: duration,
                snr_db: snr,
                feature_config: FeatureConfig {
                    n_mels,
                    window_size: window,
                    hop_size: hop,
                    ..FeatureConfig::default()
                },
            };
            let (manifest, _) = generate_dataset(&out, &cfg, seed)?;
            println!(
                "wrote {} clips ({} strong / {} weak / {} unlabeled) to {}",
                manifest.records.len(), strong, weak, unlabeled, out.display()
            );
            Ok(())
        }
        Command::PretrainTeacher {
            data, out, model, epochs, batch_size, seed, embedding_dim, set,
        } => {
            let mut model_cfg = preset(&model)?;
            let cache0 = DatasetCache::load(&data, seed, embedding_dim)?;
            model_cfg.n_mels = cache0.manifest.feature_config.n_mels;
            model_cfg.n_classes = cache0.manifest.class_names.len();
            model_cfg.embedding_dim = embedding_dim;
            let mut cfg = TrainConfig {
                mode: TrainMode::SupervisedOnly,
                epochs,
                ramp_epochs: 0,
                batch_size,
                batch_composition: BatchComposition { strong: batch_size, weak: 0, unlabeled: 0 },
                seed,
                ..TrainConfig::default()
            };
            apply_sets(&mut cfg, &set)?;
            let arts = train_loop(model_cfg, &cfg, &cache0, None, &out)?;
            println!(
                "teacher pretraining done: best val segment-F1 {:.4}, checkpoint {}",
                arts.best_val_segment_f1,
                arts.best_checkpoint.display()
            );
            Ok(())
        }
        Command::Train {
            data, out, mode, teacher, config, seed, model, embedding_dim, set,
        } => {
            let mut cfg = TrainConfig::default();
            if let Some(path) = &config {
                cfg = TrainConfig::from_kv(&std::fs::read_to_string(path)?)?;
            }
            if let Some(m) = &mode {
                cfg.mode = TrainMode::from_str(m)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            apply_sets(&mut cfg, &set)?;
            if cfg.mode.needs_teacher() && teacher.is_none() {
                return Err(SedError::Usage(format!(
                    "mode {} requires --teacher",
                    cfg.mode.as_str()
                )));
            }
            // architecture follows the teacher when one is given
            let model_cfg = match &teacher {
                Some(path) => load_checkpoint(path)?.cfg,
                None => {
                    let mut c = preset(&model)?;
                    c.embedding_dim = embedding_dim;
                    c
                }
            };
            let cache = DatasetCache::load(&data, cfg.seed, model_cfg.embedding_dim)?;
            let mut model_cfg = model_cfg;
            model_cfg.n_mels = cache.manifest.feature_config.n_mels;
            model_cfg.n_classes = cache.manifest.class_names.len();
            let arts = train_loop(model_cfg, &cfg, &cache, teacher.as_deref(), &out)?;
            println!(
                "training done: best val segment-F1 {:.4}, metrics {}",
                arts.best_val_segment_f1,
                arts.metrics_path.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, data, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let cache = DatasetCache::load(&data, 0, model.cfg.embedding_dim)?;
            let k = cache.manifest.class_names.len();
            let fcfg = &cache.manifest.feature_config;
            let frame_dur = fcfg.hop_size as f64 / fcfg.sample_rate as f64;
            let duration = cache.n_frames as f64 * frame_dur;
            let mut ids: Vec<&String> = cache.truth.keys().collect();
            ids.sort();
            let mut probs = Vec::new();
            let mut truths = Vec::new();
            let mut durations = Vec::new();
            let mut preds = Vec::new();
            for id in &ids {
                let logmel = &cache.features[*id];
                let shape = logmel.shape();
                let x = Tensor::from_vec(logmel.data(), &[1, 1, shape[0], shape[1]])?;
                let frame = model.forward_eval(&x)?.frame_probs.reshape(&[shape[0], k])?;
                preds.push(eval::decode(
                    &frame,
                    eval::DEFAULT_THRESHOLD,
                    eval::DEFAULT_MEDIAN_LEN,
                    frame_dur,
                )?);
                probs.push(frame);
                truths.push(cache.truth[*id].clone());
                durations.push(duration);
            }
            let clips: Vec<ClipEval> = preds
                .iter()
                .zip(&truths)
                .map(|(pred, truth)| ClipEval { pred, truth, duration_s: duration })
                .collect();
            let report = MetricsReport {
                segment_f1: eval::segment_f1(&clips, k, eval::DEFAULT_SEGMENT_S),
                event_f1: eval::event_f1(&clips, k, eval::DEFAULT_COLLAR_S),
                psds_lite: eval::psds_lite(
                    &probs,
                    &truths,
                    &durations,
                    k,
                    &[0.1, 0.3, 0.5, 0.7, 0.9],
                    eval::DEFAULT_MEDIAN_LEN,
                    frame_dur,
                )?,
                per_class: eval::per_class_report(
                    &clips,
                    k,
                    eval::DEFAULT_SEGMENT_S,
                    eval::DEFAULT_COLLAR_S,
                ),
            };
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| SedError::Format(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Gradcheck => {
            let mut worst_f = 0.0f64;
            println!("{:<40} {:>14}", "op", "max rel error");
            for (name, err) in op_gradcheck_suite()? {
                println!("{name:<40} {err:>14.3e}");
                worst_f = worst_f.max(err);
            }
            let model_err = model_gradcheck()?;
            println!("{:<40} {:>14.3e}", "full SE-CRNN (micro)", model_err);
            if worst_f >= OP_TOLERANCE || model_err >= MODEL_TOLERANCE {
                return Err(SedError::Format(format!(
                    "gradient check failed: op worst {worst_f:.3e} (limit {OP_TOLERANCE:.0e}), \
                     model {model_err:.3e} (limit {MODEL_TOLERANCE:.0e})"
                )));
            }
            println!("all gradients verified");
            Ok(())
        }
        Command::InspectCheckpoint { checkpoint } => {
            let (cfg, records) = inspect_checkpoint(&checkpoint)?;
            print!("{}", cfg.to_kv());
            let total: usize = records.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
            for (name, dims) in &records {
                println!("{name} {dims:?}");
            }
            println!("total values: {total}");
            Ok(())
        }
    }
}

fn apply_sets(cfg: &mut TrainConfig, sets: &[String]) -> Result<(), SedError> {
    for kv in sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SedError::Usage(format!("--set expects key=value, got {kv}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

fn exit_code_for(err: &SedError) -> u8 {
    match err {
        SedError::Usage(_) | SedError::Config(_) => 1,
        SedError::Divergence { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
