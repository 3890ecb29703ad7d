//! Log-mel feature extraction from a synthetic waveform.

use sed_distill::audio::{extract_log_mel, FeatureConfig};

fn main() -> sed_distill::Result<()> {
    let cfg = FeatureConfig {
        sample_rate: 16000,
        window_size: 1024,
        hop_size: 256,
        n_mels: 64,
        ..FeatureConfig::default()
    };

    // one second of a 1 kHz tone with a quiet tail
    let wave: Vec<f64> = (0..16000)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let gain = if t < 0.5 { 0.5 } else { 0.01 };
            gain * (2.0 * std::f64::consts::PI * 1000.0 * t).sin()
        })
        .collect();

    let logmel = extract_log_mel(&wave, &cfg)?;
    let shape = logmel.shape();
    println!("log-mel shape: {shape:?} (frames x mel bands)");

    let data = logmel.data();
    let n_mels = shape[1];
    // energy concentrates around the mel band containing 1 kHz
    let loud_frame = &data[10 * n_mels..11 * n_mels];
    let peak = loud_frame
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    println!("frame 10 peaks at mel band {} ({:.2})", peak.0, peak.1);

    let quiet_frame = &data[55 * n_mels..56 * n_mels];
    println!(
        "band {} level: loud {:.2}, quiet {:.2}",
        peak.0, loud_frame[peak.0], quiet_frame[peak.0]
    );
    Ok(())
}
