//! Log-mel spectrogram extraction: Hann-windowed STFT at a fixed hop,
//! HTK-scale triangular mel filterbank over the power spectrum, then
//! `ln(x + floor)`.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SedError};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            window_size: 2048,
            hop_size: 256,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_size == 0 || self.hop_size > self.window_size {
            return Err(SedError::Config(format!(
                "hop_size {} must be in 1..=window_size {}",
                self.hop_size, self.window_size
            )));
        }
        if self.n_mels < 1 {
            return Err(SedError::Config("n_mels must be >= 1".into()));
        }
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return Err(SedError::Config(format!(
                "fmax {} exceeds Nyquist {}",
                self.fmax,
                self.sample_rate as f64 / 2.0
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frame count under center padding: floor(len / hop) + 1.
    pub fn n_frames(&self, wave_len: usize) -> usize {
        wave_len / self.hop_size + 1
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 * self.hop_size as f64 / self.sample_rate as f64
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect-pad by half a window on each side (center padding).
fn center_pad(wave: &[f64], half: usize) -> Vec<f64> {
    let n = wave.len();
    let mut out = Vec::with_capacity(n + 2 * half);
    for i in 0..half {
        out.push(wave[(half - i).min(n - 1)]);
    }
    out.extend_from_slice(wave);
    for i in 0..half {
        let idx = n.saturating_sub(2 + i.min(n.saturating_sub(1)));
        out.push(wave[idx.min(n - 1)]);
    }
    out
}

/// Magnitude spectrogram, `[frames, window/2 + 1]` row-major.
pub fn stft(wave: &[f64], cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if wave.is_empty() {
        return Err(SedError::Input("empty waveform".into()));
    }
    let window = hann(cfg.window_size);
    let padded = center_pad(wave, cfg.window_size / 2);
    let n_frames = cfg.n_frames(wave.len());
    let n_bins = cfg.n_bins();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.window_size);
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window_size];
    for fi in 0..n_frames {
        let start = fi * cfg.hop_size;
        for (i, b) in buf.iter_mut().enumerate() {
            let s = padded.get(start + i).copied().unwrap_or(0.0);
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..n_bins].iter().map(|c| c.norm()).collect());
    }
    Ok(frames)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank, `[n_mels, n_bins]` row-major. Each filter
/// peaks at 1 at its center bin.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_bins();
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let centers: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.window_size as f64;
    let mut bank = vec![vec![0.0; n_bins]; cfg.n_mels];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for (bi, row) in bank[m].iter_mut().enumerate() {
            let f = bi as f64 * bin_hz;
            if f > lo && f < hi {
                *row = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
            }
        }
    }
    bank
}

/// Apply the mel filterbank to the power spectrogram and take the
/// floored log. Output tensor shape `[frames, n_mels]`.
pub fn log_mel(magnitudes: &[Vec<f64>], cfg: &FeatureConfig) -> Result<Tensor> {
    cfg.validate()?;
    let bank = mel_filterbank(cfg);
    let n_frames = magnitudes.len();
    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    for frame in magnitudes {
        for filter in &bank {
            let mut acc = 0.0;
            for (w, &mag) in filter.iter().zip(frame) {
                acc += w * mag * mag;
            }
            data.push((acc + LOG_FLOOR).ln());
        }
    }
    Tensor::from_vec(data, &[n_frames, cfg.n_mels])
}

/// Waveform file -> `[frames, n_mels]` log-mel tensor.
pub fn extract_log_mel(wave: &[f64], cfg: &FeatureConfig) -> Result<Tensor> {
    let mags = stft(wave, cfg)?;
    log_mel(&mags, cfg)
}

/// Raw 32-bit IEEE-754 little-endian mono sample I/O.
pub fn write_wave_f32le(path: &std::path::Path, wave: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(wave.len() * 4);
    for &s in wave {
        bytes.extend_from_slice(&(s as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_wave_f32le(path: &std::path::Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(SedError::Format(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FeatureConfig {
        FeatureConfig {
            sample_rate: 16_000,
            window_size: 256,
            hop_size: 64,
            n_mels: 16,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }

    #[test]
    fn zero_waveform_gives_zero_magnitudes() {
        let cfg = small_cfg();
        let mags = stft(&vec![0.0; 1024], &cfg).unwrap();
        assert!(mags.iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn empty_waveform_is_input_error() {
        assert!(matches!(stft(&[], &small_cfg()), Err(SedError::Input(_))));
    }

    #[test]
    fn sine_at_bin_center_peaks_at_that_bin() {
        let cfg = small_cfg();
        // bin 8 center frequency = 8 * sr / window
        let bin = 8;
        let freq = bin as f64 * cfg.sample_rate as f64 / cfg.window_size as f64;
        let wave: Vec<f64> = (0..2048)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / cfg.sample_rate as f64).sin())
            .collect();
        let mags = stft(&wave, &cfg).unwrap();
        // check an interior frame against a naive direct DFT
        let frame = &mags[mags.len() / 2];
        let argmax = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);

        // naive DFT oracle on the same windowed samples
        let half = cfg.window_size / 2;
        let padded = center_pad(&wave, half);
        let start = (mags.len() / 2) * cfg.hop_size;
        let window = hann(cfg.window_size);
        let mut naive = vec![0.0; cfg.n_bins()];
        for (k, nv) in naive.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..cfg.window_size {
                let s = padded[start + i] * window[i];
                let ang = -2.0 * std::f64::consts::PI * k as f64 * i as f64
                    / cfg.window_size as f64;
                re += s * ang.cos();
                im += s * ang.sin();
            }
            *nv = (re * re + im * im).sqrt();
        }
        for (a, e) in frame.iter().zip(&naive) {
            assert!((a - e).abs() < 1e-8, "fft {a} vs naive dft {e}");
        }
    }

    #[test]
    fn ten_second_clip_frame_count() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.n_frames(160_000), 626);
        let wave = vec![0.01; 160_000];
        let mags = stft(&wave, &cfg).unwrap();
        assert_eq!(mags.len(), 626);
    }

    #[test]
    fn zero_input_log_mel_is_log_floor() {
        let cfg = small_cfg();
        let mags = vec![vec![0.0; cfg.n_bins()]; 4];
        let lm = log_mel(&mags, &cfg).unwrap();
        for v in lm.data() {
            assert!((v - LOG_FLOOR.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_filters_nonnegative_and_peak_near_center() {
        let cfg = small_cfg();
        let bank = mel_filterbank(&cfg);
        for filter in &bank {
            assert!(filter.iter().all(|&w| w >= 0.0));
            let peak = filter.iter().cloned().fold(0.0, f64::max);
            assert!(peak > 0.0, "filter has no support");
        }
    }

    #[test]
    fn impulse_spectrum_selects_filterbank_column() {
        let cfg = small_cfg();
        let bank = mel_filterbank(&cfg);
        let bin = 20;
        let mut frame = vec![0.0; cfg.n_bins()];
        frame[bin] = 1.0;
        let lm = log_mel(&[frame], &cfg).unwrap().data();
        for (m, v) in lm.iter().enumerate() {
            let expect = (bank[m][bin] + LOG_FLOOR).ln();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn log_mel_monotone_in_waveform_scale() {
        let cfg = small_cfg();
        let wave: Vec<f64> = (0..1024).map(|i| ((i as f64) * 0.05).sin()).collect();
        let scaled: Vec<f64> = wave.iter().map(|&s| 2.5 * s).collect();
        let a = extract_log_mel(&wave, &cfg).unwrap().data();
        let b = extract_log_mel(&scaled, &cfg).unwrap().data();
        for (x, y) in a.iter().zip(&b) {
            assert!(y >= x, "scaling up decreased a log-mel value");
        }
    }

    #[test]
    fn wave_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.f32");
        let wave: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin() as f32 as f64).collect();
        write_wave_f32le(&path, &wave).unwrap();
        assert_eq!(read_wave_f32le(&path).unwrap(), wave);
    }
}
