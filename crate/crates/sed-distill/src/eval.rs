//! Event decoding and detection metrics.
//!
//! `psds_lite` is a simplified threshold sweep (normalized area under
//! the macro true-positive-rate vs threshold curve). It is NOT the
//! DCASE PSDS metric and its values are not comparable to published
//! PSDS1/PSDS2 numbers; it only serves as a threshold-independent
//! summary at this scale.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SedError};
use crate::synth::LabeledEvent;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MEDIAN_LEN: usize = 7;
pub const DEFAULT_SEGMENT_S: f64 = 1.0;
pub const DEFAULT_COLLAR_S: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub class_index: usize,
    pub onset_s: f64,
    pub offset_s: f64,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class_index: usize,
    pub segment_f1: f64,
    pub event_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub segment_f1: f64,
    pub event_f1: f64,
    pub psds_lite: f64,
    pub per_class: Vec<PerClassMetrics>,
}

fn median_filter_binary(mask: &[bool], len: usize) -> Vec<bool> {
    // zero-padded majority vote over a centered window
    let half = len / 2;
    let n = mask.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let ones = mask[lo..hi].iter().filter(|&&b| b).count();
            ones * 2 > len
        })
        .collect()
}

/// Threshold, median-filter, and merge frame probabilities `[T, K]`
/// into scored events. `frame_dur_s` is the hop duration in seconds.
pub fn decode(
    frame_probs: &Tensor,
    threshold: f64,
    median_len: usize,
    frame_dur_s: f64,
) -> Result<Vec<ScoredEvent>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SedError::Usage(format!("threshold must be in (0,1), got {threshold}")));
    }
    if median_len % 2 == 0 || median_len == 0 {
        return Err(SedError::Usage(format!("median_len must be odd, got {median_len}")));
    }
    let shape = frame_probs.shape();
    if shape.len() != 2 {
        return Err(SedError::Dimension(format!("decode expects [T, K], got {shape:?}")));
    }
    let (t, k) = (shape[0], shape[1]);
    let probs = frame_probs.data();
    let mut events = Vec::new();
    for c in 0..k {
        let mask: Vec<bool> = (0..t).map(|fi| probs[fi * k + c] > threshold).collect();
        let mask = median_filter_binary(&mask, median_len);
        let mut fi = 0;
        while fi < t {
            if mask[fi] {
                let start = fi;
                while fi < t && mask[fi] {
                    fi += 1;
                }
                let score = (start..fi).map(|j| probs[j * k + c]).sum::<f64>()
                    / (fi - start) as f64;
                events.push(ScoredEvent {
                    class_index: c,
                    onset_s: start as f64 * frame_dur_s,
                    offset_s: fi as f64 * frame_dur_s,
                    score,
                });
            } else {
                fi += 1;
            }
        }
    }
    Ok(events)
}

/// One evaluated clip: decoded predictions, reference events, duration.
pub struct ClipEval<'a> {
    pub pred: &'a [ScoredEvent],
    pub truth: &'a [LabeledEvent],
    pub duration_s: f64,
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            // class absent from both reference and predictions
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
    fn seen(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

fn macro_f1(counts: &[Counts]) -> f64 {
    let active: Vec<&Counts> = counts.iter().filter(|c| c.seen()).collect();
    if active.is_empty() {
        return 1.0;
    }
    active.iter().map(|c| c.f1()).sum::<f64>() / active.len() as f64
}

fn segment_counts(clips: &[ClipEval], k: usize, segment_s: f64, counts: &mut [Counts]) {
    for clip in clips {
        let n_seg = (clip.duration_s / segment_s).ceil() as usize;
        for c in 0..k {
            for seg in 0..n_seg {
                let lo = seg as f64 * segment_s;
                let hi = ((seg + 1) as f64 * segment_s).min(clip.duration_s);
                let overlaps = |on: f64, off: f64| on < hi && off > lo;
                let in_truth = clip
                    .truth
                    .iter()
                    .any(|e| e.class_index == c && overlaps(e.onset_s, e.offset_s));
                let in_pred = clip
                    .pred
                    .iter()
                    .any(|e| e.class_index == c && overlaps(e.onset_s, e.offset_s));
                match (in_truth, in_pred) {
                    (true, true) => counts[c].tp += 1,
                    (false, true) => counts[c].fp += 1,
                    (true, false) => counts[c].fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
}

/// Segment-based macro F1 over classes: counts pooled within each
/// class across clips, then F1 averaged over classes that occur.
pub fn segment_f1(clips: &[ClipEval], k: usize, segment_s: f64) -> f64 {
    let mut counts = vec![Counts::default(); k];
    segment_counts(clips, k, segment_s, &mut counts);
    macro_f1(&counts)
}

fn event_counts(clips: &[ClipEval], k: usize, collar_s: f64, counts: &mut [Counts]) {
    for clip in clips {
        for c in 0..k {
            let truths: Vec<&LabeledEvent> =
                clip.truth.iter().filter(|e| e.class_index == c).collect();
            let mut preds: Vec<&ScoredEvent> =
                clip.pred.iter().filter(|e| e.class_index == c).collect();
            preds.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
            let mut matched = vec![false; truths.len()];
            let mut tp = 0;
            for p in &preds {
                let hit = truths.iter().enumerate().position(|(ti, t)| {
                    let off_collar = collar_s.max(0.2 * (t.offset_s - t.onset_s));
                    !matched[ti]
                        && (p.onset_s - t.onset_s).abs() <= collar_s
                        && (p.offset_s - t.offset_s).abs() <= off_collar
                });
                if let Some(ti) = hit {
                    matched[ti] = true;
                    tp += 1;
                }
            }
            counts[c].tp += tp;
            counts[c].fp += preds.len() - tp;
            counts[c].fn_ += truths.len() - tp;
        }
    }
}

/// Onset/offset-collar macro F1 with greedy one-to-one matching. The
/// offset tolerance is max(collar, 20% of the reference duration).
pub fn event_f1(clips: &[ClipEval], k: usize, collar_s: f64) -> f64 {
    let mut counts = vec![Counts::default(); k];
    event_counts(clips, k, collar_s, &mut counts);
    macro_f1(&counts)
}

pub fn per_class_report(clips: &[ClipEval], k: usize, segment_s: f64, collar_s: f64) -> Vec<PerClassMetrics> {
    let mut seg = vec![Counts::default(); k];
    let mut evt = vec![Counts::default(); k];
    segment_counts(clips, k, segment_s, &mut seg);
    event_counts(clips, k, collar_s, &mut evt);
    (0..k)
        .map(|c| PerClassMetrics {
            class_index: c,
            segment_f1: seg[c].f1(),
            event_f1: evt[c].f1(),
        })
        .collect()
}

/// Normalized area under the macro intersection-based TPR vs
/// threshold curve. A reference event counts as detected when
/// predicted events of its class cover at least half its duration.
pub fn psds_lite(
    frame_probs: &[Tensor],
    truths: &[Vec<LabeledEvent>],
    durations: &[f64],
    k: usize,
    thresholds: &[f64],
    median_len: usize,
    frame_dur_s: f64,
) -> Result<f64> {
    if thresholds.len() < 2 {
        return Err(SedError::Usage(format!(
            "psds_lite needs at least 2 thresholds, got {}",
            thresholds.len()
        )));
    }
    let mut grid: Vec<f64> = thresholds.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut tprs = Vec::with_capacity(grid.len());
    for &th in &grid {
        let mut detected = vec![0usize; k];
        let mut total = vec![0usize; k];
        for ((probs, truth), &dur) in frame_probs.iter().zip(truths).zip(durations) {
            debug_assert!(dur > 0.0);
            let pred = decode(probs, th, median_len, frame_dur_s)?;
            for t in truth {
                total[t.class_index] += 1;
                let t_dur = t.offset_s - t.onset_s;
                let covered: f64 = pred
                    .iter()
                    .filter(|p| p.class_index == t.class_index)
                    .map(|p| (p.offset_s.min(t.offset_s) - p.onset_s.max(t.onset_s)).max(0.0))
                    .sum();
                if covered >= 0.5 * t_dur {
                    detected[t.class_index] += 1;
                }
            }
        }
        let rates: Vec<f64> = (0..k)
            .filter(|&c| total[c] > 0)
            .map(|c| detected[c] as f64 / total[c] as f64)
            .collect();
        let tpr = if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        tprs.push(tpr);
    }
    // trapezoid rule, normalized by the threshold span
    let span = grid[grid.len() - 1] - grid[0];
    if span <= 0.0 {
        return Err(SedError::Usage("thresholds must not all be equal".into()));
    }
    let mut area = 0.0;
    for i in 1..grid.len() {
        area += 0.5 * (tprs[i] + tprs[i - 1]) * (grid[i] - grid[i - 1]);
    }
    Ok(area / span)
}
