//! Decoding and metrics without any model: rasterize ground truth
//! into frame probabilities, corrupt them, and score the result.

use sed_distill::eval::{decode, event_f1, psds_lite, segment_f1, ClipEval};
use sed_distill::synth::LabeledEvent;
use sed_distill::tensor::Tensor;

fn main() -> sed_distill::Result<()> {
    let frame_dur = 0.05; // 20 frames per second
    let k = 2;
    let t = 120;
    let truth = vec![
        LabeledEvent { class_index: 0, onset_s: 0.5, offset_s: 2.0 },
        LabeledEvent { class_index: 1, onset_s: 3.0, offset_s: 4.5 },
    ];

    // perfect probabilities, plus a one-frame glitch the median filter eats
    let mut probs = vec![0.0; t * k];
    for e in &truth {
        for fi in 0..t {
            let time = fi as f64 * frame_dur;
            if time >= e.onset_s && time < e.offset_s {
                probs[fi * k + e.class_index] = 0.95;
            }
        }
    }
    probs[100 * k] = 0.99; // spurious spike at 5.0s, class 0

    let probs = Tensor::from_vec(probs, &[t, k])?;
    let pred = decode(&probs, 0.5, 7, frame_dur)?;
    for e in &pred {
        println!(
            "decoded class {} [{:.2}, {:.2}] score {:.2}",
            e.class_index, e.onset_s, e.offset_s, e.score
        );
    }

    let clips = [ClipEval { pred: &pred, truth: &truth, duration_s: 6.0 }];
    println!("segment F1 (1.0s tiles): {:.3}", segment_f1(&clips, k, 1.0));
    println!("event F1 (0.2s collar):  {:.3}", event_f1(&clips, k, 0.2));

    let v = psds_lite(
        &[probs],
        &[truth],
        &[6.0],
        k,
        &[0.1, 0.3, 0.5, 0.7, 0.9],
        7,
        frame_dur,
    )?;
    println!("psds-lite threshold sweep: {v:.3}");
    Ok(())
}
