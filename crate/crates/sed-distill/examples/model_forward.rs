//! Build the SE-CRNN presets, count parameters, and run a forward
//! pass. The embedding-distillation branch only exists while
//! training; the eval path uses the merged features directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sed_distill::models::{SECRNNConfig, SeCrnn};
use sed_distill::tensor::Tensor;

fn main() -> sed_distill::Result<()> {
    for cfg in [SECRNNConfig::se_crnn_8(), SECRNNConfig::se_crnn_16()] {
        let model = SeCrnn::new(cfg, 0)?;
        println!(
            "{}: {} parameters across {} tensors",
            model.cfg.variant_name,
            model.param_count(),
            model.param_names().len()
        );
    }

    // a small variant for a quick forward pass
    let model = SeCrnn::new(SECRNNConfig::tiny(32, 5), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_vec(
        (0..2 * 40 * 32).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        &[2, 1, 40, 32],
    )?;

    let out = model.forward_eval(&x)?;
    println!("\ninput [2, 1, 40, 32]");
    println!("frame probabilities: {:?}", out.frame_probs.shape());
    println!("clip probabilities:  {:?}", out.clip_probs.shape());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = model.forward_train(&x, &mut rng)?;
    println!(
        "train-time transformed features: {:?}",
        out.transformed_feats.as_ref().map(|t| t.shape())
    );

    let data = out.clip_probs.data();
    println!("clip 0 class probabilities: {:?}", &data[..5]);
    Ok(())
}
