//! A model checkpoint serialized to bytes and restored bit-exactly.

use std::path::Path;

use mamba2mil::data::FeatureBag;
use mamba2mil::model::{
    predict_proba, read_checkpoint, write_checkpoint, ModelConfig, ModelParams,
};
use mamba2mil::numerics::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mamba2mil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig::with_dims(16, 8, 2);
    let params = ModelParams::init(&cfg, &mut rng)?;
    let bytes = write_checkpoint(&cfg, &params)?;
    let (cfg2, params2) = read_checkpoint(&bytes, Path::new("<memory>"))?;
    println!(
        "{} parameters, {} checkpoint bytes",
        cfg.param_count(),
        bytes.len()
    );

    let bag = FeatureBag::new("probe", 0, Matrix::random_uniform(11, 16, 1.0, &mut rng));
    let before = predict_proba(&bag, &params, &cfg)?;
    let after = predict_proba(&bag, &params2, &cfg2)?;
    assert_eq!(before, after);
    println!("predictions identical after reload: {before:?}");
    Ok(())
}
