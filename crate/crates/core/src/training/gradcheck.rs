use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::cross_entropy;
use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::model::{backward, forward, ModelConfig, ModelParams};
use crate::numerics::{central_difference, Matrix, Parameters};

/// Largest parameter count accepted by [`gradient_check`].
pub const GRADCHECK_MAX_PARAMS: usize = 5000;

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn worst(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

/// Error of one gradient tensor against its numerical estimate:
/// `max_i |a_i − n_i| / max(max_i |a_i|, max_i |n_i|, 1e-12)`.
pub fn tensor_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-12);
    analytic.max_abs_diff(numeric) / scale
}

/// Parameters for gradient checking. Weights are uniform ±√(3/fan_in) and
/// biases ±0.5, so activations stay unsaturated and no path is numerically
/// silent; step sizes sit near Δ = ln 2 and decay logits in [0, 1].
pub fn gradcheck_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(cfg, &mut rng)?;
    for (name, m) in params.tensors_mut() {
        let (lo, hi) = if name.ends_with("a_log") {
            (0.0, 1.0)
        } else if name.ends_with("gamma") {
            (0.5, 1.5)
        } else if m.rows() == 1 {
            (-0.5, 0.5)
        } else {
            let bound = (3.0 / m.rows() as f64).sqrt();
            (-bound, bound)
        };
        m.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(lo..=hi));
    }
    Ok(params)
}

/// Compares analytic gradients of the cross-entropy loss with five-point
/// central differences on one random bag (`|x| ≤ 2`), per parameter tensor.
pub fn gradient_check(
    cfg: &ModelConfig,
    params: &ModelParams,
    bag_len: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let count = params.param_count();
    if count >= GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradient check needs fewer than {GRADCHECK_MAX_PARAMS} parameters, model has {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = rng.gen_range(0..cfg.num_classes);
    let bag = FeatureBag::new(
        "gradcheck",
        label,
        Matrix::random_uniform(bag_len, cfg.input_dim, 2.0, &mut rng),
    );
    let loss = |p: &ModelParams| -> f64 {
        let art = forward(&bag, p, cfg).expect("forward during gradient check");
        cross_entropy(&art.logits, label).expect("label in range").0
    };

    let art = forward(&bag, params, cfg)?;
    let (_, d_logits) = cross_entropy(&art.logits, label)?;
    let (grads, _) = backward(art, params, &d_logits)?;
    let analytic = grads.tensors();

    let mut tensors = Vec::new();
    for (idx, (name, at)) in params.tensors().into_iter().enumerate() {
        let numeric = central_difference(at, 1e-5, |v| {
            let mut probe = params.clone();
            *probe.tensors_mut()[idx].1 = v.clone();
            loss(&probe)
        });
        let err = tensor_relative_error(analytic[idx].1, &numeric);
        tensors.push(TensorCheck {
            name,
            max_rel_error: err,
            passed: err < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, tensors })
}
