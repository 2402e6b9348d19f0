//! Finite-difference check of the hand-written backward pass for every
//! parameter tensor of a tiny three-branch model.

use mamba2mil::model::ModelConfig;
use mamba2mil::training::{gradcheck_params, gradient_check};

fn main() -> mamba2mil::Result<()> {
    let cfg = ModelConfig::tiny();
    let params = gradcheck_params(&cfg, 1)?;
    let report = gradient_check(&cfg, &params, 5, 1e-5, 2)?;
    for t in &report.tensors {
        println!(
            "{:<40} {:.2e} {}",
            t.name,
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} tensors, worst {:.2e}, passed: {}",
        report.tensors.len(),
        report.worst(),
        report.passed()
    );
    Ok(())
}
