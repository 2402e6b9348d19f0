//! Dense `f64` kernels with explicit reverse-mode adjoints.

mod activations;
mod adam;
mod conv;
mod linear;
mod matrix;
mod norm;
mod params;

#[cfg(test)]
pub(crate) mod testing;

pub use activations::{
    sigmoid, silu, silu_backward, silu_forward, softmax_backward, softmax_forward, softplus,
    tanh_backward, tanh_forward, Axis,
};
pub use adam::{adam_step, Adam, AdamConfig};
pub use conv::{causal_depthwise_conv1d_backward, causal_depthwise_conv1d_forward, ConvGrad};
pub use linear::{linear_backward, linear_forward, Init, Linear, LinearGrad, LinearTape};
pub use matrix::{dot, Matrix};
pub use norm::{
    layernorm_backward, layernorm_forward, LayerNorm, LayerNormGrad, LayerNormTape, LN_EPS,
};
pub(crate) use params::join;
pub use params::{accumulate, Parameters};

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Numerical gradient of `loss` at `at` using the five-point central stencil
/// with step `h`.
pub fn central_difference(at: &Matrix, h: f64, loss: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.len() {
        let orig = probe.as_slice()[i];
        let mut eval = |delta: f64| {
            probe.as_mut_slice()[i] = orig + delta;
            loss(&probe)
        };
        let fp2 = eval(2.0 * h);
        let fp1 = eval(h);
        let fm1 = eval(-h);
        let fm2 = eval(-2.0 * h);
        probe.as_mut_slice()[i] = orig;
        // differences first: a flat loss yields exactly zero
        grad.as_mut_slice()[i] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
    }
    grad
}
