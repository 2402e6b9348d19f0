use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `t` is 1-based.
///
/// Fails without touching anything when `grad` holds a non-finite value.
pub fn adam_step(
    name: &str,
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    let shape = param.shape();
    if grad.shape() != shape || m.shape() != shape || v.shape() != shape {
        return Err(Error::dim("adam_step", param.shape_str(), grad.shape_str()));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric(format!("gradient of parameter {name}")));
    }
    apply(param, grad, m, v, t, cfg);
    Ok(())
}

fn apply(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    t: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let iter = param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
    for ((p, &g), (mi, vi)) in iter {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam state for an ordered list of named tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Matrix, Matrix)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every parameter. `params` and `grads` must list tensors in the
    /// same order on every call. All gradients are validated before any
    /// parameter moves.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut Matrix)>,
        grads: Vec<(String, &Matrix)>,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("Adam::step", params.len(), grads.len()));
        }
        for ((pn, p), (gn, g)) in params.iter().zip(&grads) {
            if pn != gn || p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "parameter {pn} paired with gradient {gn}"
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of parameter {pn}")));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| {
                    (
                        Matrix::zeros(p.rows(), p.cols()),
                        Matrix::zeros(p.rows(), p.cols()),
                    )
                })
                .collect();
        } else if self.moments.len() != params.len() {
            return Err(Error::Contract(
                "parameter list changed between Adam steps".into(),
            ));
        }
        self.step += 1;
        for (((_, p), (_, g)), (m, v)) in params.into_iter().zip(grads).zip(self.moments.iter_mut())
        {
            apply(p, g, m, v, self.step, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = Matrix::row_vector(&[1.5, -2.0]);
        let mut m = Matrix::row_vector(&[0.2, 0.4]);
        let mut v = Matrix::row_vector(&[0.1, 0.3]);
        adam_step("p", &mut p, &Matrix::zeros(1, 2), &mut m, &mut v, 3, &cfg).unwrap();
        // m_hat != 0 so params do move; the zero-moment case is the pure no-op
        let mut p0 = Matrix::row_vector(&[1.5, -2.0]);
        let (mut m0, mut v0) = (Matrix::zeros(1, 2), Matrix::zeros(1, 2));
        adam_step(
            "p",
            &mut p0,
            &Matrix::zeros(1, 2),
            &mut m0,
            &mut v0,
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(p0.as_slice(), &[1.5, -2.0]);
        assert!((m[(0, 0)] - 0.18).abs() < 1e-15);
        assert!((v[(0, 1)] - 0.3 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn single_step_hand_oracle() {
        // t=1, g=1: m=0.1, v=0.001, m_hat=1, v_hat=1 → Δ = −lr / (1 + eps)
        let cfg = AdamConfig::default();
        let mut p = Matrix::row_vector(&[0.0]);
        let (mut m, mut v) = (Matrix::zeros(1, 1), Matrix::zeros(1, 1));
        adam_step(
            "w",
            &mut p,
            &Matrix::row_vector(&[1.0]),
            &mut m,
            &mut v,
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(m[(0, 0)], 1.0 - 0.9);
        assert_eq!(v[(0, 0)], 1.0 - 0.999);
        assert!((p[(0, 0)] + 2e-4 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn identical_params_share_trajectories() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut a = Matrix::row_vector(&[0.3]);
        let mut b = Matrix::row_vector(&[0.3]);
        for k in 0..10 {
            let g = Matrix::row_vector(&[(k as f64 * 0.7).sin()]);
            adam.step(
                vec![("a".into(), &mut a), ("b".into(), &mut b)],
                vec![("a".into(), &g), ("b".into(), &g)],
            )
            .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_grad_aborts_and_names_param() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut a = Matrix::row_vector(&[1.0]);
        let mut b = Matrix::row_vector(&[2.0]);
        let ga = Matrix::row_vector(&[0.5]);
        let gb = Matrix::row_vector(&[f64::INFINITY]);
        let err = adam
            .step(
                vec![("a".into(), &mut a), ("head.bias".into(), &mut b)],
                vec![("a".into(), &ga), ("head.bias".into(), &gb)],
            )
            .unwrap_err();
        assert!(err.to_string().contains("head.bias"));
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }
}
