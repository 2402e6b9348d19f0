use super::Matrix;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

/// Feature-axis layer normalization with affine `gamma`, `beta` (both `1×D`).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

#[derive(Debug)]
pub struct LayerNormTape {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LayerNormGrad {
    pub dx: Matrix,
    pub dgamma: Matrix,
    pub dbeta: Matrix,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Matrix::filled(1, dim, 1.0),
            beta: Matrix::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormTape)> {
        layernorm_forward(x, &self.gamma, &self.beta)
    }

    pub fn backward(&self, tape: LayerNormTape, dy: &Matrix) -> Result<LayerNormGrad> {
        layernorm_backward(tape, &self.gamma, dy)
    }
}

pub fn layernorm_forward(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
) -> Result<(Matrix, LayerNormTape)> {
    let d = x.cols();
    if gamma.shape() != (1, d) || beta.shape() != (1, d) {
        return Err(Error::dim(
            "layernorm_forward",
            x.shape_str(),
            gamma.shape_str(),
        ));
    }
    if d == 0 {
        return Err(Error::Contract(
            "layernorm over an empty feature axis".into(),
        ));
    }
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        let xh = xhat.row_mut(i);
        for (h, v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * inv;
        }
        let xh = xhat.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gamma[(0, j)] * xh[j] + beta[(0, j)];
        }
    }
    Ok((out, LayerNormTape { xhat, inv_std }))
}

pub fn layernorm_backward(
    tape: LayerNormTape,
    gamma: &Matrix,
    dy: &Matrix,
) -> Result<LayerNormGrad> {
    let LayerNormTape { xhat, inv_std } = tape;
    if dy.shape() != xhat.shape() || gamma.shape() != (1, xhat.cols()) {
        return Err(Error::Contract(format!(
            "layernorm tape is {}, backward given dy {} and gamma {}",
            xhat.shape_str(),
            dy.shape_str(),
            gamma.shape_str()
        )));
    }
    let d = xhat.cols() as f64;
    let mut dx = Matrix::zeros(xhat.rows(), xhat.cols());
    let mut dgamma = Matrix::zeros(1, xhat.cols());
    for i in 0..xhat.rows() {
        let (g, xh) = (dy.row(i), xhat.row(i));
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for j in 0..xh.len() {
            let dxh = g[j] * gamma[(0, j)];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            dgamma[(0, j)] += g[j] * xh[j];
        }
        let inv = inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            let dxh = g[j] * gamma[(0, j)];
            *o = inv / d * (d * dxh - sum_dxh - xh[j] * sum_dxh_xh);
        }
    }
    Ok(LayerNormGrad {
        dx,
        dgamma,
        dbeta: dy.col_sums(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{fd_check, rng};

    #[test]
    fn constant_row_normalizes_to_zero() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&Matrix::filled(2, 4, 3.7)).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(30);
        let x = Matrix::random_uniform(3, 5, 2.0, &mut r);
        let ln = LayerNorm {
            gamma: Matrix::random_uniform(1, 5, 2.0, &mut r),
            beta: Matrix::random_uniform(1, 5, 2.0, &mut r),
        };
        let proj = Matrix::random_uniform(3, 5, 1.0, &mut r);
        let loss = |x: &Matrix, g: &Matrix, b: &Matrix| {
            layernorm_forward(x, g, b)
                .unwrap()
                .0
                .hadamard(&proj)
                .unwrap()
                .sum()
        };
        let (_, tape) = ln.forward(&x).unwrap();
        let grad = ln.backward(tape, &proj).unwrap();
        fd_check(&grad.dx, &x, |v| loss(v, &ln.gamma, &ln.beta), 1e-6);
        fd_check(&grad.dgamma, &ln.gamma, |v| loss(&x, v, &ln.beta), 1e-6);
        fd_check(&grad.dbeta, &ln.beta, |v| loss(&x, &ln.gamma, v), 1e-6);
    }
}
