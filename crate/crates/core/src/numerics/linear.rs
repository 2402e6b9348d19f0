use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Cached forward input of a [`Linear`] call.
#[derive(Debug)]
pub struct LinearTape {
    x: Matrix,
    weight_shape: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct LinearGrad {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    /// Uniform in ±√(6/(fan_in+fan_out)), zero bias.
    XavierUniform,
}

impl Linear {
    pub fn zeros(din: usize, dout: usize) -> Self {
        Linear {
            weight: Matrix::zeros(din, dout),
            bias: Matrix::zeros(1, dout),
        }
    }

    pub fn init<R: Rng + ?Sized>(din: usize, dout: usize, init: Init, rng: &mut R) -> Self {
        match init {
            Init::Zeros => Linear::zeros(din, dout),
            Init::XavierUniform => {
                let bound = (6.0 / (din + dout) as f64).sqrt();
                Linear {
                    weight: Matrix::random_uniform(din, dout, bound, rng),
                    bias: Matrix::zeros(1, dout),
                }
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LinearTape)> {
        let out = linear_forward(x, &self.weight, &self.bias)?;
        Ok((
            out,
            LinearTape {
                x: x.clone(),
                weight_shape: self.weight.shape(),
            },
        ))
    }

    pub fn backward(&self, tape: LinearTape, dout: &Matrix) -> Result<LinearGrad> {
        linear_backward(tape, &self.weight, dout)
    }
}

pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::dim("linear_forward", x.shape_str(), w.shape_str()));
    }
    if b.shape() != (1, w.cols()) {
        return Err(Error::dim(
            "linear_forward bias",
            b.shape_str(),
            w.shape_str(),
        ));
    }
    let mut out = x.matmul(w)?;
    let bias = b.as_slice();
    for i in 0..out.rows() {
        for (o, bv) in out.row_mut(i).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Consumes the tape of the matching forward call.
pub fn linear_backward(tape: LinearTape, w: &Matrix, dout: &Matrix) -> Result<LinearGrad> {
    if tape.weight_shape != w.shape() {
        return Err(Error::Contract(format!(
            "linear tape recorded weight {:?}, backward given {}",
            tape.weight_shape,
            w.shape_str()
        )));
    }
    if dout.shape() != (tape.x.rows(), w.cols()) {
        return Err(Error::dim(
            "linear_backward",
            dout.shape_str(),
            format!("{}x{}", tape.x.rows(), w.cols()),
        ));
    }
    Ok(LinearGrad {
        dx: dout.matmul_nt(w)?,
        dw: tape.x.matmul_tn(dout)?,
        db: dout.col_sums(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{fd_check, rng};

    #[test]
    fn identity_input_returns_weights() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let out = linear_forward(&Matrix::identity(2), &w, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn zero_input_gives_bias_rows() {
        let mut r = rng(1);
        let w = Matrix::random_uniform(4, 3, 1.0, &mut r);
        let b = Matrix::row_vector(&[5.0, -1.0, 2.5]);
        let out = linear_forward(&Matrix::zeros(3, 4), &w, &b).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, b.as_slice());
        }
    }

    #[test]
    fn matches_triple_loop() {
        let mut r = rng(2);
        let x = Matrix::random_uniform(3, 4, 1.0, &mut r);
        let w = Matrix::random_uniform(4, 2, 1.0, &mut r);
        let b = Matrix::random_uniform(1, 2, 1.0, &mut r);
        let out = linear_forward(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = b[(0, j)];
                for k in 0..4 {
                    acc += x[(i, k)] * w[(k, j)];
                }
                assert!((out[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let err = linear_forward(
            &Matrix::zeros(2, 3),
            &Matrix::zeros(4, 2),
            &Matrix::zeros(1, 2),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn scalar_chain_rule() {
        let layer = Linear {
            weight: Matrix::row_vector(&[3.0]),
            bias: Matrix::zeros(1, 1),
        };
        let (_, tape) = layer.forward(&Matrix::row_vector(&[2.0])).unwrap();
        let g = layer.backward(tape, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(g.dx[(0, 0)], 3.0);
        assert_eq!(g.dw[(0, 0)], 2.0);
        assert_eq!(g.db[(0, 0)], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng(3);
        let layer = Linear::init(4, 3, Init::XavierUniform, &mut r);
        let (_, tape) = layer
            .forward(&Matrix::random_uniform(5, 4, 2.0, &mut r))
            .unwrap();
        let g = layer.backward(tape, &Matrix::zeros(5, 3)).unwrap();
        assert_eq!(g.dx.max_abs() + g.dw.max_abs() + g.db.max_abs(), 0.0);
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let mut r = rng(4);
        let a = Linear::init(4, 3, Init::XavierUniform, &mut r);
        let b = Linear::init(3, 3, Init::XavierUniform, &mut r);
        let (_, tape) = a.forward(&Matrix::zeros(2, 4)).unwrap();
        assert!(matches!(
            b.backward(tape, &Matrix::zeros(2, 3)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(5);
        let x = Matrix::random_uniform(3, 4, 2.0, &mut r);
        let layer = Linear {
            weight: Matrix::random_uniform(4, 2, 2.0, &mut r),
            bias: Matrix::random_uniform(1, 2, 2.0, &mut r),
        };
        let proj = Matrix::random_uniform(3, 2, 1.0, &mut r);
        let loss = |x: &Matrix, l: &Linear| -> f64 {
            let out = linear_forward(x, &l.weight, &l.bias).unwrap();
            out.hadamard(&proj).unwrap().sum()
        };
        let (_, tape) = layer.forward(&x).unwrap();
        let g = layer.backward(tape, &proj).unwrap();

        fd_check(&g.dx, &x, |xp| loss(xp, &layer), 1e-6);
        fd_check(
            &g.dw,
            &layer.weight,
            |w| {
                loss(
                    &x,
                    &Linear {
                        weight: w.clone(),
                        bias: layer.bias.clone(),
                    },
                )
            },
            1e-6,
        );
        fd_check(
            &g.db,
            &layer.bias,
            |b| {
                loss(
                    &x,
                    &Linear {
                        weight: layer.weight.clone(),
                        bias: b.clone(),
                    },
                )
            },
            1e-6,
        );
    }
}
