use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each row (softmax over columns).
    Row,
    /// Normalize each column (softmax over rows).
    Col,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// Backward from the forward *output* `y`.
pub fn tanh_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    if y.shape() != dy.shape() {
        return Err(Error::dim("tanh_backward", y.shape_str(), dy.shape_str()));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *d *= 1.0 - v * v;
    }
    Ok(dx)
}

pub fn silu_forward(x: &Matrix) -> Matrix {
    x.map(silu)
}

/// Backward from the forward *input* `x`.
pub fn silu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    if x.shape() != dy.shape() {
        return Err(Error::dim("silu_backward", x.shape_str(), dy.shape_str()));
    }
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d *= silu_grad(v);
    }
    Ok(dx)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub fn softmax_forward(x: &Matrix, axis: Axis) -> Result<Matrix> {
    match axis {
        Axis::Row => {
            if x.cols() == 0 {
                return Err(Error::Contract("softmax over an empty row".into()));
            }
            let mut out = x.clone();
            for i in 0..out.rows() {
                softmax_in_place(out.row_mut(i));
            }
            Ok(out)
        }
        Axis::Col => {
            if x.rows() == 0 {
                return Err(Error::Contract("softmax over an empty column".into()));
            }
            Ok(softmax_forward(&x.transpose(), Axis::Row)?.transpose())
        }
    }
}

/// Backward from the forward *output* `y`: `dx = y ⊙ (dy − Σ dy⊙y)` along `axis`.
pub fn softmax_backward(y: &Matrix, dy: &Matrix, axis: Axis) -> Result<Matrix> {
    if y.shape() != dy.shape() {
        return Err(Error::dim(
            "softmax_backward",
            y.shape_str(),
            dy.shape_str(),
        ));
    }
    match axis {
        Axis::Row => {
            let mut dx = Matrix::zeros(y.rows(), y.cols());
            for i in 0..y.rows() {
                let (yr, gr) = (y.row(i), dy.row(i));
                let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                    *d = yv * (gv - inner);
                }
            }
            Ok(dx)
        }
        Axis::Col => Ok(softmax_backward(&y.transpose(), &dy.transpose(), Axis::Row)?.transpose()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{fd_check, rng};

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax_forward(&Matrix::zeros(1, 3), Axis::Row).unwrap();
        for &v in y.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_positive() {
        let mut r = rng(10);
        let x = Matrix::random_uniform(6, 9, 30.0, &mut r);
        let y = softmax_forward(&x, Axis::Row).unwrap();
        for row in y.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        let yc = softmax_forward(&x, Axis::Col).unwrap();
        for s in yc.col_sums().as_slice() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        assert!(softmax_forward(&Matrix::zeros(2, 0), Axis::Row).is_err());
        assert!(softmax_forward(&Matrix::zeros(0, 2), Axis::Col).is_err());
    }

    #[test]
    fn tanh_at_zero() {
        assert_eq!(tanh_forward(&Matrix::zeros(1, 1))[(0, 0)], 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0) > 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backwards_match_finite_differences() {
        let mut r = rng(11);
        let x = Matrix::random_uniform(4, 5, 2.0, &mut r);
        let proj = Matrix::random_uniform(4, 5, 1.0, &mut r);
        let project = |m: &Matrix| m.hadamard(&proj).unwrap().sum();

        let y = tanh_forward(&x);
        fd_check(
            &tanh_backward(&y, &proj).unwrap(),
            &x,
            |x| project(&tanh_forward(x)),
            1e-6,
        );

        fd_check(
            &silu_backward(&x, &proj).unwrap(),
            &x,
            |x| project(&silu_forward(x)),
            1e-6,
        );

        for axis in [Axis::Row, Axis::Col] {
            let y = softmax_forward(&x, axis).unwrap();
            let dx = softmax_backward(&y, &proj, axis).unwrap();
            fd_check(
                &dx,
                &x,
                |x| project(&softmax_forward(x, axis).unwrap()),
                1e-6,
            );
        }
    }

    #[test]
    fn forwards_are_deterministic() {
        let mut r = rng(12);
        let x = Matrix::random_uniform(5, 7, 2.0, &mut r);
        assert_eq!(
            softmax_forward(&x, Axis::Row).unwrap().as_slice(),
            softmax_forward(&x, Axis::Row).unwrap().as_slice()
        );
        assert_eq!(silu_forward(&x).as_slice(), silu_forward(&x).as_slice());
    }
}
