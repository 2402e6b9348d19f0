use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ConvGrad {
    pub dx: Matrix,
    pub dkernel: Matrix,
    pub dbias: Matrix,
}

fn check(x: &Matrix, kernel: &Matrix, bias: &Matrix, op: &'static str) -> Result<()> {
    if kernel.rows() == 0 {
        return Err(Error::Contract(format!("{op}: kernel size must be >= 1")));
    }
    if kernel.cols() != x.cols() {
        return Err(Error::dim(op, x.shape_str(), kernel.shape_str()));
    }
    if bias.shape() != (1, x.cols()) {
        return Err(Error::dim(op, bias.shape_str(), format!("1x{}", x.cols())));
    }
    kernel.ensure_finite("conv kernel")
}

/// Per-channel causal convolution with `K − 1` zero rows of left padding:
/// `out[t,d] = bias[d] + Σ_k kernel[k,d] · x[t−K+1+k, d]`.
pub fn causal_depthwise_conv1d_forward(
    x: &Matrix,
    kernel: &Matrix,
    bias: &Matrix,
) -> Result<Matrix> {
    check(x, kernel, bias, "causal_depthwise_conv1d_forward")?;
    let (len, width) = x.shape();
    let k_size = kernel.rows();
    let mut out = Matrix::zeros(len, width);
    for t in 0..len {
        let o = out.row_mut(t);
        o.copy_from_slice(bias.as_slice());
        for k in 0..k_size {
            // source row t + k + 1 - K, skipped when negative
            let Some(src) = (t + k + 1).checked_sub(k_size) else {
                continue;
            };
            let (xr, kr) = (x.row(src), kernel.row(k));
            for d in 0..width {
                o[d] += kr[d] * xr[d];
            }
        }
    }
    Ok(out)
}

pub fn causal_depthwise_conv1d_backward(
    x: &Matrix,
    kernel: &Matrix,
    dout: &Matrix,
) -> Result<ConvGrad> {
    if dout.shape() != x.shape() {
        return Err(Error::dim(
            "causal_depthwise_conv1d_backward",
            x.shape_str(),
            dout.shape_str(),
        ));
    }
    if kernel.cols() != x.cols() || kernel.rows() == 0 {
        return Err(Error::dim(
            "causal_depthwise_conv1d_backward",
            x.shape_str(),
            kernel.shape_str(),
        ));
    }
    let (len, width) = x.shape();
    let k_size = kernel.rows();
    let mut dx = Matrix::zeros(len, width);
    let mut dkernel = Matrix::zeros(k_size, width);
    for t in 0..len {
        let g = dout.row(t);
        for k in 0..k_size {
            let Some(src) = (t + k + 1).checked_sub(k_size) else {
                continue;
            };
            let xr = x.row(src);
            let kr = kernel.row(k);
            let dk = dkernel.row_mut(k);
            for d in 0..width {
                dk[d] += g[d] * xr[d];
            }
            let dxr = dx.row_mut(src);
            for d in 0..width {
                dxr[d] += g[d] * kr[d];
            }
        }
    }
    Ok(ConvGrad {
        dx,
        dkernel,
        dbias: dout.col_sums(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::{fd_check, rng};

    fn direct(x: &Matrix, kernel: &Matrix, bias: &Matrix) -> Matrix {
        let (len, width) = x.shape();
        let k_size = kernel.rows() as isize;
        let mut out = Matrix::zeros(len, width);
        for t in 0..len as isize {
            for d in 0..width {
                let mut acc = bias[(0, d)];
                for k in 0..k_size {
                    let src = t - k_size + 1 + k;
                    if src >= 0 {
                        acc += kernel[(k as usize, d)] * x[(src as usize, d)];
                    }
                }
                out[(t as usize, d)] = acc;
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut r = rng(20);
        let x = Matrix::random_uniform(5, 3, 1.0, &mut r);
        let out =
            causal_depthwise_conv1d_forward(&x, &Matrix::filled(1, 3, 1.0), &Matrix::zeros(1, 3))
                .unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn impulse_reproduces_taps_in_order() {
        let kernel = Matrix::from_rows(&[[0.1], [0.2], [0.3]]);
        let mut x = Matrix::zeros(5, 1);
        x[(0, 0)] = 1.0;
        let out = causal_depthwise_conv1d_forward(&x, &kernel, &Matrix::zeros(1, 1)).unwrap();
        // tap index K-1 hits the current step, so the response runs last tap first
        assert_eq!(out.as_slice(), &[0.3, 0.2, 0.1, 0.0, 0.0]);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut r = rng(21);
        let x = Matrix::random_uniform(7, 3, 1.0, &mut r);
        let kernel = Matrix::random_uniform(4, 3, 1.0, &mut r);
        let bias = Matrix::random_uniform(1, 3, 1.0, &mut r);
        let out = causal_depthwise_conv1d_forward(&x, &kernel, &bias).unwrap();
        assert!(out.max_abs_diff(&direct(&x, &kernel, &bias)) < 1e-12);
    }

    #[test]
    fn kernel_longer_than_sequence() {
        let mut r = rng(22);
        let x = Matrix::random_uniform(2, 2, 1.0, &mut r);
        let kernel = Matrix::random_uniform(5, 2, 1.0, &mut r);
        let bias = Matrix::zeros(1, 2);
        let out = causal_depthwise_conv1d_forward(&x, &kernel, &bias).unwrap();
        assert!(out.max_abs_diff(&direct(&x, &kernel, &bias)) < 1e-12);
    }

    #[test]
    fn rejects_non_finite_kernel() {
        let kernel = Matrix::from_rows(&[[f64::NAN]]);
        let res =
            causal_depthwise_conv1d_forward(&Matrix::zeros(3, 1), &kernel, &Matrix::zeros(1, 1));
        assert!(matches!(res, Err(Error::Numeric(_))));
    }

    #[test]
    fn output_is_causal() {
        let mut r = rng(23);
        let x = Matrix::random_uniform(9, 2, 1.0, &mut r);
        let kernel = Matrix::random_uniform(4, 2, 1.0, &mut r);
        let bias = Matrix::zeros(1, 2);
        let base = causal_depthwise_conv1d_forward(&x, &kernel, &bias).unwrap();
        let mut perturbed = x.clone();
        for t in 5..9 {
            perturbed.row_mut(t).iter_mut().for_each(|v| *v += 3.0);
        }
        let out = causal_depthwise_conv1d_forward(&perturbed, &kernel, &bias).unwrap();
        for t in 0..5 {
            assert_eq!(out.row(t), base.row(t));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(24);
        let x = Matrix::random_uniform(6, 3, 2.0, &mut r);
        let kernel = Matrix::random_uniform(4, 3, 2.0, &mut r);
        let bias = Matrix::random_uniform(1, 3, 2.0, &mut r);
        let proj = Matrix::random_uniform(6, 3, 1.0, &mut r);
        let loss = |x: &Matrix, k: &Matrix, b: &Matrix| {
            causal_depthwise_conv1d_forward(x, k, b)
                .unwrap()
                .hadamard(&proj)
                .unwrap()
                .sum()
        };
        let g = causal_depthwise_conv1d_backward(&x, &kernel, &proj).unwrap();
        fd_check(&g.dx, &x, |v| loss(v, &kernel, &bias), 1e-6);
        fd_check(&g.dkernel, &kernel, |v| loss(&x, v, &bias), 1e-6);
        fd_check(&g.dbias, &bias, |v| loss(&x, &kernel, v), 1e-6);
    }
}
