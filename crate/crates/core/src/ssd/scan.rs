//! Scalar-decay state-space scan in three equivalent evaluation orders.
//!
//! For one head with channel width `P` and state size `N`:
//!
//! ```text
//! h_t = a_t · h_{t−1} + B_t ⊗ x_t        h ∈ R^{N×P}, h_{−1} = 0
//! y_t = C_tᵀ · h_t
//! ```
//!
//! Unrolling gives `y_t = Σ_{j≤t} (C_t·B_j) (∏_{k=j+1..t} a_k) x_j`, a
//! lower-triangular masked matrix product. The chunked form applies that
//! product inside blocks of `Q` steps and carries the state between blocks.

use super::super::numerics::{dot, Matrix};
use crate::error::{Error, Result};

/// Borrowed inputs of one head's scan.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs<'a> {
    /// `T×P` channel inputs.
    pub x: &'a Matrix,
    /// Per-step decay, each in `[0, 1]`.
    pub a: &'a [f64],
    /// `T×N` input maps.
    pub b: &'a Matrix,
    /// `T×N` output maps.
    pub c: &'a Matrix,
}

#[derive(Clone, Debug)]
pub struct ScanGrad {
    pub dx: Matrix,
    pub da: Vec<f64>,
    pub db: Matrix,
    pub dc: Matrix,
}

impl<'a> ScanInputs<'a> {
    pub fn new(x: &'a Matrix, a: &'a [f64], b: &'a Matrix, c: &'a Matrix) -> Result<Self> {
        let s = ScanInputs { x, a, b, c };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.x.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.x.rows();
        if self.a.len() != t {
            return Err(Error::dim(
                "ssd scan decay",
                self.x.shape_str(),
                format!("{} decays", self.a.len()),
            ));
        }
        if self.b.rows() != t || self.c.shape() != self.b.shape() {
            return Err(Error::dim(
                "ssd scan B/C",
                self.b.shape_str(),
                self.c.shape_str(),
            ));
        }
        if !(self.x.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return Err(Error::Numeric("ssd scan input".into()));
        }
        if let Some(bad) = self.a.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Numeric(format!("decay {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

/// `state += scale · (B_t ⊗ x_t)` with `state` laid out `N×P`.
#[inline]
fn add_outer(state: &mut [f64], b: &[f64], x: &[f64]) {
    let p = x.len();
    for (n, &bn) in b.iter().enumerate() {
        if bn == 0.0 {
            continue;
        }
        for (s, &xv) in state[n * p..(n + 1) * p].iter_mut().zip(x) {
            *s += bn * xv;
        }
    }
}

/// `out = Cᵀ · state`
#[inline]
fn read_state(state: &[f64], c: &[f64], out: &mut [f64]) {
    let p = out.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (n, &cn) in c.iter().enumerate() {
        if cn == 0.0 {
            continue;
        }
        for (o, &s) in out.iter_mut().zip(&state[n * p..(n + 1) * p]) {
            *o += cn * s;
        }
    }
}

/// Sequential evaluation of the recurrence.
pub fn ssd_recurrence(inp: ScanInputs<'_>) -> Result<Matrix> {
    inp.validate()?;
    let (t_len, p) = inp.x.shape();
    let n = inp.state_dim();
    let mut y = Matrix::zeros(t_len, p);
    let mut h = vec![0.0; n * p];
    for t in 0..t_len {
        let a = inp.a[t];
        h.iter_mut().for_each(|v| *v *= a);
        add_outer(&mut h, inp.b.row(t), inp.x.row(t));
        read_state(&h, inp.c.row(t), y.row_mut(t));
    }
    Ok(y)
}

/// Quadratic dual form: `y = M·x` with `M[t,j] = (C_t·B_j) ∏_{k=j+1..t} a_k`.
///
/// The decay products are accumulated step by step, never as ratios of
/// cumulative products, so zero decays are exact.
pub fn ssd_dual_quadratic(inp: ScanInputs<'_>) -> Result<Matrix> {
    inp.validate()?;
    let (t_len, p) = inp.x.shape();
    let mut y = Matrix::zeros(t_len, p);
    for t in 0..t_len {
        let ct = inp.c.row(t);
        let yt = y.row_mut(t);
        let mut decay = 1.0;
        for j in (0..=t).rev() {
            if j < t {
                decay *= inp.a[j + 1];
                if decay == 0.0 {
                    break;
                }
            }
            let coef = dot(ct, inp.b.row(j)) * decay;
            for (o, &xv) in yt.iter_mut().zip(inp.x.row(j)) {
                *o += coef * xv;
            }
        }
    }
    Ok(y)
}

/// Blocked evaluation: the dual form inside each chunk of `chunk` steps,
/// plus a carried state between chunks. Linear in `T` for fixed `chunk`.
pub fn ssd_chunked_scan(inp: ScanInputs<'_>, chunk: usize) -> Result<Matrix> {
    if chunk == 0 {
        return Err(Error::Contract("chunk size must be >= 1".into()));
    }
    inp.validate()?;
    let (t_len, p) = inp.x.shape();
    let n = inp.state_dim();
    let mut y = Matrix::zeros(t_len, p);
    let mut state = vec![0.0; n * p];
    let mut carry = vec![0.0; p];
    // decay from chunk start through step t, inclusive
    let mut prefix = vec![0.0; chunk];

    let mut start = 0;
    while start < t_len {
        let end = (start + chunk).min(t_len);
        let q = end - start;

        let mut acc = 1.0;
        for i in 0..q {
            acc *= inp.a[start + i];
            prefix[i] = acc;
        }

        for i in 0..q {
            let t = start + i;
            let ct = inp.c.row(t);
            read_state(&state, ct, &mut carry);
            let yt = y.row_mut(t);
            for (o, &cv) in yt.iter_mut().zip(&carry) {
                *o = prefix[i] * cv;
            }
            let mut decay = 1.0;
            for j in (start..=t).rev() {
                if j < t {
                    decay *= inp.a[j + 1];
                    if decay == 0.0 {
                        break;
                    }
                }
                let coef = dot(ct, inp.b.row(j)) * decay;
                for (o, &xv) in yt.iter_mut().zip(inp.x.row(j)) {
                    *o += coef * xv;
                }
            }
        }

        // state at chunk end
        let total = prefix[q - 1];
        state.iter_mut().for_each(|v| *v *= total);
        let mut decay = 1.0;
        for j in (start..end).rev() {
            if j + 1 < end {
                decay *= inp.a[j + 1];
            }
            if decay == 0.0 {
                break;
            }
            let scaled: Vec<f64> = inp.x.row(j).iter().map(|v| v * decay).collect();
            add_outer(&mut state, inp.b.row(j), &scaled);
        }
        start = end;
    }
    Ok(y)
}

/// Reverse-mode adjoint of the recurrence. States are checkpointed every
/// `checkpoint` steps on a forward sweep, then recomputed block by block
/// while the adjoint state runs backward in time.
pub fn ssd_scan_backward(inp: ScanInputs<'_>, dy: &Matrix, checkpoint: usize) -> Result<ScanGrad> {
    inp.validate()?;
    if dy.shape() != inp.x.shape() {
        return Err(Error::dim(
            "ssd_scan_backward",
            inp.x.shape_str(),
            dy.shape_str(),
        ));
    }
    let checkpoint = checkpoint.max(1);
    let (t_len, p) = inp.x.shape();
    let n = inp.state_dim();
    let size = n * p;

    // states entering each block
    let mut saved: Vec<Vec<f64>> = Vec::with_capacity(t_len / checkpoint + 1);
    let mut h = vec![0.0; size];
    for t in 0..t_len {
        if t % checkpoint == 0 {
            saved.push(h.clone());
        }
        let a = inp.a[t];
        h.iter_mut().for_each(|v| *v *= a);
        add_outer(&mut h, inp.b.row(t), inp.x.row(t));
    }

    let mut grad = ScanGrad {
        dx: Matrix::zeros(t_len, p),
        da: vec![0.0; t_len],
        db: Matrix::zeros(t_len, n),
        dc: Matrix::zeros(t_len, n),
    };
    let mut adj = vec![0.0; size];
    let mut block_states: Vec<f64> = Vec::with_capacity((checkpoint + 1) * size);

    for (blk, entry) in saved.iter().enumerate().rev() {
        let start = blk * checkpoint;
        let end = (start + checkpoint).min(t_len);
        // block_states[k] = h_{start−1+k}, k = 0..=len
        block_states.clear();
        block_states.extend_from_slice(entry);
        for t in start..end {
            let off = block_states.len() - size;
            let a = inp.a[t];
            let mut next: Vec<f64> = block_states[off..].iter().map(|v| v * a).collect();
            add_outer(&mut next, inp.b.row(t), inp.x.row(t));
            block_states.extend_from_slice(&next);
        }

        for t in (start..end).rev() {
            let k = t - start;
            let h_prev = &block_states[k * size..(k + 1) * size];
            let h_cur = &block_states[(k + 1) * size..(k + 2) * size];
            let (ct, bt, xt, gt) = (inp.c.row(t), inp.b.row(t), inp.x.row(t), dy.row(t));

            add_outer(&mut adj, ct, gt);

            let dc = grad.dc.row_mut(t);
            for nn in 0..n {
                dc[nn] = dot(&h_cur[nn * p..(nn + 1) * p], gt);
            }
            let db = grad.db.row_mut(t);
            for nn in 0..n {
                db[nn] = dot(&adj[nn * p..(nn + 1) * p], xt);
            }
            read_state(&adj, bt, grad.dx.row_mut(t));
            grad.da[t] = dot(&adj, h_prev);

            let a = inp.a[t];
            adj.iter_mut().for_each(|v| *v *= a);
        }
    }
    Ok(grad)
}
