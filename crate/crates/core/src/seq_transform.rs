//! Sequence squaring and the row orderings applied to a squared sequence.
//!
//! A bag of `N` rows is padded to `L = ⌈√N⌉²` rows by repeating its leading
//! rows, so it can be read as a `side × side` grid. Orderings are row
//! permutations of that grid with exact inverses.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A bag padded to a perfect-square length.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredSequence {
    pub data: Matrix,
    pub original_len: usize,
    pub side: usize,
    pub pad_len: usize,
}

impl SquaredSequence {
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }
}

/// `⌈√n⌉` computed in integers.
pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}

/// Source row of each padded position: `i` for `i < n`, else `(i − n) mod n`.
pub fn squared_indices(n: usize) -> Vec<usize> {
    let side = ceil_sqrt(n);
    (0..side * side)
        .map(|i| if i < n { i } else { (i - n) % n })
        .collect()
}

pub fn square(seq: &Matrix) -> Result<SquaredSequence> {
    let n = seq.rows();
    if n == 0 {
        return Err(Error::EmptyBag);
    }
    let side = ceil_sqrt(n);
    let data = seq.gather_rows(&squared_indices(n));
    Ok(SquaredSequence {
        pad_len: data.rows() - n,
        data,
        original_len: n,
        side,
    })
}

/// Adjoint of [`square`]: gradients of padding rows flow back to the rows
/// they copied.
pub fn square_backward(d_squared: &Matrix, original_len: usize) -> Matrix {
    let mut out = Matrix::zeros(original_len, d_squared.cols());
    for (i, src) in squared_indices(original_len).into_iter().enumerate() {
        let g = d_squared.row(i).to_vec();
        for (o, v) in out.row_mut(src).iter_mut().zip(g) {
            *o += v;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OrderingKind {
    Original,
    Flipped,
    Transposed,
    Random {
        seed: u64,
    },
    /// Rows `r, r+R, r+2R, …` for `r = 0..R`.
    StrideInterleave {
        stride: usize,
    },
}

impl OrderingKind {
    /// `perm[i]` is the input row placed at output position `i`.
    pub fn permutation(&self, len: usize) -> Result<Vec<usize>> {
        Ok(match *self {
            OrderingKind::Original => (0..len).collect(),
            OrderingKind::Flipped => (0..len).rev().collect(),
            OrderingKind::Transposed => {
                let side = ceil_sqrt(len);
                if side * side != len {
                    return Err(Error::Contract(format!(
                        "transpose needs a square length, got {len}"
                    )));
                }
                // output i·side + j reads input j·side + i
                (0..len).map(|k| (k % side) * side + k / side).collect()
            }
            OrderingKind::Random { seed } => {
                let mut perm: Vec<usize> = (0..len).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                perm
            }
            OrderingKind::StrideInterleave { stride } => {
                if stride == 0 {
                    return Err(Error::Contract("stride must be >= 1".into()));
                }
                (0..stride).flat_map(|r| (r..len).step_by(stride)).collect()
            }
        })
    }
}

impl fmt::Display for OrderingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingKind::Original => write!(f, "original"),
            OrderingKind::Flipped => write!(f, "flipped"),
            OrderingKind::Transposed => write!(f, "transposed"),
            OrderingKind::Random { seed } => write!(f, "random:{seed}"),
            OrderingKind::StrideInterleave { stride } => write!(f, "stride:{stride}"),
        }
    }
}

impl FromStr for OrderingKind {
    type Err = Error;

    /// `original`, `flipped`, `transposed`, `random[:seed]`, `stride[:R]`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |default: u64| -> Result<u64> {
            arg.map_or(Ok(default), |a| {
                a.parse()
                    .map_err(|_| Error::Config(format!("bad ordering argument in {s:?}")))
            })
        };
        match (head.trim(), arg) {
            ("original", None) => Ok(OrderingKind::Original),
            ("flipped" | "flip", None) => Ok(OrderingKind::Flipped),
            ("transposed" | "transpose", None) => Ok(OrderingKind::Transposed),
            ("random", _) => Ok(OrderingKind::Random { seed: num(0)? }),
            ("stride", _) => match num(10)? {
                0 => Err(Error::Config("stride must be >= 1".into())),
                r => Ok(OrderingKind::StrideInterleave { stride: r as usize }),
            },
            _ => Err(Error::Config(format!("unknown ordering {s:?}"))),
        }
    }
}

pub fn reorder(sq: &SquaredSequence, kind: OrderingKind) -> Result<Matrix> {
    reorder_rows(&sq.data, kind)
}

/// Applies `kind` to the rows of any matrix.
pub fn reorder_rows(data: &Matrix, kind: OrderingKind) -> Result<Matrix> {
    Ok(data.gather_rows(&kind.permutation(data.rows())?))
}

/// Undoes [`reorder_rows`] for the same `kind`. A different `kind` silently
/// produces a different permutation.
pub fn inverse_reorder(data: &Matrix, kind: OrderingKind) -> Result<Matrix> {
    let perm = kind.permutation(data.rows())?;
    let mut out = Matrix::zeros(data.rows(), data.cols());
    for (i, &src) in perm.iter().enumerate() {
        out.row_mut(src).copy_from_slice(data.row(i));
    }
    Ok(out)
}
