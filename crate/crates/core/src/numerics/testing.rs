//! Finite-difference helpers shared by unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{central_difference, relative_error, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Asserts every entry of `analytic` matches the central difference of
/// `loss` around `at`, element by element.
pub fn fd_check(analytic: &Matrix, at: &Matrix, loss: impl Fn(&Matrix) -> f64, tol: f64) {
    assert_eq!(analytic.shape(), at.shape());
    let numeric = central_difference(at, 1e-5, loss);
    for (i, (a, n)) in analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .enumerate()
    {
        let err = relative_error(*a, *n);
        assert!(
            err < tol,
            "entry {i}: analytic {a} vs numeric {n} (rel {err:e})"
        );
    }
}
