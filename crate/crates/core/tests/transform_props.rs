use mamba2mil::numerics::Matrix;
use mamba2mil::seq_transform::{inverse_reorder, reorder, square, OrderingKind};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = OrderingKind> {
    prop_oneof![
        Just(OrderingKind::Original),
        Just(OrderingKind::Flipped),
        Just(OrderingKind::Transposed),
        any::<u64>().prop_map(|seed| OrderingKind::Random { seed }),
        (1usize..12).prop_map(|stride| OrderingKind::StrideInterleave { stride }),
    ]
}

fn sorted_rows(m: &Matrix) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = m
        .iter_rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

proptest! {
    #[test]
    fn reorder_is_an_invertible_permutation(
        n in 1usize..200,
        d in 1usize..4,
        seed in any::<u64>(),
        kind in kind_strategy(),
    ) {
        let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let x = Matrix::random_uniform(n, d, 5.0, &mut r);
        let sq = square(&x).unwrap();
        prop_assert_eq!(sq.len(), sq.side * sq.side);
        prop_assert!(((sq.len() - n) as f64) < 2.0 * (n as f64).sqrt() + 1.0);
        for i in 0..n {
            prop_assert_eq!(sq.data.row(i), x.row(i));
        }
        let y = reorder(&sq, kind).unwrap();
        prop_assert_eq!(sorted_rows(&y), sorted_rows(&sq.data));
        prop_assert_eq!(inverse_reorder(&y, kind).unwrap(), sq.data);
    }
}
