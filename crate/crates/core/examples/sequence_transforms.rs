//! Squaring a bag to a perfect-square length, then the flip and transpose
//! orderings (and their inverses) on a small labeled sequence.

use mamba2mil::cli::branch_label;
use mamba2mil::numerics::Matrix;
use mamba2mil::seq_transform::{inverse_reorder, reorder, square, OrderingKind};

fn show(name: &str, m: &Matrix) {
    let ids: Vec<String> = m.iter_rows().map(|r| format!("{}", r[0])).collect();
    println!("{name:<12} {}", ids.join(" "));
}

fn main() -> mamba2mil::Result<()> {
    // seven instances; the value is the instance index
    let bag = Matrix::from_vec(7, 1, (0..7).map(f64::from).collect())?;
    let sq = square(&bag)?;
    println!(
        "N = {} -> L = {} ({}x{} grid, {} padding rows)",
        sq.original_len,
        sq.len(),
        sq.side,
        sq.side,
        sq.pad_len
    );
    show("squared", &sq.data);
    for kind in [
        OrderingKind::Flipped,
        OrderingKind::Transposed,
        OrderingKind::Random { seed: 3 },
    ] {
        let moved = reorder(&sq, kind)?;
        show(&branch_label(&[kind]), &moved);
        assert_eq!(inverse_reorder(&moved, kind)?, sq.data);
    }
    println!("every ordering inverts back to the squared sequence");
    Ok(())
}
