//! The 21-cell grid of the published ablation tables, listed, then a small
//! custom sweep over depth actually run.

use mamba2mil::cli::{
    ablation_csv, branch_label, grid, published_grid, run_ablation, AblationAxes, RunConfig,
};
use mamba2mil::data::{generate_synthetic, SyntheticSpec};

fn main() -> mamba2mil::Result<()> {
    let mut base = RunConfig::for_data(8, 2);
    base.model.ssd.state_dim = 8;
    base.train.max_epochs = 2;
    base.folds = 2;

    for cell in published_grid(&base) {
        println!(
            "table {:<2} {:<20} {:<13} {}",
            cell.table,
            cell.variant,
            cell.backbone,
            branch_label(&cell.config.model.branches)
        );
    }

    let bags = generate_synthetic(&SyntheticSpec {
        num_bags: 30,
        dim: 8,
        min_size: 4,
        max_size: 16,
        ..SyntheticSpec::default()
    })?;
    let cells = grid(
        &base,
        &AblationAxes {
            depth: vec![1, 2],
            ..Default::default()
        },
    )?;
    print!("{}", ablation_csv(&run_ablation(&bags, &cells)?)?);
    Ok(())
}
