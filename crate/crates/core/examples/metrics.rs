//! ROC-AUC (ties count one half), accuracy, and mean±std aggregation over
//! cross-validation folds.

use mamba2mil::eval::{aggregate, roc_auc_binary, roc_auc_multiclass, FoldMetrics};
use mamba2mil::numerics::Matrix;

fn main() -> mamba2mil::Result<()> {
    let scores = [0.9, 0.8, 0.8, 0.3, 0.2, 0.1];
    let labels = [1, 1, 0, 1, 0, 0];
    println!("binary AUC = {:.4}", roc_auc_binary(&scores, &labels)?);

    let probas = Matrix::from_rows(&[
        [0.7, 0.2, 0.1],
        [0.2, 0.5, 0.3],
        [0.1, 0.3, 0.6],
        [0.4, 0.4, 0.2],
        [0.3, 0.3, 0.4],
    ]);
    println!(
        "macro one-vs-rest AUC = {:.4}",
        roc_auc_multiclass(&probas, &[0, 1, 2, 1, 2])?
    );

    let folds: Vec<FoldMetrics> = [(0.95, 0.88), (0.97, 0.90), (0.93, 0.85)]
        .iter()
        .enumerate()
        .map(|(fold, &(auc, acc))| FoldMetrics {
            fold,
            test_auc: Some(auc),
            test_acc: acc,
            val_auc: Some(auc - 0.02),
            val_acc: acc - 0.01,
        })
        .collect();
    let report = aggregate(&folds)?;
    print!("{}", report.to_table("example"));
    print!("{}", report.to_csv());
    Ok(())
}
