//! ROC-AUC, accuracy and k-fold aggregation.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. `labels` must hold 0/1 values.
///
/// Sorting makes this O(n log n); pair counts stay integral so the result
/// is exact up to the final division, and
/// `auc(s, y) + auc(s, 1 − y) == 1` holds bit-exactly.
pub fn roc_auc_binary(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "roc_auc_binary",
            scores.len().to_string(),
            labels.len().to_string(),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("binary AUC got label {bad}")));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("AUC score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the Mann–Whitney U statistic, so ties stay integral
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        let group_neg = (j - i) as u128 - group_pos;
        twice_u += group_pos * (2 * negatives_below + group_neg);
        negatives_below += group_neg;
        i = j;
    }

    // a single correctly rounded division: the complement's quotient then
    // sums with this one to exactly 1.0
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Macro-averaged one-vs-rest AUC over the classes present in `labels`.
/// With two columns this is the binary AUC of the class-1 column.
pub fn roc_auc_multiclass(probas: &Matrix, labels: &[usize]) -> Result<f64> {
    if probas.rows() != labels.len() {
        return Err(Error::dim(
            "roc_auc_multiclass",
            probas.shape_str(),
            labels.len().to_string(),
        ));
    }
    let classes = probas.cols();
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if classes == 2 {
        let scores: Vec<f64> = probas.iter_rows().map(|r| r[1]).collect();
        return roc_auc_binary(&scores, labels);
    }
    let mut present = vec![false; classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::UndefinedAuc);
    }
    let mut total = 0.0;
    let mut count = 0;
    for class in (0..classes).filter(|&c| present[c]) {
        let scores: Vec<f64> = probas.iter_rows().map(|r| r[class]).collect();
        let onehot: Vec<usize> = labels.iter().map(|&l| usize::from(l == class)).collect();
        total += roc_auc_binary(&scores, &onehot)?;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose [`argmax`] equals the label.
pub fn accuracy(probas: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    if probas.rows() != labels.len() {
        return Err(Error::dim(
            "accuracy",
            probas.shape_str(),
            labels.len().to_string(),
        ));
    }
    let hits = probas
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// AUC (when defined) and accuracy of one prediction set.
pub fn score(probas: &Matrix, labels: &[usize]) -> Result<(Option<f64>, f64)> {
    let acc = accuracy(probas, labels)?;
    let auc = match roc_auc_multiclass(probas, labels) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok((auc, acc))
}

/// Test and validation metrics of one fold. AUCs are `None` when the split
/// holds a single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub test_auc: Option<f64>,
    pub test_acc: f64,
    pub val_auc: Option<f64>,
    pub val_acc: f64,
}

/// Mean and population standard deviation of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MetricSummary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

fn cell(m: Option<MetricSummary>) -> String {
    m.map_or_else(|| "n/a".to_string(), |m| m.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldMetrics>,
    pub test_auc: Option<MetricSummary>,
    pub test_acc: MetricSummary,
    pub val_auc: Option<MetricSummary>,
    pub val_acc: MetricSummary,
}

/// Means and stds over folds. Undefined AUCs are left out of their summary.
pub fn aggregate(folds: &[FoldMetrics]) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Contract("aggregate needs at least one fold".into()));
    }
    let collect =
        |f: fn(&FoldMetrics) -> Option<f64>| -> Vec<f64> { folds.iter().filter_map(f).collect() };
    Ok(EvalReport {
        folds: folds.to_vec(),
        test_auc: MetricSummary::of(&collect(|m| m.test_auc)),
        test_acc: MetricSummary::of(&collect(|m| Some(m.test_acc))).expect("nonempty"),
        val_auc: MetricSummary::of(&collect(|m| m.val_auc)),
        val_acc: MetricSummary::of(&collect(|m| Some(m.val_acc))).expect("nonempty"),
    })
}

impl EvalReport {
    /// Per-fold rows followed by a `mean±std` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,test_auc,test_acc,val_auc,val_acc\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                f.fold,
                opt(f.test_auc),
                f.test_acc,
                opt(f.val_auc),
                f.val_acc
            );
        }
        let _ = writeln!(
            out,
            "mean±std,{},{},{},{}",
            cell(self.test_auc),
            self.test_acc,
            cell(self.val_auc),
            self.val_acc
        );
        out
    }

    /// One table row in the `Method | AUC | ACC` layout.
    pub fn table_row(&self, method: &str) -> String {
        format!(
            "{method:<24} {:>15} {:>15}",
            cell(self.test_auc),
            self.test_acc.to_string()
        )
    }

    pub fn to_table(&self, method: &str) -> String {
        format!(
            "{:<24} {:>15} {:>15}\n{}\n",
            "Method",
            "AUC",
            "ACC",
            self.table_row(method)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testing::rng;
    use rand::Rng;

    fn pairwise(scores: &[f64], labels: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn hand_example() {
        let auc = roc_auc_binary(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn perfect_and_tied() {
        assert_eq!(roc_auc_binary(&[0.1, 0.2, 0.9], &[0, 0, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc_binary(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc_binary(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedAuc)
        ));
        assert!(roc_auc_binary(&[0.1], &[0, 1]).is_err());
        assert!(roc_auc_binary(&[0.1, 0.2], &[0, 2]).is_err());
        assert!(roc_auc_binary(&[f64::NAN, 0.2], &[0, 1]).is_err());
    }

    #[test]
    fn matches_pairwise_oracle_with_ties() {
        let mut r = rng(1);
        for _ in 0..300 {
            let n = r.gen_range(2..50);
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64 / 5.0).collect();
            let expected = pairwise(&scores, &labels);
            let got = roc_auc_binary(&scores, &labels).unwrap();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn complement_symmetry_is_exact() {
        let mut r = rng(2);
        for _ in 0..500 {
            let n = r.gen_range(2..60);
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..10) as f64 * 0.1).collect();
            let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
            let sum = roc_auc_binary(&scores, &labels).unwrap()
                + roc_auc_binary(&scores, &flipped).unwrap();
            assert_eq!(sum, 1.0);
        }
    }

    #[test]
    fn every_quotient_pairs_with_its_complement() {
        for pos in 1..=50u64 {
            for neg in 1..=50u64 {
                let d = (2 * pos * neg) as f64;
                for x in 0..=2 * pos * neg {
                    assert_eq!(
                        x as f64 / d + (2 * pos * neg - x) as f64 / d,
                        1.0,
                        "{x}/{d}"
                    );
                }
            }
        }
    }

    #[test]
    fn monotone_transforms_preserve_auc() {
        let mut r = rng(3);
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let scores: Vec<f64> = (0..40).map(|_| r.gen_range(-3.0..3.0)).collect();
        let base = roc_auc_binary(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        assert_eq!(roc_auc_binary(&exp, &labels).unwrap(), base);
        assert_eq!(roc_auc_binary(&affine, &labels).unwrap(), base);
    }

    #[test]
    fn two_class_multiclass_reduces_to_binary() {
        let probas = Matrix::from_rows(&[[0.9, 0.1], [0.6, 0.4], [0.65, 0.35], [0.2, 0.8]]);
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc_multiclass(&probas, &labels).unwrap(), 0.75);
    }

    #[test]
    fn one_hot_probabilities_are_perfect() {
        let labels = [0, 1, 2, 2, 1, 0];
        let probas = Matrix::from_rows(
            &labels
                .iter()
                .map(|&l| {
                    let mut r = vec![0.0; 3];
                    r[l] = 1.0;
                    r
                })
                .collect::<Vec<_>>(),
        );
        assert_eq!(roc_auc_multiclass(&probas, &labels).unwrap(), 1.0);
    }

    #[test]
    fn multiclass_matches_per_class_oracle() {
        let mut r = rng(4);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let probas = Matrix::random_uniform(12, 3, 1.0, &mut r);
        let mut expected = 0.0;
        for c in 0..3 {
            let s: Vec<f64> = probas.iter_rows().map(|row| row[c]).collect();
            let y: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
            expected += pairwise(&s, &y) / 3.0;
        }
        let got = roc_auc_multiclass(&probas, &labels).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn multiclass_skips_absent_classes() {
        let probas = Matrix::from_rows(&[[0.5, 0.2, 0.3], [0.1, 0.7, 0.2], [0.6, 0.3, 0.1]]);
        let auc = roc_auc_multiclass(&probas, &[0, 1, 0]).unwrap();
        assert_eq!(auc, 1.0);
        assert!(matches!(
            roc_auc_multiclass(&probas, &[1, 1, 1]),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn accuracy_cases() {
        let p = Matrix::from_rows(&[[0.2, 0.8], [0.7, 0.3]]);
        assert_eq!(accuracy(&p, &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 0.0);
        assert!(accuracy(&Matrix::zeros(0, 2), &[]).is_err());
        // ties resolve to the lower class
        assert_eq!(
            accuracy(&Matrix::from_rows(&[[0.5, 0.5]]), &[0]).unwrap(),
            1.0
        );
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let mut r = rng(5);
        let p = Matrix::random_uniform(30, 4, 1.0, &mut r);
        let labels: Vec<usize> = (0..30).map(|_| r.gen_range(0..4)).collect();
        let perm: Vec<usize> = (0..30).rev().collect();
        let shuffled: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        assert_eq!(
            accuracy(&p, &labels).unwrap(),
            accuracy(&p.gather_rows(&perm), &shuffled).unwrap()
        );
    }

    #[test]
    fn random_seven_class_accuracy_near_chance() {
        let mut r = rng(6);
        let n = 7000;
        let p = Matrix::random_uniform(n, 7, 1.0, &mut r);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..7)).collect();
        let acc = accuracy(&p, &labels).unwrap();
        assert!((acc - 1.0 / 7.0).abs() < 0.02, "{acc}");
    }

    fn fold(i: usize, auc: f64) -> FoldMetrics {
        FoldMetrics {
            fold: i,
            test_auc: Some(auc),
            test_acc: auc,
            val_auc: None,
            val_acc: 0.5,
        }
    }

    #[test]
    fn aggregation_uses_population_std() {
        let r = aggregate(&[fold(0, 0.8), fold(1, 1.0)]).unwrap();
        let auc = r.test_auc.unwrap();
        assert!((auc.mean - 0.9).abs() < 1e-15 && (auc.std - 0.1).abs() < 1e-15);
        assert_eq!(auc.to_string(), "0.9000±0.1000");
        assert!(r.val_auc.is_none());

        let r = aggregate(&[fold(0, 0.9), fold(1, 0.9), fold(2, 0.9)]).unwrap();
        assert_eq!(r.test_acc.std, 0.0);
        assert_eq!(aggregate(&[fold(0, 0.7)]).unwrap().test_acc.std, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn csv_and_table_render() {
        let r = aggregate(&[fold(0, 0.8), fold(1, 1.0)]).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0.8,0.8,,0.5");
        assert_eq!(
            lines[3],
            "mean±std,0.9000±0.1000,0.9000±0.1000,n/a,0.5000±0.0000"
        );
        assert!(r.to_table("Mamba2MIL").contains("0.9000±0.1000"));
    }
}
