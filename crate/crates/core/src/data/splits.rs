use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureBag;
use crate::error::{Error, Result};

/// One stratified train/val/test partition (8:1:1 by bag id).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    /// Resolves the id lists against `bags`, keeping list order.
    pub fn partition<'a>(&self, bags: &'a [FeatureBag]) -> Result<[Vec<&'a FeatureBag>; 3]> {
        let by_id: BTreeMap<&str, &FeatureBag> =
            bags.iter().map(|b| (b.bag_id.as_str(), b)).collect();
        let pick = |ids: &[String]| -> Result<Vec<&'a FeatureBag>> {
            ids.iter()
                .map(|id| {
                    by_id.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Contract(format!("split references unknown bag {id}"))
                    })
                })
                .collect()
        };
        Ok([pick(&self.train)?, pick(&self.val)?, pick(&self.test)?])
    }
}

/// `folds` independent stratified 8:1:1 splits; fold `k` shuffles with
/// seed `seed + k`.
pub fn make_splits(bags: &[FeatureBag], folds: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if bags.len() < 10 {
        return Err(Error::Stratification(format!(
            "need at least 10 bags, got {}",
            bags.len()
        )));
    }
    if folds == 0 {
        return Err(Error::Config("folds must be >= 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for b in bags {
        by_class.entry(b.label).or_default().push(&b.bag_id);
    }
    if let Some((c, ids)) = by_class.iter().find(|(_, ids)| ids.len() < 3) {
        return Err(Error::Stratification(format!(
            "class {c} has {} bags, need at least 3",
            ids.len()
        )));
    }

    Ok((0..folds)
        .map(|fold| {
            let fold_seed = seed.wrapping_add(fold as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
            let mut plan = SplitPlan {
                fold,
                seed: fold_seed,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for ids in by_class.values() {
                let mut ids: Vec<&str> = ids.clone();
                ids.shuffle(&mut rng);
                let tenth = ((ids.len() as f64) / 10.0).round().max(1.0) as usize;
                let (test, rest) = ids.split_at(tenth);
                let (val, train) = rest.split_at(tenth);
                plan.test.extend(test.iter().map(|s| s.to_string()));
                plan.val.extend(val.iter().map(|s| s.to_string()));
                plan.train.extend(train.iter().map(|s| s.to_string()));
            }
            plan
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::numerics::Matrix;

    fn bags(per_class: &[usize]) -> Vec<FeatureBag> {
        let mut out = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                out.push(FeatureBag::new(format!("c{c}_{i}"), c, Matrix::zeros(1, 1)));
            }
        }
        out
    }

    #[test]
    fn balanced_hundred_splits_80_10_10() {
        let data = bags(&[50, 50]);
        for plan in make_splits(&data, 5, 3).unwrap() {
            assert_eq!(
                (plan.train.len(), plan.val.len(), plan.test.len()),
                (80, 10, 10)
            );
            let [train, val, test] = plan.partition(&data).unwrap();
            for (part, want) in [(train, 40usize), (val, 5), (test, 5)] {
                let ones = part.iter().filter(|b| b.label == 1).count();
                assert!(ones.abs_diff(want) <= 1);
            }
        }
    }

    #[test]
    fn plans_partition_the_dataset() {
        let data = bags(&[13, 40, 7]);
        for plan in make_splits(&data, 5, 9).unwrap() {
            let all: Vec<&String> = plan
                .train
                .iter()
                .chain(&plan.val)
                .chain(&plan.test)
                .collect();
            let unique: BTreeSet<&String> = all.iter().copied().collect();
            assert_eq!(all.len(), unique.len());
            assert_eq!(unique.len(), data.len());
        }
    }

    #[test]
    fn same_seed_same_plans_and_folds_differ() {
        let data = bags(&[30, 30]);
        let a = make_splits(&data, 3, 11).unwrap();
        assert_eq!(a, make_splits(&data, 3, 11).unwrap());
        assert_ne!(a[0].test, a[1].test);
    }

    #[test]
    fn tiny_class_is_rejected() {
        assert!(matches!(
            make_splits(&bags(&[20, 2]), 5, 0),
            Err(Error::Stratification(_))
        ));
        assert!(matches!(
            make_splits(&bags(&[4, 4]), 5, 0),
            Err(Error::Stratification(_))
        ));
    }
}
