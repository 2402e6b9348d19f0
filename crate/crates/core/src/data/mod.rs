//! Feature bags: synthetic generation, on-disk storage and splitting.

mod bagfile;
mod splits;
mod synthetic;

pub use bagfile::{
    dataset_digest, load_bags, read_bag_file, save_bags, write_bag_file, BagDtype, ManifestRow,
    FBAG_F32_FLAG, FBAG_MAGIC, FBAG_VERSION,
};
pub use splits::{make_splits, SplitPlan};
pub use synthetic::{generate_synthetic, oracle_accuracy, SyntheticSpec, BRACS_SUBTYPE_COUNTS};

use crate::numerics::Matrix;

/// One slide: its instance features (`N×D`) and bag-level label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub bag_id: String,
    pub label: usize,
    pub features: Matrix,
}

impl FeatureBag {
    pub fn new(bag_id: impl Into<String>, label: usize, features: Matrix) -> Self {
        FeatureBag {
            bag_id: bag_id.into(),
            label,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Number of bags per class index, sized to the largest label + 1.
pub fn class_counts(bags: &[FeatureBag]) -> Vec<usize> {
    let classes = bags.iter().map(|b| b.label + 1).max().unwrap_or(0);
    let mut counts = vec![0; classes];
    for b in bags {
        counts[b.label] += 1;
    }
    counts
}
