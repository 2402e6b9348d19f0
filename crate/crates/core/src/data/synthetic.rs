use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureBag;
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Bags per subtype in the seven-class breast biopsy cohort, used as class
/// proportions for the `bracs` imbalance option.
pub const BRACS_SUBTYPE_COUNTS: [usize; 7] = [40, 145, 70, 41, 48, 61, 132];

const SIGNAL_STREAM: u64 = 0x5349_474e_414c;

/// Parameters of a synthetic MIL dataset. Class 0 bags hold only noise; a
/// class `c ≥ 1` bag plants `⌈rate·N⌉` instances of `signal_c + noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_bags: usize,
    pub classes: usize,
    pub dim: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub positive_rate: f64,
    pub noise: f64,
    pub seed: u64,
    /// Relative class frequencies; uniform when absent.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_bags: 200,
            classes: 2,
            dim: 64,
            min_size: 40,
            max_size: 550,
            positive_rate: 0.05,
            noise: 0.1,
            seed: 0,
            class_weights: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.classes > self.dim {
            return bad("orthogonal class signals need dim >= classes");
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("bag sizes need 1 <= min_size <= max_size");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate <= 1.0) {
            return bad("positive_rate must be in (0, 1]");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be finite and >= 0");
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.classes
                || w.iter().any(|v| !(*v >= 0.0))
                || w.iter().sum::<f64>() <= 0.0
            {
                return bad("class_weights must be one non-negative weight per class");
            }
        }
        Ok(())
    }

    /// Mutually orthogonal unit vectors, one per class (row `c`).
    pub fn signals(&self) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SIGNAL_STREAM);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = Matrix::zeros(self.classes, self.dim);
        for c in 0..self.classes {
            loop {
                let mut v: Vec<f64> = (0..self.dim).map(|_| normal.sample(&mut rng)).collect();
                for prev in 0..c {
                    let p = out.row(prev).to_vec();
                    let proj = dot(&v, &p);
                    v.iter_mut().zip(&p).for_each(|(x, y)| *x -= proj * y);
                }
                let norm = dot(&v, &v).sqrt();
                if norm > 1e-6 {
                    v.iter_mut().for_each(|x| *x /= norm);
                    out.row_mut(c).copy_from_slice(&v);
                    break;
                }
            }
        }
        out
    }

    /// Exact per-class bag counts by largest remainder.
    pub fn class_sizes(&self) -> Vec<usize> {
        let weights = self
            .class_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.classes]);
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights
            .iter()
            .map(|w| w / total * self.num_bags as f64)
            .collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.classes).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let missing = self.num_bags - sizes.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            sizes[c] += 1;
        }
        sizes
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<FeatureBag>> {
    spec.validate()?;
    let signals = spec.signals();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut labels: Vec<usize> = spec
        .class_sizes()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);

    let width = (spec.num_bags.max(1) - 1).to_string().len().max(4);
    let mut bags = Vec::with_capacity(spec.num_bags);
    for (i, &label) in labels.iter().enumerate() {
        let n = rng.gen_range(spec.min_size..=spec.max_size);
        let planted = if label == 0 {
            0
        } else {
            ((spec.positive_rate * n as f64).ceil() as usize).min(n)
        };
        let mut rows = Matrix::zeros(n, spec.dim);
        for r in 0..n {
            let row = rows.row_mut(r);
            for v in row.iter_mut() {
                *v = noise.sample(&mut rng);
            }
            if r < planted {
                for (v, s) in row.iter_mut().zip(signals.row(label)) {
                    *v += s;
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        bags.push(FeatureBag::new(
            format!("bag{i:0width$}"),
            label,
            rows.gather_rows(&order),
        ));
    }
    Ok(bags)
}

/// Accuracy of the rule "class `c ≥ 1` whose signal has the largest
/// instance projection, if that projection exceeds ½; otherwise class 0".
pub fn oracle_accuracy(bags: &[FeatureBag], spec: &SyntheticSpec) -> f64 {
    if bags.is_empty() {
        return 0.0;
    }
    let signals = spec.signals();
    let correct = bags
        .iter()
        .filter(|bag| {
            let mut best = (0usize, 0.5f64);
            for c in 1..spec.classes {
                let s = signals.row(c);
                let peak = bag
                    .features
                    .iter_rows()
                    .map(|r| dot(r, s))
                    .fold(f64::NEG_INFINITY, f64::max);
                if peak > best.1 {
                    best = (c, peak);
                }
            }
            best.0 == bag.label
        })
        .count();
    correct as f64 / bags.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_full_rate_bags_equal_their_signal() {
        let spec = SyntheticSpec {
            num_bags: 12,
            classes: 3,
            dim: 8,
            min_size: 2,
            max_size: 6,
            positive_rate: 1.0,
            noise: 0.0,
            ..SyntheticSpec::default()
        };
        let signals = spec.signals();
        for bag in generate_synthetic(&spec).unwrap() {
            for row in bag.features.iter_rows() {
                if bag.label == 0 {
                    assert!(row.iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(row, signals.row(bag.label));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            num_bags: 20,
            max_size: 60,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SyntheticSpec {
            seed: 1,
            ..spec.clone()
        };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn signals_are_orthonormal() {
        let s = SyntheticSpec {
            classes: 7,
            dim: 16,
            ..SyntheticSpec::default()
        }
        .signals();
        for i in 0..7 {
            for j in 0..7 {
                let d = dot(s.row(i), s.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_recovers_labels_on_default_task() {
        let spec = SyntheticSpec {
            dim: 32,
            ..SyntheticSpec::default()
        };
        let bags = generate_synthetic(&spec).unwrap();
        assert!(oracle_accuracy(&bags, &spec) > 0.95);
        for bag in &bags {
            assert!((40..=550).contains(&bag.len()));
        }
    }

    #[test]
    fn class_sizes_follow_weights() {
        let spec = SyntheticSpec {
            num_bags: 537,
            classes: 7,
            class_weights: Some(BRACS_SUBTYPE_COUNTS.iter().map(|&c| c as f64).collect()),
            ..SyntheticSpec::default()
        };
        assert_eq!(spec.class_sizes(), BRACS_SUBTYPE_COUNTS.to_vec());
        let even = SyntheticSpec::default().class_sizes();
        assert_eq!(even, vec![100, 100]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            SyntheticSpec {
                positive_rate: 0.0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                min_size: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                classes: 1,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                classes: 5,
                dim: 4,
                ..SyntheticSpec::default()
            },
        ] {
            assert!(generate_synthetic(&spec).is_err());
        }
    }
}
