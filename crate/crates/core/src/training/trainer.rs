use std::borrow::Borrow;
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{backward, forward, predict_proba, ModelConfig, ModelParams};
use crate::numerics::{Adam, AdamConfig, Matrix, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Always 1: one optimizer step per bag.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
    /// Record wall-clock seconds per epoch. Off by default so logs are
    /// byte-reproducible.
    #[serde(default)]
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 1,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            grad_clip: None,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub val_auc: Option<f64>,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (`None` when no epoch ran).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// `epoch,loss,val_auc,val_acc,seconds`; undefined metrics are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_auc,val_acc,seconds\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.loss,
                opt(e.val_auc),
                opt(e.val_acc),
                e.seconds
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bag_id: String,
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Class probabilities for every bag, in order.
pub fn evaluate_bags<B: Borrow<FeatureBag>>(
    params: &ModelParams,
    cfg: &ModelConfig,
    bags: &[B],
) -> Result<Vec<Prediction>> {
    bags.iter()
        .map(|b| {
            let b = b.borrow();
            Ok(Prediction {
                bag_id: b.bag_id.clone(),
                label: b.label,
                probs: predict_proba(b, params, cfg)?,
            })
        })
        .collect()
}

/// AUC (if defined) and accuracy of a prediction set.
pub fn prediction_metrics(preds: &[Prediction]) -> Result<(Option<f64>, f64)> {
    let rows: Vec<&[f64]> = preds.iter().map(|p| p.probs.as_slice()).collect();
    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    eval::score(&Matrix::from_rows(&rows), &labels)
}

fn clip(grads: &mut ModelParams, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
}

/// Trains with Adam, one step per bag, over a freshly shuffled training set
/// each epoch. Returns the parameters of the epoch with the best validation
/// AUC (accuracy when AUC is undefined, the last epoch when `val` is empty).
pub fn train<B: Borrow<FeatureBag>>(
    mut params: ModelParams,
    cfg: &ModelConfig,
    train_set: &[B],
    val: &[B],
    tcfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    tcfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut log = TrainLog::default();
    let mut adam = Adam::new(AdamConfig {
        lr: tcfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;

    for epoch in 0..tcfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let bag = train_set[i].borrow();
            let diverged = |e: Error| match e {
                Error::Numeric(_) => Error::Diverged {
                    epoch,
                    bag_id: bag.bag_id.clone(),
                    loss: f64::NAN,
                },
                other => other,
            };
            let art = forward(bag, &params, cfg).map_err(diverged)?;
            let (loss, d_logits) = cross_entropy(&art.logits, bag.label)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    bag_id: bag.bag_id.clone(),
                    loss,
                });
            }
            total += loss;
            let (mut grads, _) = backward(art, &params, &d_logits)?;
            if let Some(c) = tcfg.grad_clip {
                clip(&mut grads, c);
            }
            adam.step(params.tensors_mut(), grads.tensors())
                .map_err(diverged)?;
        }
        let loss = total / train_set.len() as f64;

        let (val_auc, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (auc, acc) = prediction_metrics(&evaluate_bags(&params, cfg, val)?)?;
            (auc, Some(acc))
        };
        let seconds = if tcfg.record_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        debug!("epoch {epoch}: loss {loss:.6} val_auc {val_auc:?} val_acc {val_acc:?}");
        log.epochs.push(EpochRecord {
            epoch,
            loss,
            val_auc,
            val_acc,
            seconds,
        });

        match val_auc.or(val_acc) {
            None => {
                log.best_epoch = Some(epoch);
            }
            Some(key) => {
                if best.as_ref().is_none_or(|(b, _)| key > *b) {
                    best = Some((key, params.clone()));
                    log.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= tcfg.patience {
                        info!("early stop after epoch {epoch}");
                        log.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    let out = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::numerics::testing::rng;

    fn small_model(dim: usize) -> ModelConfig {
        let mut cfg = ModelConfig::with_dims(dim, 8, 2);
        cfg.ssd.heads = 2;
        cfg.ssd.head_dim = 4;
        cfg.ssd.state_dim = 4;
        cfg.ssd.depth = 1;
        cfg.selection_hidden = 4;
        cfg.mlp_hidden = 8;
        cfg
    }

    fn separable(num_bags: usize, seed: u64) -> Vec<FeatureBag> {
        separable_rho(num_bags, seed, 0.2)
    }

    fn separable_rho(num_bags: usize, seed: u64, rho: f64) -> Vec<FeatureBag> {
        generate_synthetic(&SyntheticSpec {
            num_bags,
            dim: 16,
            min_size: 6,
            max_size: 20,
            positive_rate: rho,
            noise: 0.05,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn fit(
        bags: &[FeatureBag],
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> (ModelParams, TrainLog, ModelConfig) {
        let cfg = small_model(16);
        let params = ModelParams::init(&cfg, &mut rng(seed)).unwrap();
        let tcfg = TrainConfig {
            lr,
            max_epochs: epochs,
            seed,
            ..TrainConfig::default()
        };
        let empty: &[FeatureBag] = &[];
        let (p, log) = train(params, &cfg, bags, empty, &tcfg).unwrap();
        (p, log, cfg)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let bags = separable(10, 1);
        let cfg = small_model(16);
        let params = ModelParams::init(&cfg, &mut rng(2)).unwrap();
        let tcfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (out, log) = train(params.clone(), &cfg, &bags, &bags, &tcfg).unwrap();
        assert_eq!(out, params);
        assert!(log.epochs.is_empty() && log.best_epoch.is_none());
    }

    #[test]
    fn separable_task_is_learned() {
        // every instance of a positive bag carries the signal
        let bags = separable_rho(24, 3, 1.0);
        let (p, log, cfg) = fit(&bags, 20, 2e-3, 4);
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.loss).collect();
        for w in losses[..5].windows(2) {
            assert!(w[1] < w[0], "loss rose in first epochs: {losses:?}");
        }
        let (_, acc) = prediction_metrics(&evaluate_bags(&p, &cfg, &bags).unwrap()).unwrap();
        assert_eq!(acc, 1.0, "losses {losses:?}");
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let bags = separable(12, 5);
        let (p1, l1, _) = fit(&bags, 3, 1e-3, 6);
        let (p2, l2, _) = fit(&bags, 3, 1e-3, 6);
        assert_eq!(l1.to_csv(), l2.to_csv());
        assert_eq!(p1, p2);
    }

    #[test]
    fn one_small_step_lowers_that_bags_loss() {
        let cfg = small_model(16);
        let bags = separable(10, 7);
        for (k, bag) in bags.iter().take(4).enumerate() {
            let mut params = ModelParams::init(&cfg, &mut rng(8 + k as u64)).unwrap();
            let art = forward(bag, &params, &cfg).unwrap();
            let (before, d) = cross_entropy(&art.logits, bag.label).unwrap();
            let (grads, _) = backward(art, &params, &d).unwrap();
            let mut adam = Adam::new(AdamConfig {
                lr: 1e-5,
                ..AdamConfig::default()
            });
            adam.step(params.tensors_mut(), grads.tensors()).unwrap();
            let after = cross_entropy(&forward(bag, &params, &cfg).unwrap().logits, bag.label)
                .unwrap()
                .0;
            assert!(after < before, "{after} !< {before}");
        }
    }

    #[test]
    fn hundred_epochs_stay_finite() {
        let bags = separable(8, 9);
        let (_, log, _) = fit(&bags, 100, 2e-4, 10);
        assert_eq!(log.epochs.len(), 100);
        assert!(log.epochs.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn early_stopping_keeps_best_snapshot() {
        let bags = separable(20, 11);
        let cfg = small_model(16);
        let params = ModelParams::init(&cfg, &mut rng(12)).unwrap();
        let tcfg = TrainConfig {
            lr: 5e-3,
            max_epochs: 40,
            patience: 2,
            seed: 12,
            ..TrainConfig::default()
        };
        let (best, log) = train(params, &cfg, &bags[..14], &bags[14..], &tcfg).unwrap();
        let epoch = log.best_epoch.unwrap();
        let best_auc = log.epochs[epoch].val_auc.unwrap();
        assert!(log.epochs.iter().all(|e| e.val_auc.unwrap() <= best_auc));
        if log.stopped_early {
            assert_eq!(log.epochs.len(), epoch + 1 + tcfg.patience);
        }
        let (auc, _) =
            prediction_metrics(&evaluate_bags(&best, &cfg, &bags[14..]).unwrap()).unwrap();
        assert_eq!(auc.unwrap(), best_auc);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bags = separable(10, 13);
        let cfg = small_model(16);
        let params = ModelParams::init(&cfg, &mut rng(14)).unwrap();
        for tcfg in [
            TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                grad_clip: Some(-1.0),
                ..TrainConfig::default()
            },
        ] {
            assert!(train(params.clone(), &cfg, &bags, &bags, &tcfg).is_err());
        }
        let empty: &[FeatureBag] = &[];
        assert!(train(params, &cfg, empty, empty, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_names_epoch_and_bag() {
        let bags = separable(10, 15);
        let cfg = small_model(16);
        let mut params = ModelParams::init(&cfg, &mut rng(16)).unwrap();
        params.head_out.bias = Matrix::row_vector(&[f64::INFINITY, 0.0]);
        let err = train(params, &cfg, &bags, &bags, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn log_csv_has_one_row_per_epoch() {
        let bags = separable(10, 17);
        let (_, log, _) = fit(&bags, 3, 1e-3, 18);
        let csv = log.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,loss,val_auc,val_acc,seconds\n0,"));
    }
}
