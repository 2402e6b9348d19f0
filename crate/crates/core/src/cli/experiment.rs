//! k-fold train/evaluate pipeline shared by `train`, `ablate` and the
//! examples.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_splits, FeatureBag, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{aggregate, EvalReport, FoldMetrics};
use crate::model::{save_checkpoint, ModelConfig, ModelParams};
use crate::training::{evaluate_bags, prediction_metrics, train, TrainConfig, TrainLog};

/// Environment variable capping how many folds train at once.
pub const THREADS_ENV: &str = "M2MIL_THREADS";

/// Everything that determines a cross-validated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// Split seed; fold `k` also seeds its initialization and shuffles
    /// with `seed + k`.
    pub seed: u64,
}

impl RunConfig {
    /// Defaults for a dataset of width `input_dim` with `classes` labels:
    /// the reduction halves the width (1024 → 512 for ResNet features).
    pub fn for_data(input_dim: usize, classes: usize) -> Self {
        RunConfig {
            model: ModelConfig::with_dims(input_dim, (input_dim / 2).max(1), classes.max(2)),
            train: TrainConfig::default(),
            folds: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.folds == 0 {
            return Err(Error::Config("folds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Provenance written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub data: String,
    pub input_hash: String,
    pub output_dir: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &RunConfig,
        data: &Path,
        input_hash: String,
        output_dir: &Path,
    ) -> Self {
        RunManifest {
            tool: "m2mil".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            seed: config.seed,
            data: data.display().to_string(),
            input_hash,
            output_dir: output_dir.display().to_string(),
        }
    }
}

/// Reads a run configuration from JSON: either a bare [`RunConfig`] or a
/// `run.json` manifest from an earlier run.
pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |e: serde_json::Error| Error::Malformed {
        path: path.into(),
        what: "run config",
        detail: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(malformed)?;
    if value.get("config").is_some() {
        Ok(serde_json::from_value::<RunManifest>(value)
            .map_err(malformed)?
            .config)
    } else {
        serde_json::from_value(value).map_err(malformed)
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub metrics: FoldMetrics,
    pub params: ModelParams,
    pub log: TrainLog,
    pub split: SplitPlan,
}

/// Worker count: `M2MIL_THREADS` if set, else available cores; never more
/// than `jobs`.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Trains and evaluates one split.
pub fn run_fold(bags: &[FeatureBag], split: &SplitPlan, cfg: &RunConfig) -> Result<FoldOutcome> {
    let [train_set, val, test] = split.partition(bags)?;
    let fold_seed = cfg.seed.wrapping_add(split.fold as u64);
    let params = ModelParams::init(&cfg.model, &mut ChaCha8Rng::seed_from_u64(fold_seed))?;
    let tcfg = TrainConfig {
        seed: fold_seed,
        ..cfg.train.clone()
    };
    let (best, log) = train(params, &cfg.model, &train_set, &val, &tcfg)?;
    let (val_auc, val_acc) = prediction_metrics(&evaluate_bags(&best, &cfg.model, &val)?)?;
    let (test_auc, test_acc) = prediction_metrics(&evaluate_bags(&best, &cfg.model, &test)?)?;
    info!(
        "fold {}: test auc {test_auc:?} acc {test_acc:.4}",
        split.fold
    );
    Ok(FoldOutcome {
        metrics: FoldMetrics {
            fold: split.fold,
            test_auc,
            test_acc,
            val_auc,
            val_acc,
        },
        params: best,
        log,
        split: split.clone(),
    })
}

/// Runs every fold, in parallel up to [`worker_count`]. Results are ordered
/// by fold and independent of the thread count.
pub fn cross_validate(bags: &[FeatureBag], cfg: &RunConfig) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    if let Some(b) = bags.iter().find(|b| b.dim() != cfg.model.input_dim) {
        return Err(Error::Config(format!(
            "bag {} has width {}, model expects {}",
            b.bag_id,
            b.dim(),
            cfg.model.input_dim
        )));
    }
    if let Some(b) = bags.iter().find(|b| b.label >= cfg.model.num_classes) {
        return Err(Error::Config(format!(
            "bag {} has label {}, model has {} classes",
            b.bag_id, b.label, cfg.model.num_classes
        )));
    }
    let splits = make_splits(bags, cfg.folds, cfg.seed)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldOutcome>>>> =
        Mutex::new((0..splits.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..worker_count(splits.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(split) = splits.get(k) else { break };
                let outcome = run_fold(bags, split, cfg).map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("fold {k}: {msg}")),
                    Error::Contract(msg) => Error::Contract(format!("fold {k}: {msg}")),
                    other => other,
                });
                results.lock().expect("fold results lock")[k] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("fold results lock")
        .into_iter()
        .map(|r| r.expect("every fold ran"))
        .collect()
}

/// Aggregated metrics of a set of fold outcomes.
pub fn report(outcomes: &[FoldOutcome]) -> Result<EvalReport> {
    let folds: Vec<FoldMetrics> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    aggregate(&folds)
}

/// Writes `fold_k/checkpoint.m2mil` and `fold_k/trainlog.csv` for each fold.
pub fn write_fold_outputs(
    dir: &Path,
    cfg: &ModelConfig,
    outcomes: &[FoldOutcome],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for o in outcomes {
        let fold_dir = dir.join(format!("fold_{}", o.metrics.fold));
        fs::create_dir_all(&fold_dir).map_err(|e| Error::io(&fold_dir, e))?;
        let ckpt = fold_dir.join("checkpoint.m2mil");
        save_checkpoint(&ckpt, cfg, &o.params)?;
        let log = fold_dir.join("trainlog.csv");
        fs::write(&log, o.log.to_csv()).map_err(|e| Error::io(&log, e))?;
        written.push(fold_dir);
    }
    Ok(written)
}
