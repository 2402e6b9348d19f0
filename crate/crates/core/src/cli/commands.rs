use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::ablate::{
    ablation_csv, branch_label, grid, parse_branches, published_grid, run_ablation, AblationAxes,
};
use super::bench::{run_bench, BenchOptions};
use super::experiment::{
    cross_validate, read_run_config, report, write_fold_outputs, RunConfig, RunManifest,
};
use super::verify::{run_verify, VerifyOptions};
use super::{
    AblateArgs, BenchArgs, GenDataArgs, Imbalance, ModelFlags, SelectionArg, TrainArgs, TrainFlags,
    VerifyArgs, EXIT_FAILURE, EXIT_OK,
};
use crate::data::{
    class_counts, dataset_digest, generate_synthetic, load_bags, save_bags, FeatureBag,
    SyntheticSpec, BRACS_SUBTYPE_COUNTS,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SelectionMode};

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

/// Refuses to write into a non-empty directory unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let occupied = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl ModelFlags {
    /// Overrides `cfg` with every flag that was given.
    pub fn apply(&self, cfg: &mut ModelConfig) -> Result<()> {
        if let Some(r) = self.reduced_dim {
            if r != cfg.reduced_dim {
                let fresh = ModelConfig::with_dims(cfg.input_dim, r, cfg.num_classes);
                cfg.reduced_dim = r;
                cfg.ssd.heads = fresh.ssd.heads;
                cfg.ssd.head_dim = fresh.ssd.head_dim;
                cfg.selection_hidden = fresh.selection_hidden;
                cfg.mlp_hidden = fresh.mlp_hidden;
            }
        }
        match (self.heads, self.head_dim) {
            (Some(h), Some(p)) => (cfg.ssd.heads, cfg.ssd.head_dim) = (h, p),
            (Some(h), None) if h > 0 => {
                (cfg.ssd.heads, cfg.ssd.head_dim) = (h, cfg.reduced_dim / h)
            }
            (None, Some(p)) if p > 0 => {
                (cfg.ssd.heads, cfg.ssd.head_dim) = (cfg.reduced_dim / p, p)
            }
            (None, None) => {}
            _ => return Err(Error::Config("heads and head_dim must be >= 1".into())),
        }
        let ssd = &mut cfg.ssd;
        ssd.depth = self.depth.unwrap_or(ssd.depth);
        ssd.state_dim = self.state.unwrap_or(ssd.state_dim);
        ssd.conv_kernel = self.conv_kernel.unwrap_or(ssd.conv_kernel);
        ssd.scan_chunk = self.scan_chunk.unwrap_or(ssd.scan_chunk);
        ssd.use_layernorm |= self.layernorm;
        ssd.use_residual_wrapping |= self.wrapping;
        if self.ungated {
            ssd.gated = false;
        }
        if let Some(b) = &self.branches {
            cfg.branches = parse_branches(b)?;
        }
        if let Some(a) = self.aggregation {
            cfg.aggregation = a.into();
        }
        if let Some(s) = self.selection {
            cfg.selection = match s {
                SelectionArg::PerPosition => SelectionMode::PerPosition,
                SelectionArg::PerChannel => SelectionMode::PerChannel,
            };
        }
        if self.no_realign {
            cfg.realign = false;
        }
        cfg.share_branch_params |= self.share_branch_params;
        cfg.selection_hidden = self.selection_hidden.unwrap_or(cfg.selection_hidden);
        cfg.mlp_hidden = self.mlp_hidden.unwrap_or(cfg.mlp_hidden);
        Ok(())
    }
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        t.max_epochs = self.epochs.unwrap_or(t.max_epochs);
        t.lr = self.lr.unwrap_or(t.lr);
        t.patience = self.patience.unwrap_or(t.patience);
        t.grad_clip = self.grad_clip.or(t.grad_clip);
        t.record_time |= self.timing;
        cfg.folds = self.folds.unwrap_or(cfg.folds);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
    }
}

/// Flags over config file over defaults, checked against the data.
pub fn resolve_config(
    config: Option<&Path>,
    bags: &[FeatureBag],
    model: &ModelFlags,
    train: &TrainFlags,
) -> Result<RunConfig> {
    let dim = bags.first().map_or(0, FeatureBag::dim);
    let classes = bags.iter().map(|b| b.label + 1).max().unwrap_or(2).max(2);
    let mut cfg = match config {
        Some(path) => read_run_config(path)?,
        None => RunConfig::for_data(dim, classes),
    };
    if cfg.model.input_dim != dim {
        return Err(Error::Config(format!(
            "config expects input width {}, data has {dim}",
            cfg.model.input_dim
        )));
    }
    model.apply(&mut cfg.model)?;
    train.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let class_weights = match a.imbalance {
        Imbalance::None => None,
        Imbalance::Bracs if a.classes == BRACS_SUBTYPE_COUNTS.len() => {
            Some(BRACS_SUBTYPE_COUNTS.iter().map(|&c| c as f64).collect())
        }
        Imbalance::Bracs => {
            return Err(Error::Config("--imbalance bracs needs --classes 7".into()))
        }
    };
    let spec = SyntheticSpec {
        num_bags: a.bags,
        classes: a.classes,
        dim: a.dim,
        min_size: a.min_size,
        max_size: a.max_size,
        positive_rate: a.positive_rate,
        noise: a.noise,
        seed: a.seed,
        class_weights,
    };
    spec.validate()?;
    prepare_out(&a.out, a.force)?;
    let bags = generate_synthetic(&spec)?;
    let manifest = save_bags(&bags, &a.out)?;

    #[derive(Serialize)]
    struct DatasetInfo<'a> {
        spec: &'a SyntheticSpec,
        manifest: &'a str,
        input_hash: String,
    }
    let info = DatasetInfo {
        spec: &spec,
        manifest: "manifest.csv",
        input_hash: dataset_digest(&manifest)?,
    };
    write_file(&a.out.join("dataset.json"), to_json(&info))?;

    say(
        out,
        format_args!("wrote {} bags to {}", bags.len(), a.out.display()),
    )?;
    for (c, n) in class_counts(&bags).iter().enumerate() {
        say(out, format_args!("  class {c}: {n}"))?;
    }
    Ok(EXIT_OK)
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let bags = load_bags(&a.data)?;
    let cfg = resolve_config(a.config.as_deref(), &bags, &a.model, &a.train)?;
    prepare_out(&a.out, a.force)?;
    let outcomes = cross_validate(&bags, &cfg)?;
    write_fold_outputs(&a.out, &cfg.model, &outcomes)?;
    let rep = report(&outcomes)?;
    write_file(&a.out.join("report.csv"), rep.to_csv())?;
    let manifest = RunManifest::new("train", &cfg, &a.data, dataset_digest(&a.data)?, &a.out);
    write_file(&a.out.join("run.json"), to_json(&manifest))?;
    let method = format!("mamba2mil[{}]", branch_label(&cfg.model.branches));
    write!(out, "{}", rep.to_table(&method)).map_err(|e| Error::io("<stdout>", e))?;
    Ok(EXIT_OK)
}

pub fn ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<i32> {
    let (bags, data_label, input_hash) = match &a.data {
        Some(path) => (
            load_bags(path)?,
            path.display().to_string(),
            dataset_digest(path)?,
        ),
        None => {
            let spec = SyntheticSpec {
                num_bags: a.bags,
                dim: a.dim,
                min_size: a.min_size,
                max_size: a.max_size,
                seed: a.data_seed,
                ..SyntheticSpec::default()
            };
            let hash: String = Sha256::digest(to_json(&spec))
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect();
            (
                generate_synthetic(&spec)?,
                "synthetic".to_string(),
                format!("sha256:{hash}"),
            )
        }
    };
    let base = resolve_config(a.config.as_deref(), &bags, &a.base_flags(), &a.train)?;
    let axes = AblationAxes {
        depth: a.depth.clone(),
        state: a.state.clone(),
        ordering: a
            .ordering
            .iter()
            .map(|s| parse_branches(s))
            .collect::<Result<_>>()?,
        aggregation: a.aggregation.iter().map(|&g| g.into()).collect(),
        layernorm: a.layernorm.clone(),
        wrapping: a.wrapping.clone(),
    };
    let cells = match a.preset.as_deref() {
        Some(_) if !axes.is_empty() => {
            return Err(Error::Config(
                "--preset cannot be combined with axis flags".into(),
            ));
        }
        Some(_) => published_grid(&base),
        None => grid(&base, &axes)?,
    };
    prepare_out(&a.out, a.force)?;
    let rows = run_ablation(&bags, &cells)?;
    let csv = ablation_csv(&rows)?;
    write_file(&a.out.join("ablation.csv"), &csv)?;

    #[derive(Serialize)]
    struct AblationManifest<'a> {
        manifest: RunManifest,
        cells: Vec<&'a super::AblationCell>,
    }
    let manifest = AblationManifest {
        manifest: RunManifest::new("ablate", &base, Path::new(&data_label), input_hash, &a.out),
        cells: cells.iter().collect(),
    };
    write_file(&a.out.join("run.json"), to_json(&manifest))?;
    write!(out, "{csv}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(EXIT_OK)
}

pub fn verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let report = run_verify(&VerifyOptions {
        tolerance: a.tolerance,
        only: a.only.clone(),
        len: a.len,
        chunks: a.chunks.clone(),
        instances: a.instances,
        seed: a.seed,
    })?;
    write!(out, "{}", report.render()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

pub fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let defaults = BenchOptions::default();
    let report = run_bench(&BenchOptions {
        lens: if a.len.is_empty() {
            defaults.lens.clone()
        } else {
            a.len.clone()
        },
        reps: a.reps,
        chunk: a.chunk,
        seed: a.seed,
        ..defaults
    })?;
    write!(out, "{}", report.render()).map_err(|e| Error::io("<stdout>", e))?;
    if a.check {
        let failures = report.scaling_failures();
        for f in &failures {
            say(out, format_args!("FAIL {f}"))?;
        }
        if !failures.is_empty() {
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}
