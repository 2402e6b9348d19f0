//! Ablation grids: Cartesian sweeps over model axes, plus the fixed
//! 21-cell grid mirroring the published ablation tables.

use serde::Serialize;

use super::experiment::{cross_validate, report, RunConfig};
use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::eval::MetricSummary;
use crate::model::Aggregation;
use crate::seq_transform::OrderingKind;

/// Stride used by the MambaMIL-style reordering variant.
pub const MAMBAMIL_STRIDE: usize = 10;
/// State width standing in for a Mamba-1 backbone.
pub const MAMBA1_PROXY_STATE: usize = 16;

/// One grid cell: a label and the configuration it trains.
#[derive(Clone, Debug, Serialize)]
pub struct AblationCell {
    pub table: String,
    pub variant: String,
    pub backbone: String,
    pub config: RunConfig,
}

/// Values to sweep; an empty axis keeps the base configuration's value.
#[derive(Clone, Debug, Default)]
pub struct AblationAxes {
    pub depth: Vec<usize>,
    pub state: Vec<usize>,
    pub ordering: Vec<Vec<OrderingKind>>,
    pub aggregation: Vec<Aggregation>,
    pub layernorm: Vec<bool>,
    pub wrapping: Vec<bool>,
}

impl AblationAxes {
    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
            && self.state.is_empty()
            && self.ordering.is_empty()
            && self.aggregation.is_empty()
            && self.layernorm.is_empty()
            && self.wrapping.is_empty()
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

pub fn branch_label(branches: &[OrderingKind]) -> String {
    branches
        .iter()
        .map(|k| match k {
            OrderingKind::Original => "original".to_string(),
            OrderingKind::Flipped => "flipped".to_string(),
            OrderingKind::Transposed => "transposed".to_string(),
            OrderingKind::Random { seed } => format!("random:{seed}"),
            OrderingKind::StrideInterleave { stride } => format!("stride:{stride}"),
        })
        .collect::<Vec<_>>()
        .join("+")
}

/// Parses `original+flipped+transposed`; also accepts `random[:seed]` and
/// `stride[:R]`.
pub fn parse_branches(s: &str) -> Result<Vec<OrderingKind>> {
    let bad = |m: String| Error::Config(format!("branch list {s:?}: {m}"));
    let mut out = Vec::new();
    for part in s.split('+').map(str::trim) {
        let (name, arg) = match part.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (part, None),
        };
        let num = |default: u64| -> Result<u64> {
            arg.map_or(Ok(default), |a| {
                a.parse().map_err(|_| bad(format!("bad number {a:?}")))
            })
        };
        let kind = match name {
            "original" | "o" => OrderingKind::Original,
            "flipped" | "flip" | "f" => OrderingKind::Flipped,
            "transposed" | "transpose" | "t" => OrderingKind::Transposed,
            "random" => OrderingKind::Random { seed: num(0)? },
            "stride" => OrderingKind::StrideInterleave {
                stride: num(MAMBAMIL_STRIDE as u64)? as usize,
            },
            other => return Err(bad(format!("unknown ordering {other:?}"))),
        };
        if arg.is_some()
            && !matches!(
                kind,
                OrderingKind::Random { .. } | OrderingKind::StrideInterleave { .. }
            )
        {
            return Err(bad(format!("{name} takes no argument")));
        }
        out.push(kind);
    }
    if out.is_empty() {
        return Err(bad("no branches".into()));
    }
    Ok(out)
}

fn describe(cfg: &RunConfig) -> String {
    let s = &cfg.model.ssd;
    format!(
        "depth={} state={} branches={} aggregation={} layernorm={} wrapping={}",
        s.depth,
        s.state_dim,
        branch_label(&cfg.model.branches),
        aggregation_name(cfg.model.aggregation),
        s.use_layernorm,
        s.use_residual_wrapping
    )
}

pub fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Concatenate => "concatenate",
        Aggregation::Add => "add",
    }
}

/// Cartesian product of the requested axes around `base`.
pub fn grid(base: &RunConfig, axes: &AblationAxes) -> Result<Vec<AblationCell>> {
    if axes.is_empty() {
        return Err(Error::Config(
            "empty ablation grid: give at least one axis or --preset".into(),
        ));
    }
    let ssd = &base.model.ssd;
    let mut cells = Vec::new();
    for depth in axis(&axes.depth, ssd.depth) {
        for state in axis(&axes.state, ssd.state_dim) {
            for branches in axis(&axes.ordering, base.model.branches.clone()) {
                for agg in axis(&axes.aggregation, base.model.aggregation) {
                    for ln in axis(&axes.layernorm, ssd.use_layernorm) {
                        for wrap in axis(&axes.wrapping, ssd.use_residual_wrapping) {
                            let mut cfg = base.clone();
                            cfg.model.ssd.depth = depth;
                            cfg.model.ssd.state_dim = state;
                            cfg.model.branches = branches.clone();
                            cfg.model.aggregation = agg;
                            cfg.model.ssd.use_layernorm = ln;
                            cfg.model.ssd.use_residual_wrapping = wrap;
                            cells.push(AblationCell {
                                table: "grid".into(),
                                variant: describe(&cfg),
                                backbone: "mamba2".into(),
                                config: cfg,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// The published ablation grid rebuilt around `base`: model vs plain
/// backbone (3 cells), depth 1..=3, layer norm and state 64/128, three
/// ordering methods, and the nine branch/aggregation rows.
pub fn published_grid(base: &RunConfig) -> Vec<AblationCell> {
    use OrderingKind::*;
    let mut base = base.clone();
    base.model.branches = vec![Original, Flipped, Transposed];
    base.model.aggregation = Aggregation::Concatenate;
    base.model.ssd.use_layernorm = false;
    base.model.ssd.use_residual_wrapping = false;

    let mut cells = Vec::new();
    let mut push = |table: &str, variant: &str, backbone: &str, edit: &dyn Fn(&mut RunConfig)| {
        let mut cfg = base.clone();
        edit(&mut cfg);
        cells.push(AblationCell {
            table: table.into(),
            variant: variant.into(),
            backbone: backbone.into(),
            config: cfg,
        });
    };

    push("4", "mamba2", "mamba2", &|c| {
        c.model.branches = vec![Original]
    });
    push("4", "mamba2-wrapping", "mamba2", &|c| {
        c.model.branches = vec![Original];
        c.model.ssd.use_residual_wrapping = true;
    });
    push("4", "ours", "mamba2", &|_| {});

    for depth in 1..=3 {
        push("5", &format!("depth={depth}"), "mamba2", &|c| {
            c.model.ssd.depth = depth
        });
    }

    push("6", "ours+ln", "mamba2", &|c| {
        c.model.ssd.use_layernorm = true
    });
    for state in [64, 128] {
        push("6", &format!("state={state}"), "mamba2", &|c| {
            c.model.ssd.state_dim = state
        });
    }

    push("7", "transposed", "mamba2", &|_| {});
    push("7", "mambamil-reorder", "mamba2", &|c| {
        c.model.branches = vec![
            Original,
            Flipped,
            StrideInterleave {
                stride: MAMBAMIL_STRIDE,
            },
        ];
    });
    push("7", "random-order", "mamba2", &|c| {
        c.model.branches = vec![Original, Flipped, Random { seed: c.seed }];
    });

    push("8", "o+f+t concatenate", "mamba2", &|_| {});
    push("8", "o+f+t add", "mamba2", &|c| {
        c.model.aggregation = Aggregation::Add
    });
    push("8", "o+f+t concatenate", "mamba1-proxy", &|c| {
        c.model.ssd.state_dim = MAMBA1_PROXY_STATE
    });
    for (label, branches) in [
        ("o+f", vec![Original, Flipped]),
        ("o+t", vec![Original, Transposed]),
        ("f+t", vec![Flipped, Transposed]),
        ("o", vec![Original]),
        ("f", vec![Flipped]),
        ("t", vec![Transposed]),
    ] {
        push("8", label, "mamba2", &|c| {
            c.model.branches = branches.clone()
        });
    }
    cells
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub test_auc: Option<MetricSummary>,
    pub test_acc: MetricSummary,
    pub val_auc: Option<MetricSummary>,
    pub val_acc: MetricSummary,
}

/// Cross-validates every cell on the same bags.
pub fn run_ablation(bags: &[FeatureBag], cells: &[AblationCell]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        log::info!(
            "ablation cell {}/{}: table {} {}",
            i + 1,
            cells.len(),
            cell.table,
            cell.variant
        );
        let outcomes = cross_validate(bags, &cell.config).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("cell {:?}: {m}", cell.variant)),
            other => other,
        })?;
        let r = report(&outcomes)?;
        rows.push(AblationRow {
            cell: cell.clone(),
            test_auc: r.test_auc,
            test_acc: r.test_acc,
            val_auc: r.val_auc,
            val_acc: r.val_acc,
        });
    }
    Ok(rows)
}

pub const ABLATION_HEADER: [&str; 14] = [
    "table",
    "variant",
    "backbone",
    "branches",
    "aggregation",
    "depth",
    "state",
    "layernorm",
    "wrapping",
    "folds",
    "test_auc",
    "test_acc",
    "val_auc",
    "val_acc",
];

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    w.write_record(ABLATION_HEADER).map_err(fail)?;
    let cell = |m: &Option<MetricSummary>| m.map_or_else(|| "n/a".to_string(), |m| m.to_string());
    for r in rows {
        let cfg = &r.cell.config;
        w.write_record([
            r.cell.table.clone(),
            r.cell.variant.clone(),
            r.cell.backbone.clone(),
            branch_label(&cfg.model.branches),
            aggregation_name(cfg.model.aggregation).to_string(),
            cfg.model.ssd.depth.to_string(),
            cfg.model.ssd.state_dim.to_string(),
            cfg.model.ssd.use_layernorm.to_string(),
            cfg.model.ssd.use_residual_wrapping.to_string(),
            cfg.folds.to_string(),
            cell(&r.test_auc),
            r.test_acc.to_string(),
            cell(&r.val_auc),
            r.val_acc.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::for_data(8, 2)
    }

    #[test]
    fn preset_has_the_published_shape() {
        let cells = published_grid(&base());
        assert_eq!(cells.len(), 21);
        let count = |t: &str| cells.iter().filter(|c| c.table == t).count();
        assert_eq!(
            [count("4"), count("5"), count("6"), count("7"), count("8")],
            [3, 3, 3, 3, 9]
        );
        let depths: Vec<usize> = cells
            .iter()
            .filter(|c| c.table == "5")
            .map(|c| c.config.model.ssd.depth)
            .collect();
        assert_eq!(depths, [1, 2, 3]);
        let t8: Vec<&AblationCell> = cells.iter().filter(|c| c.table == "8").collect();
        assert_eq!(t8[1].config.model.aggregation, Aggregation::Add);
        assert_eq!(t8[2].backbone, "mamba1-proxy");
        assert_eq!(t8[8].config.model.branches, [OrderingKind::Transposed]);
        for c in &cells {
            c.config.validate().unwrap();
        }
    }

    #[test]
    fn grid_is_cartesian_and_keeps_unswept_axes() {
        let axes = AblationAxes {
            depth: vec![1, 2, 3],
            aggregation: vec![Aggregation::Add, Aggregation::Concatenate],
            ..Default::default()
        };
        let cells = grid(&base(), &axes).unwrap();
        assert_eq!(cells.len(), 6);
        assert!(cells
            .iter()
            .all(|c| c.config.model.ssd.state_dim == base().model.ssd.state_dim));
        assert!(matches!(
            grid(&base(), &AblationAxes::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn branch_lists_parse() {
        use OrderingKind::*;
        assert_eq!(
            parse_branches("original+flipped+transposed").unwrap(),
            [Original, Flipped, Transposed]
        );
        assert_eq!(
            parse_branches("o+stride:4").unwrap(),
            [Original, StrideInterleave { stride: 4 }]
        );
        assert_eq!(parse_branches("random:7").unwrap(), [Random { seed: 7 }]);
        assert!(parse_branches("original+sideways").is_err());
        assert!(parse_branches("flipped:3").is_err());
        let label = branch_label(&[Original, Random { seed: 2 }]);
        assert_eq!(
            parse_branches(&label).unwrap(),
            [Original, Random { seed: 2 }]
        );
    }
}
