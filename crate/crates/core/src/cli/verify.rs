//! Self-verification: every numerical contract checked against an
//! independent oracle.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{roc_auc_binary, roc_auc_multiclass};
use crate::model::{read_checkpoint, write_checkpoint, ModelConfig, ModelParams};
use crate::numerics::{central_difference, Matrix};
use crate::seq_transform::{ceil_sqrt, inverse_reorder, reorder_rows, square, OrderingKind};
use crate::ssd::{ssd_chunked_scan, ssd_dual_quadratic, ssd_recurrence, ScanInputs};
use crate::training::{cross_entropy, gradcheck_params, gradient_check, tensor_relative_error};

/// Names accepted by `--only`, in run order.
pub const CHECKS: [&str; 10] = [
    "duality",
    "chunked",
    "causality",
    "decay",
    "transforms",
    "squaring",
    "gradcheck",
    "loss",
    "auc",
    "checkpoint",
];

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Overrides every numeric tolerance when set.
    pub tolerance: Option<f64>,
    pub only: Vec<String>,
    pub len: usize,
    /// Chunk sizes for the chunked-scan check; empty means `{1, 3, 8, T}`.
    pub chunks: Vec<usize>,
    pub instances: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tolerance: None,
            only: Vec::new(),
            len: 64,
            chunks: Vec::new(),
            instances: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed error for numeric checks.
    pub max_error: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

/// One line of the coverage checklist: an invariant and the check that
/// exercises it.
const COVERAGE: [(&str, &str); 15] = [
    ("recurrence matches unrolled double sum", "duality"),
    ("quadratic dual form matches recurrence", "duality"),
    (
        "chunked scan matches recurrence for every chunk size",
        "duality",
    ),
    (
        "chunked scan at fixed length, including chunk = T",
        "chunked",
    ),
    ("outputs are causal", "causality"),
    ("impulse response decays by the product of A", "decay"),
    ("flip and transpose are involutions", "transforms"),
    (
        "orderings are permutations (multiset preserved)",
        "transforms",
    ),
    ("inverse_reorder undoes reorder", "transforms"),
    ("squared length and cyclic padding", "squaring"),
    ("model gradients match finite differences", "gradcheck"),
    ("cross-entropy gradient matches finite differences", "loss"),
    ("AUC matches pairwise counting, ties count one half", "auc"),
    ("AUC complement symmetry and monotone invariance", "auc"),
    ("checkpoint round trip is bit-exact", "checkpoint"),
];

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let err = match (c.max_error, c.tolerance) {
                (Some(e), Some(t)) => format!(" (max error {e:.3e}, tolerance {t:.1e})"),
                _ => String::new(),
            };
            let _ = writeln!(out, "{status} {:<11}{err} {}", c.name, c.detail);
        }
        out.push_str("\ncoverage:\n");
        for (what, check) in COVERAGE {
            let mark = match self.checks.iter().find(|c| c.name == check) {
                Some(c) if c.passed => "[x]",
                Some(_) => "[!]",
                None => "[ ]",
            };
            let _ = writeln!(out, "  {mark} {what}  ({check})");
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "\n{passed}/{} checks passed", self.checks.len());
        out
    }
}

fn numeric(name: &'static str, err: f64, tol: f64, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: err < tol,
        max_error: Some(err),
        tolerance: Some(tol),
        detail,
    }
}

fn exact(name: &'static str, ok: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: ok,
        max_error: None,
        tolerance: None,
        detail,
    }
}

struct ScanCase {
    x: Matrix,
    a: Vec<f64>,
    b: Matrix,
    c: Matrix,
}

impl ScanCase {
    fn random(rng: &mut ChaCha8Rng, t: usize) -> Self {
        let p = rng.gen_range(1..=16);
        let n = rng.gen_range(1..=64);
        ScanCase {
            x: Matrix::random_uniform(t, p, 1.0, rng),
            a: (0..t).map(|_| rng.gen_range(0.0..=1.0)).collect(),
            b: Matrix::random_uniform(t, n, 1.0, rng),
            c: Matrix::random_uniform(t, n, 1.0, rng),
        }
    }

    fn inputs(&self) -> Result<ScanInputs<'_>> {
        ScanInputs::new(&self.x, &self.a, &self.b, &self.c)
    }
}

/// `y_t = Σ_{j≤t} (C_t·B_j)(∏_{k=j+1..t} a_k) x_j`, straight from the sum.
fn unrolled(case: &ScanCase) -> Matrix {
    let (t_len, p) = case.x.shape();
    let mut y = Matrix::zeros(t_len, p);
    for t in 0..t_len {
        for j in 0..=t {
            let decay: f64 = case.a[j + 1..=t].iter().product();
            let cb: f64 = case
                .c
                .row(t)
                .iter()
                .zip(case.b.row(j))
                .map(|(u, v)| u * v)
                .sum();
            for q in 0..p {
                y[(t, q)] += cb * decay * case.x[(j, q)];
            }
        }
    }
    y
}

fn chunk_sizes(o: &VerifyOptions, t: usize) -> Result<Vec<usize>> {
    if o.chunks.contains(&0) {
        return Err(Error::Config("chunk sizes must be >= 1".into()));
    }
    Ok(if o.chunks.is_empty() {
        vec![1, 3, 8, t]
    } else {
        o.chunks.clone()
    })
}

/// Recurrence, unrolled sum, quadratic form and chunked scan on random
/// instances of random length.
fn check_duality(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-8);
    let mut worst: f64 = 0.0;
    for _ in 0..o.instances {
        let t = rng.gen_range(1..=o.len.max(1));
        let case = ScanCase::random(rng, t);
        let rec = ssd_recurrence(case.inputs()?)?;
        let dual = ssd_dual_quadratic(case.inputs()?)?;
        worst = worst
            .max(rec.max_abs_diff(&unrolled(&case)))
            .max(rec.max_abs_diff(&dual));
        for q in chunk_sizes(o, t)? {
            worst = worst.max(rec.max_abs_diff(&ssd_chunked_scan(case.inputs()?, q)?));
        }
    }
    Ok(numeric(
        "duality",
        worst,
        tol,
        format!("{} instances, T ≤ {}", o.instances, o.len),
    ))
}

fn check_chunked(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-10);
    let t = o.len.max(1);
    let chunks = chunk_sizes(o, t)?;
    let mut worst: f64 = 0.0;
    for _ in 0..o.instances.div_ceil(5) {
        let case = ScanCase::random(rng, t);
        let rec = ssd_recurrence(case.inputs()?)?;
        for &q in &chunks {
            worst = worst.max(rec.max_abs_diff(&ssd_chunked_scan(case.inputs()?, q)?));
        }
    }
    Ok(numeric(
        "chunked",
        worst,
        tol,
        format!("T = {t}, chunks {chunks:?}"),
    ))
}

fn check_causality(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let t = o.len.max(2);
    let mut ok = true;
    for _ in 0..5 {
        let case = ScanCase::random(rng, t);
        let cut = rng.gen_range(0..t - 1);
        let mut later = ScanCase {
            x: case.x.clone(),
            a: case.a.clone(),
            b: case.b.clone(),
            c: case.c.clone(),
        };
        for r in cut + 1..t {
            later.x.row_mut(r).iter_mut().for_each(|v| *v = -*v + 0.5);
            later.b.row_mut(r).iter_mut().for_each(|v| *v *= 0.3);
            later.c.row_mut(r).iter_mut().for_each(|v| *v += 1.0);
        }
        let y0 = ssd_chunked_scan(case.inputs()?, 8)?;
        let y1 = ssd_chunked_scan(later.inputs()?, 8)?;
        ok &= (0..=cut).all(|r| y0.row(r) == y1.row(r));
    }
    Ok(exact(
        "causality",
        ok,
        "future inputs never change past outputs".into(),
    ))
}

fn check_decay(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-12);
    let t = o.len.max(1);
    let a: Vec<f64> = (0..t).map(|_| rng.gen_range(0.5..=1.0)).collect();
    let mut x = Matrix::zeros(t, 1);
    x[(0, 0)] = 1.0;
    let ones = Matrix::filled(t, 1, 1.0);
    let y = ssd_recurrence(ScanInputs::new(&x, &a, &ones, &ones)?)?;
    let mut worst: f64 = 0.0;
    let mut expected = 1.0;
    let mut monotone = true;
    for s in 0..t {
        if s > 0 {
            expected *= a[s];
            monotone &= y[(s, 0)] <= y[(s - 1, 0)];
        }
        worst = worst.max((y[(s, 0)] - expected).abs());
    }
    let mut out = numeric(
        "decay",
        worst,
        tol,
        format!("impulse over T = {t}, non-increasing: {monotone}"),
    );
    out.passed &= monotone;
    Ok(out)
}

fn check_transforms(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut sizes = vec![1, 2, 3, 4, 5, 46, 2587];
    sizes.extend((0..o.instances).map(|_| rng.gen_range(1..400)));
    let mut ok = true;
    for &n in &sizes {
        let bag = Matrix::random_uniform(n, 2, 1.0, rng);
        let sq = square(&bag)?;
        let kinds = [
            OrderingKind::Original,
            OrderingKind::Flipped,
            OrderingKind::Transposed,
            OrderingKind::Random { seed: rng.gen() },
            OrderingKind::StrideInterleave {
                stride: rng.gen_range(1..12),
            },
        ];
        for kind in kinds {
            let moved = reorder_rows(&sq.data, kind)?;
            ok &= inverse_reorder(&moved, kind)? == sq.data;
            let mut perm = kind.permutation(sq.len())?;
            perm.sort_unstable();
            ok &= perm.iter().enumerate().all(|(i, &p)| i == p);
        }
        for kind in [OrderingKind::Flipped, OrderingKind::Transposed] {
            ok &= reorder_rows(&reorder_rows(&sq.data, kind)?, kind)? == sq.data;
        }
    }
    Ok(exact(
        "transforms",
        ok,
        format!("{} sequences, 5 orderings each", sizes.len()),
    ))
}

fn check_squaring(_: &VerifyOptions, _: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut ok = true;
    for n in 1..=2000usize {
        let side = (1..).find(|s| s * s >= n).expect("some side fits");
        ok &= ceil_sqrt(n) == side;
        let bag = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect())?;
        let sq = square(&bag)?;
        ok &= sq.len() == side * side && sq.original_len == n && sq.pad_len == side * side - n;
        ok &= (0..sq.len()).all(|r| sq.data[(r, 0)] == (r % n) as f64);
    }
    Ok(exact("squaring", ok, "N = 1..=2000".into()))
}

fn check_gradcheck(o: &VerifyOptions, _: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-5);
    let cfg = ModelConfig::tiny();
    let params = gradcheck_params(&cfg, o.seed)?;
    let report = gradient_check(&cfg, &params, 3, tol, o.seed.wrapping_add(1))?;
    let failing: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    let detail = if failing.is_empty() {
        format!("{} tensors", report.tensors.len())
    } else {
        format!(
            "{} of {} tensors fail: {}",
            failing.len(),
            report.tensors.len(),
            failing.join(", ")
        )
    };
    let mut out = numeric("gradcheck", report.worst(), tol, detail);
    out.passed = report.passed();
    Ok(out)
}

fn check_loss(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c = rng.gen_range(2..8);
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..c);
        let (_, grad) = cross_entropy(&logits, label)?;
        let num = central_difference(&Matrix::row_vector(&logits), 1e-5, |m| {
            cross_entropy(m.as_slice(), label).map_or(f64::NAN, |r| r.0)
        });
        worst = worst.max(tensor_relative_error(&Matrix::row_vector(&grad), &num));
    }
    Ok(numeric(
        "loss",
        worst,
        tol,
        "20 random logit vectors".into(),
    ))
}

fn pairwise_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
    }
    num / den
}

fn check_auc(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let tol = o.tolerance.unwrap_or(1e-12);
    let mut worst: f64 = 0.0;
    let mut symmetric = true;
    for _ in 0..o.instances.max(1) * 4 {
        let n = rng.gen_range(2..=50);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
        let auc = roc_auc_binary(&scores, &labels)?;
        worst = worst.max((auc - pairwise_auc(&scores, &labels)).abs());
        let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        symmetric &= auc + roc_auc_binary(&scores, &flipped)? == 1.0;
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        symmetric &= roc_auc_binary(&exp, &labels)? == auc;
    }
    // macro one-vs-rest against per-class pairwise counts
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let probas = Matrix::random_uniform(12, 3, 1.0, rng);
    let per_class: f64 = (0..3)
        .map(|c| {
            let s: Vec<f64> = probas.iter_rows().map(|r| r[c]).collect();
            let y: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
            pairwise_auc(&s, &y)
        })
        .sum::<f64>()
        / 3.0;
    worst = worst.max((roc_auc_multiclass(&probas, &labels)? - per_class).abs());
    let mut out = numeric(
        "auc",
        worst,
        tol,
        format!("pairwise oracle; symmetry and monotone invariance: {symmetric}"),
    );
    out.passed &= symmetric;
    Ok(out)
}

fn check_checkpoint(o: &VerifyOptions, rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, rng)?;
    let bytes = write_checkpoint(&cfg, &params)?;
    let (cfg2, params2) = read_checkpoint(&bytes, Path::new("<memory>"))?;
    let again = write_checkpoint(&cfg2, &params2)?;
    let _ = o;
    Ok(exact(
        "checkpoint",
        cfg2 == cfg && params2 == params && again == bytes,
        format!("{} bytes", bytes.len()),
    ))
}

type CheckFn = fn(&VerifyOptions, &mut ChaCha8Rng) -> Result<CheckOutcome>;

fn check_fn(name: &str) -> Option<CheckFn> {
    Some(match name {
        "duality" => check_duality,
        "chunked" => check_chunked,
        "causality" => check_causality,
        "decay" => check_decay,
        "transforms" => check_transforms,
        "squaring" => check_squaring,
        "gradcheck" => check_gradcheck,
        "loss" => check_loss,
        "auc" => check_auc,
        "checkpoint" => check_checkpoint,
        _ => return None,
    })
}

/// Runs the selected checks (all when `only` is empty). Check failures are
/// report entries; errors mean the options themselves were unusable.
pub fn run_verify(o: &VerifyOptions) -> Result<VerifyReport> {
    if let Some(bad) = o.only.iter().find(|n| check_fn(n).is_none()) {
        return Err(Error::Config(format!(
            "unknown check {bad:?}; known: {}",
            CHECKS.join(", ")
        )));
    }
    if o.tolerance.is_some_and(|t| !(t >= 0.0)) {
        return Err(Error::Config("tolerance must be >= 0".into()));
    }
    let mut checks = Vec::new();
    for (i, name) in CHECKS.iter().enumerate() {
        if !o.only.is_empty() && !o.only.iter().any(|n| n == name) {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed.wrapping_add(i as u64));
        let f = check_fn(name).expect("listed check");
        checks.push(f(o, &mut rng)?);
    }
    Ok(VerifyReport { checks })
}
