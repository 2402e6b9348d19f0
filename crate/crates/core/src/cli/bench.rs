//! Timing of the three scan evaluations and their empirical scaling.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::ssd::{ssd_chunked_scan, ssd_dual_quadratic, ssd_recurrence, ScanInputs};

/// Fitted exponent the quadratic form must reach under `--check`.
pub const QUADRATIC_MIN_EXPONENT: f64 = 1.8;
/// Fitted exponent the chunked scan must stay under with `--check`.
pub const CHUNKED_MAX_EXPONENT: f64 = 1.2;
/// All three outputs must agree this closely before anything is timed.
pub const AGREEMENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub lens: Vec<usize>,
    pub reps: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub chunk: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            lens: (8..=13).map(|k| 1 << k).collect(),
            reps: 3,
            channels: 8,
            state_dim: 16,
            chunk: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub len: usize,
    pub max_disagreement: f64,
    /// Best-of-`reps` wall time in seconds.
    pub recurrence: f64,
    pub quadratic: f64,
    pub chunked: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slopes of log time against log length; `None` with
    /// fewer than two distinct lengths.
    pub recurrence_exponent: Option<f64>,
    pub quadratic_exponent: Option<f64>,
    pub chunked_exponent: Option<f64>,
}

fn best_of<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t0 = Instant::now();
        std::hint::black_box(f()?);
        best = best.min(t0.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (pts.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

pub fn run_bench(o: &BenchOptions) -> Result<BenchReport> {
    if o.lens.is_empty() || o.lens.contains(&0) {
        return Err(Error::Config("bench lengths must be >= 1".into()));
    }
    if o.reps == 0 || o.channels == 0 || o.state_dim == 0 || o.chunk == 0 {
        return Err(Error::Config(
            "reps, channels, state and chunk must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mut rows = Vec::new();
    for &len in &o.lens {
        let x = Matrix::random_uniform(len, o.channels, 1.0, &mut rng);
        let a: Vec<f64> = (0..len).map(|_| rng.gen_range(0.8..=1.0)).collect();
        let b = Matrix::random_uniform(len, o.state_dim, 1.0, &mut rng);
        let c = Matrix::random_uniform(len, o.state_dim, 1.0, &mut rng);
        let inp = || ScanInputs::new(&x, &a, &b, &c);

        let rec = ssd_recurrence(inp()?)?;
        let quad = ssd_dual_quadratic(inp()?)?;
        let chunked = ssd_chunked_scan(inp()?, o.chunk)?;
        let disagreement = rec.max_abs_diff(&quad).max(rec.max_abs_diff(&chunked));
        if !(disagreement < AGREEMENT_TOL) {
            return Err(Error::Numeric(format!(
                "scan paths disagree by {disagreement:.3e} at length {len}; refusing to time them"
            )));
        }
        rows.push(BenchRow {
            len,
            max_disagreement: disagreement,
            recurrence: best_of(o.reps, || ssd_recurrence(inp()?))?,
            quadratic: best_of(o.reps, || ssd_dual_quadratic(inp()?))?,
            chunked: best_of(o.reps, || ssd_chunked_scan(inp()?, o.chunk))?,
        });
        log::info!("bench length {len} done");
    }
    let slope = |f: fn(&BenchRow) -> f64| {
        loglog_slope(
            &rows
                .iter()
                .map(|r| (r.len as f64, f(r)))
                .collect::<Vec<_>>(),
        )
    };
    Ok(BenchReport {
        recurrence_exponent: slope(|r| r.recurrence),
        quadratic_exponent: slope(|r| r.quadratic),
        chunked_exponent: slope(|r| r.chunked),
        rows,
    })
}

impl BenchReport {
    /// Problems with the scaling exponents; empty when both bounds hold.
    pub fn scaling_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.quadratic_exponent {
            Some(e) if e >= QUADRATIC_MIN_EXPONENT => {}
            Some(e) => out.push(format!(
                "quadratic exponent {e:.3} < {QUADRATIC_MIN_EXPONENT}"
            )),
            None => out.push("quadratic exponent needs two or more lengths".into()),
        }
        match self.chunked_exponent {
            Some(e) if e <= CHUNKED_MAX_EXPONENT => {}
            Some(e) => out.push(format!("chunked exponent {e:.3} > {CHUNKED_MAX_EXPONENT}")),
            None => out.push("chunked exponent needs two or more lengths".into()),
        }
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>7}  {:>12}  {:>12}  {:>12}  {:>10}  {:>10}  {:>10}  {:>9}",
            "L",
            "recur ms",
            "quad ms",
            "chunk ms",
            "recur ns/L",
            "quad ns/L",
            "chunk ns/L",
            "agree"
        );
        for r in &self.rows {
            let per = |t: f64| t * 1e9 / r.len as f64;
            let _ = writeln!(
                s,
                "{:>7}  {:>12.3}  {:>12.3}  {:>12.3}  {:>10.1}  {:>10.1}  {:>10.1}  {:>9.1e}",
                r.len,
                r.recurrence * 1e3,
                r.quadratic * 1e3,
                r.chunked * 1e3,
                per(r.recurrence),
                per(r.quadratic),
                per(r.chunked),
                r.max_disagreement
            );
        }
        let fmt = |e: Option<f64>| e.map_or_else(|| "n/a".to_string(), |e| format!("{e:.3}"));
        let _ = writeln!(
            s,
            "scaling exponents: recurrence {}, quadratic {}, chunked {}",
            fmt(self.recurrence_exponent),
            fmt(self.quadratic_exponent),
            fmt(self.chunked_exponent)
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_recovers_power_laws() {
        let pts: Vec<(f64, f64)> = [256.0, 512.0, 1024.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(1.7)))
            .collect();
        assert!((loglog_slope(&pts).unwrap() - 1.7).abs() < 1e-12);
        assert_eq!(loglog_slope(&pts[..1]), None);
        assert_eq!(loglog_slope(&[(4.0, 1.0), (4.0, 2.0)]), None);
    }

    #[test]
    fn single_step_bench_runs() {
        let r = run_bench(&BenchOptions {
            lens: vec![1],
            reps: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.quadratic_exponent.is_none());
        assert_eq!(r.scaling_failures().len(), 2);
    }

    #[test]
    fn rejects_empty_lengths() {
        assert!(run_bench(&BenchOptions {
            lens: vec![],
            ..Default::default()
        })
        .is_err());
    }
}
