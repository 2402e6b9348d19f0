//! Wall-time scaling of the quadratic and chunked scans. Pass lengths as
//! arguments, e.g. `cargo run --release --example bench_scaling 256 1024 4096`.

use mamba2mil::cli::{run_bench, BenchOptions};

fn main() -> mamba2mil::Result<()> {
    let lens: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let opts = BenchOptions {
        lens: if lens.is_empty() {
            vec![128, 256, 512, 1024]
        } else {
            lens
        },
        ..BenchOptions::default()
    };
    let report = run_bench(&opts)?;
    print!("{}", report.render());
    Ok(())
}
