//! The same selective scan evaluated three ways: the linear recurrence, the
//! quadratic masked-matrix form, and the chunked scan. All agree to rounding.

use mamba2mil::numerics::Matrix;
use mamba2mil::ssd::{
    ssd_chunked_scan, ssd_dual_quadratic, ssd_recurrence, ssd_scan_backward, ScanInputs,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mamba2mil::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (t, p, n) = (96, 8, 16);
    let x = Matrix::random_uniform(t, p, 1.0, &mut rng);
    let a: Vec<f64> = (0..t).map(|_| rng.gen_range(0.8..1.0)).collect();
    let b = Matrix::random_uniform(t, n, 1.0, &mut rng);
    let c = Matrix::random_uniform(t, n, 1.0, &mut rng);
    let inp = || ScanInputs::new(&x, &a, &b, &c);

    let rec = ssd_recurrence(inp()?)?;
    let quad = ssd_dual_quadratic(inp()?)?;
    println!("T={t} P={p} N={n}");
    println!("recurrence vs quadratic: {:.2e}", rec.max_abs_diff(&quad));
    for chunk in [1, 7, 32, t] {
        let y = ssd_chunked_scan(inp()?, chunk)?;
        println!(
            "recurrence vs chunked(Q={chunk:>3}): {:.2e}",
            rec.max_abs_diff(&y)
        );
    }

    // gradients of sum(y) flow back through a checkpointed adjoint scan
    let dy = Matrix::filled(t, p, 1.0);
    let g = ssd_scan_backward(inp()?, &dy, 16)?;
    println!(
        "|dL/dx|max = {:.3}, |dL/da|max = {:.3}",
        g.dx.max_abs(),
        g.da.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    );
    Ok(())
}
