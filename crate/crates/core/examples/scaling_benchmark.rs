//! Per-iteration cost stays flat as the sample size grows, since the sampler
//! only sees the d×d sums of squares.

use sufa::likelihood::Executor;
use sufa::pipeline::{benchmark, relative_spread, BenchSettings};

fn main() -> sufa::Result<()> {
    let settings = BenchSettings { d: 30, q: 6, iterations: 200, repeats: 1, ..Default::default() };
    let rows = benchmark(&settings, &Executor::Sequential)?;
    println!("{:>10} {:>10} {:>14} {:>12}", "multiplier", "pooled n", "ms/iteration", "stats ms");
    for r in &rows {
        println!(
            "{:>10} {:>10} {:>14.3} {:>12.3}",
            r.multiplier,
            r.pooled_n,
            1e3 * r.secs_per_iteration,
            1e3 * r.stats_secs
        );
    }
    let t: Vec<f64> = rows.iter().map(|r| r.secs_per_iteration).collect();
    println!("relative spread {:.3}", relative_spread(&t));
    Ok(())
}
