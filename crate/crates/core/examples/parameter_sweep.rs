//! A small (mu, lambda) grid on a 32³ phantom, ranked by mean |J - 1|.
//!
//! Usage: `cargo run --release --example parameter_sweep [iterations]`
//! (default 1500).

use pinnreg::model::NetworkConfig;
use pinnreg::phantom::{generate_sequence, PhantomSpec};
use pinnreg::training::{grid_sweep, TrainConfig};

fn main() -> pinnreg::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let spec = PhantomSpec {
        dims: [32; 3],
        r_in: 7.0,
        r_out: 11.0,
        c_max: 30.0,
        z_range: [4.0, 28.0],
        ..PhantomSpec::default()
    };
    let ph = generate_sequence(&spec)?;
    let base = TrainConfig {
        iterations,
        similarity_batch: 256,
        reg_batch: 128,
        ..TrainConfig::default()
    };
    let grid = [(0.0, 1e5), (5e-6, 1e5), (1e-4, 1e5), (5e-6, 1e3)];
    let rows = grid_sweep(&grid, &NetworkConfig::default(), &ph.sequence, &base)?;
    println!("{:>8} {:>8} {:>10} {:>10}", "mu", "lambda", "|J-1|", "mean DSC");
    for r in rows {
        println!("{:>8.0e} {:>8.0e} {:>10.4} {:>10.4}", r.mu, r.lambda, r.metrics.jac_dev_mean, r.metrics.mean_dice());
    }
    Ok(())
}
