//! Registers the default 64³ phantom with the Tanh network and reports the
//! evaluation against the identity map.
//!
//! Usage: `cargo run --release --example register_phantom [iterations]`
//! (default 2000; the full budget is 20000).

use pinnreg::geometry::AffineField;
use pinnreg::metrics::{evaluate, MetricsRecord};
use pinnreg::model::{DeformationModel, NetworkConfig};
use pinnreg::phantom::{generate_sequence, PhantomSpec};
use pinnreg::training::{train_with, TrainConfig};

fn report(name: &str, m: &MetricsRecord) {
    let dsc: Vec<String> = m.slices.iter().map(|s| format!("{}={:.3}", s.level, s.dsc)).collect();
    println!(
        "{name:<9} DSC {}  |J-1| {:.4}  landmark error {:.3} mm",
        dsc.join(" "),
        m.jac_dev_mean,
        m.mean_landmark_error().unwrap_or(f64::NAN)
    );
}

fn main() -> pinnreg::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ph = generate_sequence(&PhantomSpec::default())?;
    let seq = &ph.sequence;
    let net = NetworkConfig::default();
    let config = TrainConfig {
        iterations,
        similarity_batch: 512,
        reg_batch: 256,
        log_every: 500,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (params, _) = train_with(&net, seq, &config, |_, e| {
        println!(
            "iteration {:>6}: similarity {:.5}, energy {:9.3}",
            e.iteration, e.similarity, e.regularization
        );
        Ok(())
    })?;
    println!("trained in {:.1} s\n", start.elapsed().as_secs_f64());

    let last = seq.len() - 1;
    report("identity", &evaluate(&AffineField::identity(), seq, last)?);
    let model = DeformationModel::new(net, params, seq.domain())?;
    report("network", &evaluate(&model, seq, last)?);
    Ok(())
}
