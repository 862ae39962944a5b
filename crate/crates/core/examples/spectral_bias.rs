//! Fits Tanh, SIREN and Fourier-feature SIREN networks to a phantom whose
//! only motion is a divergence-free in-plane swirl at 8 cycles per domain,
//! then compares residual energy per frequency band.
//!
//! Usage: `cargo run --release --example spectral_bias [iterations]`
//! (default 3000).

use pinnreg::model::{Activation, NetworkConfig};
use pinnreg::phantom::{generate_sequence, PhantomSpec};
use pinnreg::training::{spectral_experiment, TrainConfig};

fn main() -> pinnreg::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let spec = PhantomSpec {
        c_max: 0.0,
        twist: 0.0,
        a_hf: 0.5,
        k_hf: 8.0,
        ..PhantomSpec::default()
    };
    let ph = generate_sequence(&spec)?;
    let variants = [Activation::Tanh, Activation::Siren, Activation::FFSiren]
        .into_iter()
        .map(|kind| {
            let mut net = NetworkConfig::for_activation(kind, 8, 1.0, 0)?;
            net.hidden_width = 32;
            Ok(net)
        })
        .collect::<pinnreg::Result<Vec<_>>>()?;
    let config = TrainConfig {
        iterations,
        mu: 0.0,
        learning_rate: 1e-4,
        similarity_batch: 1024,
        ..TrainConfig::default()
    };
    let edges = [0.0, 2.0, 4.0, 8.0];
    let report = spectral_experiment(&variants, &ph.sequence, &ph.field, &config, &edges)?;
    println!("residual energy (mm² summed over voxels) per band [cycles/domain]");
    print!("{:<7}", "");
    for (b, lo) in edges.iter().enumerate() {
        let hi = edges.get(b + 1).map_or("Nyq".to_string(), |h| h.to_string());
        print!("{:>14}", format!("[{lo}, {hi})"));
    }
    println!();
    for (name, energies) in &report.variants {
        print!("{name:<7}");
        for e in energies {
            print!("{e:>14.1}");
        }
        println!();
    }
    Ok(())
}
