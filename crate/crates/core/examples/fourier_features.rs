//! Fourier feature encoding and the modulation state derived from it.

use pinnreg::encoding::{modulation_params, FourierEncoder};

fn main() -> pinnreg::Result<()> {
    let enc = FourierEncoder::new(8, 1.0, 42)?;
    println!("B ({} x 3), sigma = {}:", enc.features(), enc.sigma());
    for row in enc.matrix() {
        println!("  [{:7.4} {:7.4} {:7.4}]", row[0], row[1], row[2]);
    }

    let x = [0.25, -0.5, 0.75];
    let (gamma, state) = enc.encode_with_modulation(&x);
    println!("\ngamma(X) has {} entries: cosines then sines", gamma.len());
    println!("E = {:.4}, alpha = {:.4}, phase = {:.4}", state.energy, state.alpha, state.phase);

    // closed form: two projections 0 and pi/2 give E = 2 and phase pi/4
    let s = modulation_params(&[0.0, std::f64::consts::FRAC_PI_2]);
    println!("\nBX = (0, pi/2): E = {:.4}, phase = {:.6} (pi/4 = {:.6})", s.energy, s.phase, std::f64::consts::FRAC_PI_4);
    Ok(())
}
