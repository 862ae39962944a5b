//! The neo-Hookean energy on a few deformation gradients: identity, an
//! isochoric shear, a uniform dilation and an inverted element.

use pinnreg::mechanics::{deformation_state, energy_and_gradient, neo_hookean_energy, MaterialParams};

fn main() -> pinnreg::Result<()> {
    let mat = MaterialParams::new(1e5)?;
    let cases = [
        ("identity", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        ("shear 0.1", [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        ("dilate 1%", [[1.01, 0.0, 0.0], [0.0, 1.01, 0.0], [0.0, 0.0, 1.01]]),
        ("reflect x", [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    ];
    for (name, f) in cases {
        let state = deformation_state(f);
        let (w, dw, inverted) = energy_and_gradient(&f, &mat);
        let max_grad = dw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        print!("{name:<10} J = {:7.4}  W = {w:12.6}  max|dW/dF| = {max_grad:10.4}", state.j);
        match neo_hookean_energy(&state, &mat, Some([1.0, 2.0, 3.0])) {
            Ok(_) => println!(),
            Err(e) => println!("  ({e}; penalty used: {inverted})"),
        }
    }
    Ok(())
}
