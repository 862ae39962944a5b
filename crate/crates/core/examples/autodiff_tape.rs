//! Reverse-mode gradients on the tape, and a spatial Jacobian carried by
//! tangent values through the same tape.

use pinnreg::autodiff::{spatial_jacobian, Real, Tape};

fn main() -> pinnreg::Result<()> {
    // f(a, b) = sin(a) * b + ln(b)
    let tape = Tape::new();
    let a = tape.var(0.7);
    let b = tape.var(2.0);
    let f = a.sin() * b + b.ln()?;
    let g = tape.backward(f)?;
    println!("f = {:.6}", f.value());
    println!("df/da = {:.6} (cos(a) b = {:.6})", g.wrt(a), 0.7f64.cos() * 2.0);
    println!("df/db = {:.6} (sin(a) + 1/b = {:.6})", g.wrt(b), 0.7f64.sin() + 0.5);

    // phi(X) = (x y, sin z, x + z); its Jacobian entries are tape nodes
    let tape = Tape::new();
    let jac = spatial_jacobian(&tape, [1.0, 2.0, 0.5], |[x, y, z]| Ok([x * y, z.sin(), x + z]))?;
    println!("\nJacobian of (xy, sin z, x + z) at (1, 2, 0.5):");
    for row in &jac {
        println!("  [{:8.4} {:8.4} {:8.4}]", row[0].value(), row[1].value(), row[2].value());
    }
    Ok(())
}
