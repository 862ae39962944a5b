//! Builds every activation variant, evaluates the displacement and its
//! spatial Jacobian at one point, and shows that a zeroed output layer gives
//! the identity map.

use pinnreg::geometry::Domain;
use pinnreg::model::{forward, forward_with_jacobian, init_params, Activation, NetworkConfig};

fn main() -> pinnreg::Result<()> {
    let domain = Domain::new([64.0, 64.0, 64.0]);
    let x = [0.1, -0.3, 0.4];
    println!("{:<6} {:>8} {:>28} {:>10}", "kind", "params", "u(X, 0.5) (normalized)", "det F");
    for kind in Activation::ALL {
        let net = NetworkConfig::for_activation(kind, 8, 1.0, 7)?;
        let params = init_params(&net, 1);
        let (_, u) = forward(&net, &params, x, 0.5)?;
        let (_, f) = forward_with_jacobian(&net, &params, &domain, x, 0.5)?;
        let det = pinnreg::geometry::det3(&f);
        println!(
            "{:<6} {:>8} [{:8.4} {:8.4} {:8.4}] {:>10.5}",
            kind.name(),
            net.parameter_count(),
            u[0],
            u[1],
            u[2],
            det
        );
    }

    let net = NetworkConfig::for_activation(Activation::QPSK, 8, 1.0, 7)?;
    let mut params = init_params(&net, 1);
    params.zero_output_layer();
    let (phi, u) = forward(&net, &params, x, 0.9)?;
    println!("\nzeroed output layer: u = {u:?}, phi = {phi:?}");
    Ok(())
}
