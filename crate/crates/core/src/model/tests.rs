use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::IDENTITY;

fn config(kind: Activation) -> NetworkConfig {
    let mut c = NetworkConfig::for_activation(kind, 8, 1.0, 11).unwrap();
    c.hidden_layers = 3;
    c.hidden_width = 16;
    c
}

/// Random parameters large enough that every activation is far from linear.
fn random_params(c: &NetworkConfig, seed: u64) -> Parameters {
    let mut p = init_params(c, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.05..0.05);
    }
    p
}

fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect()
}

#[test]
fn parameter_count_follows_layout() {
    let c = NetworkConfig::default();
    // 4->64, 4x 64->64, 64->3
    assert_eq!(c.parameter_count(), 64 * 5 + 4 * 64 * 65 + 3 * 65);
    let f = config(Activation::FFSiren);
    assert_eq!(f.input_dim(), 17);
    assert_eq!(config(Activation::AM).input_dim(), 4);
}

#[test]
fn activation_names_round_trip() {
    for kind in Activation::ALL {
        assert_eq!(kind.name().parse::<Activation>().unwrap(), kind);
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, format!("\"{}\"", kind.name()));
    }
    assert!("relu".parse::<Activation>().is_err());
}

#[test]
fn config_validation_rejects_missing_encoder() {
    let mut c = config(Activation::PSK);
    c.encoder = None;
    assert!(c.validate().is_err());
    let mut c = config(Activation::Tanh);
    c.encoder = Some(FourierEncoder::new(4, 1.0, 0).unwrap());
    assert!(c.validate().is_err());
}

#[test]
fn activation_examples() {
    let m = ModulationState {
        energy: 0.0,
        alpha: 0.5,
        phase: std::f64::consts::FRAC_PI_2,
    };
    let x = 0.3_f64;
    assert_eq!(activation_apply(Activation::Tanh, x, None).unwrap(), x.tanh());
    assert_eq!(activation_apply(Activation::Siren, x, None).unwrap(), x.sin());
    assert_eq!(activation_apply(Activation::AM, x, Some(&m)).unwrap(), 0.5 * x.sin());
    assert!((activation_apply(Activation::PSK, x, Some(&m)).unwrap() - x.cos()).abs() < 1e-15);
    let q = activation_apply(Activation::QPSK, x, Some(&m)).unwrap();
    assert!((q - (x.cos() - x.sin())).abs() < 1e-15);
    assert!(activation_apply(Activation::AM, x, None).is_err());
    assert!(activation_apply(Activation::Tanh, x, Some(&m)).is_err());
}

#[test]
fn init_is_seeded_and_bounded() {
    let c = NetworkConfig::for_activation(Activation::Siren, 0, 1.0, 0).unwrap();
    let a = init_params(&c, 5);
    assert_eq!(a, init_params(&c, 5));
    assert_ne!(a, init_params(&c, 6));
    let (w0, b0) = a.layer(0);
    assert!(w0.iter().all(|v| v.abs() <= 0.25));
    assert!(b0.iter().all(|&v| v == 0.0));
    let (w1, _) = a.layer(1);
    let bound = (6.0 / 64.0_f64).sqrt() / 30.0;
    assert!(w1.iter().all(|v| v.abs() <= bound));
    assert!(w1.iter().any(|v| v.abs() > 0.5 * bound));
}

#[test]
fn zero_output_layer_gives_identity() {
    for kind in Activation::ALL {
        let c = config(kind);
        let mut p = random_params(&c, 3);
        p.zero_output_layer();
        let x = [0.2, -0.4, 0.9];
        let (phi, u) = forward(&c, &p, x, 0.5).unwrap();
        assert_eq!(u, [0.0; 3]);
        assert_eq!(phi, x);
        let d = Domain::new([64.0, 64.0, 64.0]);
        let (_, f) = forward_with_jacobian(&c, &p, &d, x, 0.5).unwrap();
        assert_eq!(f, IDENTITY);
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let c = config(Activation::Tanh);
    let p = init_params(&c, 0);
    assert!(forward(&c, &p, [f64::NAN, 0.0, 0.0], 0.0).is_err());
    let other = init_params(&config(Activation::FFSiren), 0);
    assert!(forward(&c, &other, [0.0; 3], 0.0).is_err());
}

#[test]
fn jacobian_matches_finite_differences() {
    let d = Domain::new([64.0, 48.0, 32.0]);
    for kind in Activation::ALL {
        let c = config(kind);
        let p = random_params(&c, 9);
        let x = [0.1, -0.3, 0.45];
        let (_, f) = forward_with_jacobian(&c, &p, &d, x, 0.7).unwrap();
        let h = 1e-6;
        let s = d.half_extent();
        for j in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let up = forward(&c, &p, xp, 0.7).unwrap().1;
            let um = forward(&c, &p, xm, 0.7).unwrap().1;
            for i in 0..3 {
                let want = IDENTITY[i][j] + s[i] / s[j] * (up[i] - um[i]) / (2.0 * h);
                assert!((f[i][j] - want).abs() < 1e-5, "{kind} F[{i}][{j}]");
            }
        }
    }
}

#[test]
fn batched_outputs_match_generic_path() {
    for kind in Activation::ALL {
        let c = config(kind);
        let p = random_params(&c, 21);
        let x = random_points(7, 4);
        let t: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let trace = BatchNetwork::new(&c, &p).forward(&x, &t, true);
        for i in 0..x.len() {
            let tape = Tape::new();
            let vars = params_on_tape(&tape, &p);
            let u = tangent_forward(&c, &vars, x[i], t[i]).unwrap();
            let got_u = trace.displacement(i);
            let got_j = trace.jacobian(i);
            for a in 0..3 {
                assert!((got_u[a] - u[a].value()).abs() < 1e-12, "{kind} u");
                for k in 0..3 {
                    let want = u[a].tangent[k].value();
                    assert!((got_j[a][k] - want).abs() < 1e-10 * want.abs().max(1.0), "{kind} du");
                }
            }
        }
    }
}

#[test]
fn batched_gradient_matches_tape() {
    for kind in Activation::ALL {
        let c = config(kind);
        let p = random_params(&c, 33);
        let n = 5;
        let x = random_points(n, 8);
        let t = vec![0.4; n];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bar = Array2::from_shape_fn((4 * n, 3), |_| rng.random_range(-1.0..1.0));
        let net = BatchNetwork::new(&c, &p);
        let trace = net.forward(&x, &t, true);
        let got = net.backward(&trace, &bar);

        let tape = Tape::new();
        let vars = params_on_tape(&tape, &p);
        let mut total = tape.var(0.0);
        for i in 0..n {
            let u = tangent_forward(&c, &vars, x[i], t[i]).unwrap();
            for a in 0..3 {
                total = total + u[a].primal * bar[[i, a]];
                for k in 0..3 {
                    total = total + u[a].tangent[k] * bar[[(k + 1) * n + i, a]];
                }
            }
        }
        let g = tape.backward(total).unwrap();
        let scale = vars.iter().map(|v| g.wrt(*v).abs()).fold(1.0, f64::max);
        for (v, got) in vars.iter().zip(&got) {
            assert!((g.wrt(*v) - got).abs() < 1e-10 * scale, "{kind}: {} vs {got}", g.wrt(*v));
        }
    }
}

#[test]
fn primal_only_backward_matches_tape() {
    let c = config(Activation::QPSK);
    let p = random_params(&c, 5);
    let x = random_points(4, 1);
    let t = vec![1.0; 4];
    let bar = Array2::from_shape_fn((4, 3), |(i, a)| (i + 2 * a) as f64 * 0.1 - 0.3);
    let net = BatchNetwork::new(&c, &p);
    let got = net.backward(&net.forward(&x, &t, false), &bar);
    let tape = Tape::new();
    let vars = params_on_tape(&tape, &p);
    let mut total = tape.var(0.0);
    for (i, xi) in x.iter().enumerate() {
        let lift: Vec<Var> = vars.clone();
        let u = forward_generic(&c, &lift, xi.map(|v| tape.var(v)), tape.var(1.0)).unwrap();
        for a in 0..3 {
            total = total + u[a] * bar[[i, a]];
        }
    }
    let g = tape.backward(total).unwrap();
    for (v, got) in vars.iter().zip(&got) {
        assert!((g.wrt(*v) - got).abs() < 1e-10);
    }
}

#[test]
fn model_maps_physical_points() {
    let c = config(Activation::Tanh);
    let mut p = init_params(&c, 0);
    // set the output bias so u = (0.1, 0, 0) in normalized units
    let last = p.layer_count() - 1;
    let off = p.offset(last) + 3 * c.hidden_width;
    p.as_mut_slice()[off] = 0.1;
    p.as_mut_slice()[off - 3 * c.hidden_width..off].fill(0.0);
    let m = DeformationModel::new(c, p, Domain::new([64.0, 64.0, 64.0])).unwrap();
    let y = m.map_points(&[[10.0, 20.0, 30.0]], 0.0);
    assert!((y[0][0] - 13.2).abs() < 1e-12);
    assert_eq!(y[0][1], 20.0);
    let f = m.gradients(&[[10.0, 20.0, 30.0]], 0.0);
    assert_eq!(f[0], IDENTITY);
}
