//! Scalar reverse-mode differentiation with an embedded forward-mode tangent
//! bundle.
//!
//! One [`Tape`] records a loss evaluation. Spatial derivatives of the
//! deformation are carried as [`TangentValue`]s whose coefficients are tape
//! nodes, so a single backward pass yields both the parameter gradient and
//! the gradient of anything built from the spatial Jacobian.

mod real;
mod tangent;
mod tape;

pub use real::Real;
pub use tangent::TangentValue;
pub use tape::{Gradients, Op, Tape, TapeNode, Var, ABS_SMOOTHING};

use crate::error::Result;

/// Evaluates `f` on coordinates seeded with unit tangents and returns
/// `J[i][j] = d f_i / d X_j` as tape nodes.
pub fn spatial_jacobian<'t, F>(tape: &'t Tape, x: [f64; 3], f: F) -> Result<[[Var<'t>; 3]; 3]>
where
    F: FnOnce([TangentValue<'t>; 3]) -> Result<[TangentValue<'t>; 3]>,
{
    let out = f(TangentValue::seed(tape, x))?;
    Ok(std::array::from_fn(|i| out[i].tangent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn fd1(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn check_unary(op: Op, f: fn(f64) -> f64, lo: f64, hi: f64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(op as u64);
        for _ in 0..100 {
            let x0 = rng.random_range(lo..hi);
            let tape = Tape::new();
            let x = tape.var(x0);
            let y = tape.record(op, &[x]).unwrap();
            let g = tape.backward(y).unwrap().wrt(x);
            let want = fd1(f, x0);
            assert!(rel_err(g, want) < tol, "{op:?} at {x0}: {g} vs {want}");
        }
    }

    fn check_binary(op: Op, f: fn(f64, f64) -> f64, sample: impl Fn(&mut ChaCha8Rng) -> (f64, f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + op as u64);
        for _ in 0..100 {
            let (a0, b0) = sample(&mut rng);
            let tape = Tape::new();
            let (a, b) = (tape.var(a0), tape.var(b0));
            let y = tape.record(op, &[a, b]).unwrap();
            let g = tape.backward(y).unwrap();
            let da = fd1(|a| f(a, b0), a0);
            let db = fd1(|b| f(a0, b), b0);
            assert!(rel_err(g.wrt(a), da) < 1e-5, "{op:?} d/da at ({a0},{b0})");
            assert!(rel_err(g.wrt(b), db) < 1e-5, "{op:?} d/db at ({a0},{b0})");
        }
    }

    fn smooth_abs(x: f64) -> f64 {
        (x * x + ABS_SMOOTHING * ABS_SMOOTHING).sqrt() - ABS_SMOOTHING
    }

    #[test]
    fn every_op_matches_finite_differences() {
        check_unary(Op::Neg, |x| -x, -3.0, 3.0, 1e-5);
        check_unary(Op::Sin, f64::sin, -3.0, 3.0, 1e-5);
        check_unary(Op::Cos, f64::cos, -3.0, 3.0, 1e-5);
        check_unary(Op::Tanh, f64::tanh, -3.0, 3.0, 1e-5);
        check_unary(Op::Exp, f64::exp, -3.0, 3.0, 1e-5);
        check_unary(Op::Log, f64::ln, 0.1, 3.0, 1e-5);
        check_unary(Op::Sqrt, f64::sqrt, 0.1, 3.0, 1e-5);
        check_unary(Op::AbsSmooth, smooth_abs, -3.0, 3.0, 1e-5);
        check_unary(Op::AbsSmooth, smooth_abs, -1e-3, 1e-3, 1e-4);

        let any = |r: &mut ChaCha8Rng| (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        check_binary(Op::Add, |a, b| a + b, any);
        check_binary(Op::Sub, |a, b| a - b, any);
        check_binary(Op::Mul, |a, b| a * b, any);
        check_binary(Op::Div, |a, b| a / b, |r| {
            (r.random_range(-3.0..3.0), r.random_range(0.2..3.0) * if r.random() { 1.0 } else { -1.0 })
        });
        check_binary(Op::Atan2, f64::atan2, |r| {
            (r.random_range(0.1..3.0), r.random_range(-3.0..3.0))
        });
        let apart = |r: &mut ChaCha8Rng| loop {
            let (a, b): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            if (a - b).abs() > 1e-3 {
                break (a, b);
            }
        };
        check_binary(Op::Min, f64::min, apart);
        check_binary(Op::Max, f64::max, apart);
    }

    #[test]
    fn random_composite_matches_finite_differences() {
        // five ops: mul, sin, add, exp, div
        let f = |x: f64, y: f64| ((x * y).sin() + x).exp() / (y * y + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (x0, y0) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let tape = Tape::new();
            let (x, y) = (tape.var(x0), tape.var(y0));
            let out = ((x * y).sin() + x).exp() / (y * y + 1.0);
            let g = tape.backward(out).unwrap();
            assert!(rel_err(g.wrt(x), fd1(|x| f(x, y0), x0)) < 1e-6);
            assert!(rel_err(g.wrt(y), fd1(|y| f(x0, y), y0)) < 1e-6);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = tape.var(0.37);
            let y = tape.var(-1.2);
            let out = (x.tanh() * y.cos() + (x * y).exp()).abs_smooth();
            let g = tape.backward(out).unwrap();
            (g.wrt(x).to_bits(), g.wrt(y).to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn jacobian_of_identity_and_linear_maps() {
        let tape = Tape::new();
        let j = spatial_jacobian(&tape, [0.1, 0.2, 0.3], Ok).unwrap();
        for (i, row) in j.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                assert_eq!(e.value(), if i == k { 1.0 } else { 0.0 });
            }
        }

        let a = [[1.0, -2.0, 0.5], [0.0, 3.0, 1.0], [4.0, 0.25, -1.0]];
        let j = spatial_jacobian(&tape, [0.4, -0.7, 2.0], |x| {
            Ok(std::array::from_fn(|i| x[0] * a[i][0] + x[1] * a[i][1] + x[2] * a[i][2]))
        })
        .unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert_eq!(j[i][k].value(), a[i][k]);
            }
        }
    }

    fn nonlinear_f<T: Real>(x: [T; 3], theta: &[T]) -> [T; 3] {
        [
            (x[0] * theta[0] + x[1] * x[2]).tanh(),
            (x[1] * theta[1]).sin() * x[0],
            (x[2] * x[0] * theta[2]).exp() + x[1],
        ]
    }

    fn other_f<T: Real>(x: [T; 3]) -> [T; 3] {
        [x[1].cos() * x[2], (x[0] * x[0] + 1.0).ln().unwrap(), x[0] * x[1] * x[2]]
    }

    #[test]
    fn jacobian_is_linear_in_the_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let th = [0.3, -0.8, 1.1];
            let tape = Tape::new();
            let theta: Vec<TangentValue> =
                th.iter().map(|&v| TangentValue::constant(tape.var(v))).collect();
            let jf = spatial_jacobian(&tape, x, |x| Ok(nonlinear_f(x, &theta))).unwrap();
            let jg = spatial_jacobian(&tape, x, |x| Ok(other_f(x))).unwrap();
            let jsum = spatial_jacobian(&tape, x, |x| {
                let (f, g) = (nonlinear_f(x, &theta), other_f(x));
                Ok(std::array::from_fn(|i| f[i] + g[i]))
            })
            .unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    let want = jf[i][k].value() + jg[i][k].value();
                    assert!((jsum[i][k].value() - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobian_entries_differentiate_through_parameters() {
        let x = [0.3, -0.5, 0.8];
        let th0 = [0.7, -1.3, 0.4];
        let entry = |th: &[f64], i: usize, k: usize| {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            (nonlinear_f(xp, th)[i] - nonlinear_f(xm, th)[i]) / (2.0 * h)
        };
        for i in 0..3 {
            for k in 0..3 {
                let tape = Tape::new();
                let theta_vars: Vec<Var> = th0.iter().map(|&v| tape.var(v)).collect();
                let theta: Vec<TangentValue> =
                    theta_vars.iter().map(|&v| TangentValue::constant(v)).collect();
                let j = spatial_jacobian(&tape, x, |x| Ok(nonlinear_f(x, &theta))).unwrap();
                let g = tape.backward(j[i][k]).unwrap();
                for p in 0..3 {
                    let h = 1e-4;
                    let mut tp = th0;
                    let mut tm = th0;
                    tp[p] += h;
                    tm[p] -= h;
                    let want = (entry(&tp, i, k) - entry(&tm, i, k)) / (2.0 * h);
                    let got = g.wrt(theta_vars[p]);
                    assert!(
                        (got - want).abs() < 1e-3 * got.abs().max(want.abs()).max(1e-3),
                        "J[{i}][{k}] wrt theta{p}: {got} vs {want}"
                    );
                }
            }
        }
    }
}
