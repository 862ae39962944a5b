//! Neo-Hookean strain energy of the deformation gradient, used as the
//! incompressibility regularizer inside the myocardium.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{cofactor, det3, Mat3, Vec3};

/// Energy assigned to an inverted sample (`J <= 0`) is
/// `INVERSION_PENALTY * (1 + J^2)`.
pub const INVERSION_PENALTY: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda: f64,
}

impl MaterialParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(MaterialParams { lambda })
    }
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams { lambda: 1e5 }
    }
}

/// `F`, the right Cauchy-Green tensor `C = F^T F` and `J = det F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationState<T = f64> {
    pub f: [[T; 3]; 3],
    pub c: [[T; 3]; 3],
    pub j: T,
}

pub fn deformation_state<T: Real>(f: [[T; 3]; 3]) -> DeformationState<T> {
    let c = std::array::from_fn(|i| {
        std::array::from_fn(|k| f[0][i] * f[0][k] + f[1][i] * f[1][k] + f[2][i] * f[2][k])
    });
    DeformationState { j: det3(&f), f, c }
}

/// `W = tr C - 3 - 2 ln J + lambda (J - 1)^2`. Fails on `J <= 0` with the
/// sample position attached when one is given.
pub fn neo_hookean_energy<T: Real>(
    state: &DeformationState<T>,
    mat: &MaterialParams,
    position: Option<Vec3>,
) -> Result<T> {
    let j = state.j;
    if j.value() <= 0.0 {
        return Err(Error::InvertedElement {
            position: position.unwrap_or([f64::NAN; 3]),
            jacobian: j.value(),
        });
    }
    let trace = state.c[0][0] + state.c[1][1] + state.c[2][2];
    let dj = j - 1.0;
    Ok(trace - 3.0 - j.ln()? * 2.0 + dj * dj * mat.lambda)
}

/// Energy and `dW/dF` in plain floats, with inverted samples replaced by the
/// finite penalty. The flag reports inversion.
pub fn energy_and_gradient(f: &Mat3, mat: &MaterialParams) -> (f64, Mat3, bool) {
    let j = det3(f);
    let cof = cofactor(f);
    if j <= 0.0 {
        let w = INVERSION_PENALTY * (1.0 + j * j);
        let scale = INVERSION_PENALTY * 2.0 * j;
        return (w, cof.map(|row| row.map(|c| scale * c)), true);
    }
    let trace: f64 = f.iter().flatten().map(|v| v * v).sum();
    let w = trace - 3.0 - 2.0 * j.ln() + mat.lambda * (j - 1.0) * (j - 1.0);
    let coef = 2.0 * mat.lambda * (j - 1.0) - 2.0 / j;
    let grad = std::array::from_fn(|i| std::array::from_fn(|k| 2.0 * f[i][k] + coef * cof[i][k]));
    (w, grad, false)
}
