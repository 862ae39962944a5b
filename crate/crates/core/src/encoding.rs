//! Random Fourier feature mapping of spatial coordinates and the adaptive
//! modulation parameters derived from it.
//!
//! `gamma(X) = [cos(BX), sin(BX)]` with `B` an `m x 3` Gaussian matrix. The
//! modulated activations read two scalars off the same projections: the
//! signal energy `E = sum_i (cos(BX)_i + sin(BX)_i)^2`, squashed into an
//! amplitude `alpha = sigmoid(E)`, and a phase
//! `atan2(sum_i sin(BX)_i, sum_i cos(BX)_i)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Spatial input dimension of the encoder. Time is never encoded.
pub const INPUT_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierEncoder {
    /// Rows of `B`, one per feature.
    matrix: Vec<[f64; INPUT_DIM]>,
    sigma: f64,
    seed: u64,
}

impl FourierEncoder {
    /// Draws `B` with i.i.d. `N(0, sigma^2)` entries, row-major, from a
    /// ChaCha8 stream seeded with `seed`.
    pub fn new(features: usize, sigma: f64, seed: u64) -> Result<Self> {
        if features == 0 {
            return Err(Error::config("Fourier encoder needs at least one feature"));
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::config(format!("invalid encoder sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..features)
            .map(|_| std::array::from_fn(|_| normal.sample(&mut rng)))
            .collect();
        Ok(FourierEncoder {
            matrix,
            sigma,
            seed,
        })
    }

    /// Wraps an explicit matrix (e.g. one loaded from a checkpoint).
    pub fn from_matrix(matrix: Vec<[f64; INPUT_DIM]>, sigma: f64, seed: u64) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::config("Fourier encoder needs at least one feature"));
        }
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("Fourier matrix has non-finite entries"));
        }
        Ok(FourierEncoder {
            matrix,
            sigma,
            seed,
        })
    }

    pub fn features(&self) -> usize {
        self.matrix.len()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.features()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[[f64; INPUT_DIM]] {
        &self.matrix
    }

    /// The projections `BX`.
    pub fn project<T: Real>(&self, x: &[T; INPUT_DIM]) -> Vec<T> {
        self.matrix
            .iter()
            .map(|row| x[0] * row[0] + x[1] * row[1] + x[2] * row[2])
            .collect()
    }

    /// `gamma(X)`: the `m` cosines followed by the `m` sines.
    pub fn encode<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        let x: &[T; INPUT_DIM] = x.try_into().map_err(|_| {
            Error::usage(format!(
                "encoder expects {INPUT_DIM} coordinates, got {}",
                x.len()
            ))
        })?;
        Ok(features_from_projection(&self.project(x)))
    }

    /// `gamma(X)` and the modulation state, sharing one evaluation of `BX`.
    pub fn encode_with_modulation<T: Real>(
        &self,
        x: &[T; INPUT_DIM],
    ) -> (Vec<T>, ModulationState<T>) {
        let bx = self.project(x);
        (features_from_projection(&bx), modulation_params(&bx))
    }
}

fn features_from_projection<T: Real>(bx: &[T]) -> Vec<T> {
    let mut out: Vec<T> = bx.iter().map(|v| v.cos()).collect();
    out.extend(bx.iter().map(|v| v.sin()));
    out
}

/// Amplitude and phase that drive the AM, PSK and QPSK activations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulationState<T = f64> {
    pub energy: T,
    pub alpha: T,
    pub phase: T,
}

impl<T: Real> ModulationState<T> {
    pub fn values(&self) -> ModulationState<f64> {
        ModulationState {
            energy: self.energy.value(),
            alpha: self.alpha.value(),
            phase: self.phase.value(),
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    let one = x.lift(1.0);
    one / ((-x).exp() + 1.0)
}

/// Energy, amplitude and phase from the projections `BX`. The phase is 0
/// when both sums vanish.
pub fn modulation_params<T: Real>(bx: &[T]) -> ModulationState<T> {
    assert!(!bx.is_empty(), "modulation needs at least one feature");
    let mut energy: Option<T> = None;
    let mut sum_cos: Option<T> = None;
    let mut sum_sin: Option<T> = None;
    for &v in bx {
        let (c, s) = (v.cos(), v.sin());
        let e = (c + s).square();
        energy = Some(energy.map_or(e, |acc| acc + e));
        sum_cos = Some(sum_cos.map_or(c, |acc| acc + c));
        sum_sin = Some(sum_sin.map_or(s, |acc| acc + s));
    }
    let energy = energy.expect("non-empty");
    ModulationState {
        energy,
        alpha: sigmoid(energy),
        phase: sum_sin.expect("non-empty").atan2(sum_cos.expect("non-empty")),
    }
}
