//! The coordinate network `u(X, t; theta)` and the deformation
//! `phi(X) = X + u(X, t; theta)` it parameterizes.
//!
//! Six activation families share one fully connected layout: a tanh
//! baseline, a sine network with `omega0` pre-activation scaling, the same
//! sine network fed with Fourier features of `X` instead of raw `X`, and
//! three modulated sine variants (amplitude, phase shift and quadrature phase
//! shift) whose amplitude/phase are derived per sample from the Fourier
//! projections of `X`.
//!
//! There are two evaluation paths. The generic path ([`forward_generic`])
//! runs on any [`Real`] scalar, including tape variables and tangent bundles,
//! and is the reference used for gradient checks. [`BatchNetwork`] evaluates
//! many samples at once with hand-written forward/tangent/backward passes and
//! is what training uses.

mod batched;

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batched::{BatchNetwork, BatchTrace};

use crate::autodiff::{Real, TangentValue, Tape, Var};
use crate::encoding::{FourierEncoder, ModulationState};
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Domain, Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Siren,
    #[serde(rename = "ffs")]
    FFSiren,
    #[serde(rename = "am")]
    AM,
    #[serde(rename = "psk")]
    PSK,
    #[serde(rename = "qpsk")]
    QPSK,
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Tanh,
        Activation::Siren,
        Activation::FFSiren,
        Activation::AM,
        Activation::PSK,
        Activation::QPSK,
    ];

    pub fn is_sinusoidal(self) -> bool {
        self != Activation::Tanh
    }

    pub fn is_modulated(self) -> bool {
        matches!(self, Activation::AM | Activation::PSK | Activation::QPSK)
    }

    pub fn needs_encoder(self) -> bool {
        self == Activation::FFSiren || self.is_modulated()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Siren => "siren",
            Activation::FFSiren => "ffs",
            Activation::AM => "am",
            Activation::PSK => "psk",
            Activation::QPSK => "qpsk",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "tanh" | "vanilla" => Activation::Tanh,
            "siren" => Activation::Siren,
            "ffs" | "ffsiren" | "ff-s" => Activation::FFSiren,
            "am" => Activation::AM,
            "psk" => Activation::PSK,
            "qpsk" => Activation::QPSK,
            other => return Err(Error::usage(format!("unknown activation '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub omega0: f64,
    pub encoder: Option<FourierEncoder>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_layers: 5,
            hidden_width: 64,
            activation: Activation::Tanh,
            omega0: 30.0,
            encoder: None,
        }
    }
}

/// Shape of one dense layer, `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub outputs: usize,
    pub inputs: usize,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

impl NetworkConfig {
    /// Builds a config for `activation` and draws a Fourier encoder when the
    /// activation needs one.
    pub fn for_activation(
        activation: Activation,
        features: usize,
        sigma: f64,
        encoder_seed: u64,
    ) -> Result<Self> {
        let encoder = if activation.needs_encoder() {
            Some(FourierEncoder::new(features, sigma, encoder_seed)?)
        } else {
            None
        };
        let config = NetworkConfig {
            activation,
            encoder,
            ..NetworkConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::config("network needs at least one non-empty hidden layer"));
        }
        if self.activation.is_sinusoidal() && !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        match (self.activation.needs_encoder(), self.encoder.is_some()) {
            (true, false) => Err(Error::config(format!(
                "{} activation requires a Fourier encoder",
                self.activation
            ))),
            (false, true) => Err(Error::config(format!(
                "{} activation does not use a Fourier encoder",
                self.activation
            ))),
            _ => Ok(()),
        }
    }

    /// 4 for raw `(X, t)`; `2m + 1` when the Fourier features replace `X`.
    pub fn input_dim(&self) -> usize {
        match (&self.encoder, self.activation) {
            (Some(enc), Activation::FFSiren) => enc.output_dim() + 1,
            _ => 4,
        }
    }

    pub fn output_dim(&self) -> usize {
        3
    }

    /// Pre-activation scale; 1 for tanh.
    pub fn omega(&self) -> f64 {
        if self.activation.is_sinusoidal() {
            self.omega0
        } else {
            1.0
        }
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut inputs = self.input_dim();
        for _ in 0..self.hidden_layers {
            shapes.push(LayerShape {
                outputs: self.hidden_width,
                inputs,
            });
            inputs = self.hidden_width;
        }
        shapes.push(LayerShape {
            outputs: self.output_dim(),
            inputs,
        });
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }
}

/// Weights and biases stored flat: per layer, the row-major `out x in`
/// weight matrix followed by the bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    shapes: Vec<LayerShape>,
    data: Vec<f64>,
}

impl Parameters {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let shapes = config.layer_shapes();
        let n = shapes.iter().map(LayerShape::len).sum();
        Parameters {
            shapes,
            data: vec![0.0; n],
        }
    }

    pub fn from_flat(config: &NetworkConfig, data: Vec<f64>) -> Result<Self> {
        let shapes = config.layer_shapes();
        let n: usize = shapes.iter().map(LayerShape::len).sum();
        if data.len() != n {
            return Err(Error::usage(format!(
                "parameter vector has {} entries, network needs {n}",
                data.len()
            )));
        }
        Ok(Parameters { shapes, data })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    /// Offset of layer `l`'s weights in the flat vector.
    pub fn offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(LayerShape::len).sum()
    }

    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let s = self.shapes[layer];
        let off = self.offset(layer);
        let w = &self.data[off..off + s.outputs * s.inputs];
        let b = &self.data[off + s.outputs * s.inputs..off + s.len()];
        (
            ArrayView2::from_shape((s.outputs, s.inputs), w).expect("layer shape"),
            ArrayView1::from(b),
        )
    }

    /// Zeroes the output layer so the network starts at the identity map.
    pub fn zero_output_layer(&mut self) {
        let last = self.shapes.len() - 1;
        let off = self.offset(last);
        let len = self.shapes[last].len();
        self.data[off..off + len].fill(0.0);
    }

    fn matches(&self, config: &NetworkConfig) -> bool {
        self.shapes == config.layer_shapes()
    }
}

/// Draws initial weights: Xavier-uniform for tanh; for the sine families the
/// first layer is `U(-1/n, 1/n)` and every later layer
/// `U(-sqrt(6/n)/omega0, sqrt(6/n)/omega0)` with `n` the fan-in. Biases start
/// at zero.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Parameters {
    let mut params = Parameters::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = params.shapes.clone();
    let mut off = 0;
    for (l, s) in shapes.iter().enumerate() {
        let fan_in = s.inputs as f64;
        let bound = if !config.activation.is_sinusoidal() {
            (6.0 / (s.inputs + s.outputs) as f64).sqrt()
        } else if l == 0 {
            1.0 / fan_in
        } else {
            (6.0 / fan_in).sqrt() / config.omega0
        };
        for w in &mut params.data[off..off + s.outputs * s.inputs] {
            *w = rng.random_range(-bound..=bound);
        }
        off += s.len();
    }
    params
}

/// Applies the activation of `kind` to an already `omega0`-scaled
/// pre-activation `x`.
pub fn activation_apply<T: Real>(
    kind: Activation,
    x: T,
    modulation: Option<&ModulationState<T>>,
) -> Result<T> {
    match (kind.is_modulated(), modulation) {
        (true, None) => {
            return Err(Error::usage(format!("{kind} activation needs a modulation state")))
        }
        (false, Some(_)) => {
            return Err(Error::usage(format!("{kind} activation takes no modulation state")))
        }
        _ => {}
    }
    Ok(match (kind, modulation) {
        (Activation::Tanh, _) => x.tanh(),
        (Activation::Siren | Activation::FFSiren, _) => x.sin(),
        (Activation::AM, Some(m)) => m.alpha * x.sin(),
        (Activation::PSK, Some(m)) => (x + m.phase).sin(),
        (Activation::QPSK, Some(m)) => {
            let shifted = x + m.phase;
            shifted.sin() + shifted.cos()
        }
        _ => unreachable!("checked above"),
    })
}

/// Network output `u` at normalized `x` and time `t`, for any scalar type.
/// `params` is the flat parameter vector lifted into `T`.
pub fn forward_generic<T: Real>(
    config: &NetworkConfig,
    params: &[T],
    x: [T; 3],
    t: T,
) -> Result<[T; 3]> {
    if params.len() != config.parameter_count() {
        return Err(Error::usage("parameter vector does not match the network"));
    }
    let (mut a, modulation) = match (&config.encoder, config.activation) {
        (Some(enc), Activation::FFSiren) => {
            let mut a = enc.encode(&x)?;
            a.push(t);
            (a, None)
        }
        (Some(enc), kind) if kind.is_modulated() => {
            let (_, m) = enc.encode_with_modulation(&x);
            (vec![x[0], x[1], x[2], t], Some(m))
        }
        _ => (vec![x[0], x[1], x[2], t], None),
    };
    let omega = config.omega();
    let shapes = config.layer_shapes();
    let last = shapes.len() - 1;
    let mut off = 0;
    for (l, s) in shapes.iter().enumerate() {
        let w = &params[off..off + s.outputs * s.inputs];
        let b = &params[off + s.outputs * s.inputs..off + s.len()];
        let mut next = Vec::with_capacity(s.outputs);
        for o in 0..s.outputs {
            let row = &w[o * s.inputs..(o + 1) * s.inputs];
            let mut z = b[o];
            for (wi, ai) in row.iter().zip(&a) {
                z = z + *wi * *ai;
            }
            next.push(if l == last {
                z
            } else {
                let pre = if omega == 1.0 { z } else { z * omega };
                activation_apply(config.activation, pre, modulation.as_ref())?
            });
        }
        a = next;
        off += s.len();
    }
    Ok([a[0], a[1], a[2]])
}

fn check_inputs(x: &Vec3, t: f64) -> Result<()> {
    if x.iter().chain(std::iter::once(&t)).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::usage(format!("non-finite network input x={x:?} t={t}")))
    }
}

/// `(phi, u)` at normalized coordinates.
pub fn forward(config: &NetworkConfig, params: &Parameters, x: Vec3, t: f64) -> Result<(Vec3, Vec3)> {
    check_inputs(&x, t)?;
    if !params.matches(config) {
        return Err(Error::usage("parameters do not match the network layout"));
    }
    let u = forward_generic(config, params.as_slice(), x, t)?;
    Ok((std::array::from_fn(|i| x[i] + u[i]), u))
}

/// Registers every parameter as a tape input.
pub fn params_on_tape<'t>(tape: &'t Tape, params: &Parameters) -> Vec<Var<'t>> {
    params.as_slice().iter().map(|&v| tape.var(v)).collect()
}

/// `u` at normalized `x` with its spatial tangents, differentiable with
/// respect to `params`.
pub fn tangent_forward<'t>(
    config: &NetworkConfig,
    params: &[Var<'t>],
    x: Vec3,
    t: f64,
) -> Result<[TangentValue<'t>; 3]> {
    check_inputs(&x, t)?;
    let tape = params
        .first()
        .ok_or_else(|| Error::usage("empty parameter vector"))?
        .tape();
    let lifted: Vec<TangentValue<'t>> = params.iter().map(|&p| TangentValue::constant(p)).collect();
    let time = TangentValue::constant(tape.var(t));
    forward_generic(config, &lifted, TangentValue::seed(tape, x), time)
}

/// `phi` and the physical deformation gradient `F = I + S (du/dx) S^-1` at
/// normalized `x`.
pub fn forward_with_jacobian(
    config: &NetworkConfig,
    params: &Parameters,
    domain: &Domain,
    x: Vec3,
    t: f64,
) -> Result<(Vec3, Mat3)> {
    check_inputs(&x, t)?;
    if !params.matches(config) {
        return Err(Error::usage("parameters do not match the network layout"));
    }
    let tape = Tape::new();
    let vars = params_on_tape(&tape, params);
    let lifted: Vec<TangentValue> = vars.iter().map(|&p| TangentValue::constant(p)).collect();
    let time = TangentValue::constant(tape.var(t));
    let xs = TangentValue::seed(&tape, x);
    let u = forward_generic(config, &lifted, xs, time)?;
    let du: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| u[i].tangent[j].value()));
    let phi = std::array::from_fn(|i| x[i] + u[i].value());
    Ok((phi, domain.physical_gradient(&du)))
}

/// A trained (or initial) network bound to the imaging domain it was fitted
/// on; maps physical reference points to physical template points.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationModel {
    pub config: NetworkConfig,
    pub params: Parameters,
    pub domain: Domain,
}

impl DeformationModel {
    pub fn new(config: NetworkConfig, params: Parameters, domain: Domain) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(Error::usage("parameters do not match the network layout"));
        }
        Ok(DeformationModel {
            config,
            params,
            domain,
        })
    }

    pub fn batch(&self) -> BatchNetwork<'_> {
        BatchNetwork::new(&self.config, &self.params)
    }

    /// Physical displacement at physical points.
    pub fn displacements(&self, points: &[Vec3], t: f64) -> Vec<Vec3> {
        let s = self.domain.half_extent();
        let x: Vec<Vec3> = points.iter().map(|p| self.domain.to_normalized(*p)).collect();
        self.batch()
            .displacements(&x, t)
            .into_iter()
            .map(|u| std::array::from_fn(|i| u[i] * s[i]))
            .collect()
    }
}

impl DeformationField for DeformationModel {
    fn map_points(&self, points: &[Vec3], t: f64) -> Vec<Vec3> {
        self.displacements(points, t)
            .into_iter()
            .zip(points)
            .map(|(u, p)| std::array::from_fn(|i| p[i] + u[i]))
            .collect()
    }

    fn gradients(&self, points: &[Vec3], t: f64) -> Vec<Mat3> {
        let x: Vec<Vec3> = points.iter().map(|p| self.domain.to_normalized(*p)).collect();
        self.batch()
            .jacobians(&x, t)
            .into_iter()
            .map(|du| self.domain.physical_gradient(&du))
            .collect()
    }
}

#[cfg(test)]
mod tests;
