//! Batched evaluation of the coordinate network with hand-derived forward,
//! spatial-tangent and backward passes.
//!
//! Rows are stacked by stream: the first `n` rows of every activation matrix
//! hold the primal values, and when tangents are requested three more blocks
//! of `n` rows hold `d/dX_k` for `k = 0, 1, 2`. A dense layer is then a single
//! matrix product over all streams and the weight gradient a single product
//! of the stacked adjoints with the stacked inputs.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{Activation, NetworkConfig, Parameters};
use crate::encoding::{modulation_params, sigmoid};
use crate::geometry::{Mat3, Vec3};

/// Values and derivatives of one activation at `s = omega * z` with
/// modulation input `m`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct ActDerivs {
    f: f64,
    fs: f64,
    fss: f64,
    fm: f64,
    fsm: f64,
}

fn act_derivs(kind: Activation, s: f64, m: f64) -> ActDerivs {
    match kind {
        Activation::Tanh => {
            let f = s.tanh();
            let fs = 1.0 - f * f;
            ActDerivs {
                f,
                fs,
                fss: -2.0 * f * fs,
                ..ActDerivs::default()
            }
        }
        Activation::Siren | Activation::FFSiren => {
            let (sn, cs) = s.sin_cos();
            ActDerivs {
                f: sn,
                fs: cs,
                fss: -sn,
                ..ActDerivs::default()
            }
        }
        Activation::AM => {
            let (sn, cs) = s.sin_cos();
            ActDerivs {
                f: m * sn,
                fs: m * cs,
                fss: -m * sn,
                fm: sn,
                fsm: cs,
            }
        }
        Activation::PSK => {
            let (sn, cs) = (s + m).sin_cos();
            ActDerivs {
                f: sn,
                fs: cs,
                fss: -sn,
                fm: cs,
                fsm: -sn,
            }
        }
        Activation::QPSK => {
            let (sn, cs) = (s + m).sin_cos();
            ActDerivs {
                f: sn + cs,
                fs: cs - sn,
                fss: -sn - cs,
                fm: cs - sn,
                fsm: -sn - cs,
            }
        }
    }
}

/// Cached per-layer data needed by the backward pass.
#[derive(Clone, Debug)]
struct LayerTrace {
    /// Stacked layer input, `streams * n x inputs`.
    input: Array2<f64>,
    /// `omega f_s`, `omega^2 f_ss` and `omega f_sm` on the primal rows of a
    /// hidden layer; empty for the output layer.
    fs: Array2<f64>,
    fss: Array2<f64>,
    fsm: Array2<f64>,
    /// Pre-activation tangents `z_dot`, `3n x outputs`; empty without tangents.
    z_dot: Array2<f64>,
}

/// Everything a forward pass produced: the stacked output `u` (and its
/// tangents) plus what backward needs.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    n: usize,
    streams: usize,
    layers: Vec<LayerTrace>,
    /// Modulation value and its spatial derivatives, per sample.
    modulation: Option<(Array1<f64>, Array2<f64>)>,
    output: Array2<f64>,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_tangents(&self) -> bool {
        self.streams == 4
    }

    /// Normalized displacement of sample `i`.
    pub fn displacement(&self, i: usize) -> Vec3 {
        std::array::from_fn(|c| self.output[[i, c]])
    }

    /// `du_c / dx_k` of sample `i`, in normalized units.
    ///
    /// # Panics
    /// If the pass ran without tangents.
    pub fn jacobian(&self, i: usize) -> Mat3 {
        assert!(self.has_tangents(), "forward pass ran without tangents");
        std::array::from_fn(|c| std::array::from_fn(|k| self.output[[(k + 1) * self.n + i, c]]))
    }

    /// Stacked output, `streams * n x 3`.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }
}

/// Borrowing view of a network for batched evaluation.
#[derive(Clone, Copy, Debug)]
pub struct BatchNetwork<'a> {
    config: &'a NetworkConfig,
    params: &'a Parameters,
}

const EVAL_CHUNK: usize = 2048;

impl<'a> BatchNetwork<'a> {
    pub fn new(config: &'a NetworkConfig, params: &'a Parameters) -> Self {
        assert!(params.matches(config), "parameters do not match the network layout");
        BatchNetwork { config, params }
    }

    /// Stacked first-layer input and, for modulated kinds, the modulation
    /// field. None of it depends on the parameters.
    fn input_layer(
        &self,
        x: &[Vec3],
        t: &[f64],
        streams: usize,
    ) -> (Array2<f64>, Option<(Array1<f64>, Array2<f64>)>) {
        let n = x.len();
        let d = self.config.input_dim();
        let mut a = Array2::zeros((streams * n, d));
        match (&self.config.encoder, self.config.activation) {
            (Some(enc), Activation::FFSiren) => {
                let m = enc.features();
                let b = enc.matrix();
                for i in 0..n {
                    for (j, row) in b.iter().enumerate() {
                        let p = row[0] * x[i][0] + row[1] * x[i][1] + row[2] * x[i][2];
                        let (sn, cs) = p.sin_cos();
                        a[[i, j]] = cs;
                        a[[i, m + j]] = sn;
                        for k in 0..streams - 1 {
                            a[[(k + 1) * n + i, j]] = -sn * row[k];
                            a[[(k + 1) * n + i, m + j]] = cs * row[k];
                        }
                    }
                    a[[i, 2 * m]] = t[i];
                }
                (a, None)
            }
            (enc, kind) => {
                for i in 0..n {
                    a[[i, 0]] = x[i][0];
                    a[[i, 1]] = x[i][1];
                    a[[i, 2]] = x[i][2];
                    a[[i, 3]] = t[i];
                    for k in 0..streams - 1 {
                        a[[(k + 1) * n + i, k]] = 1.0;
                    }
                }
                let modulation = match enc {
                    Some(enc) if kind.is_modulated() => {
                        let mut value = Array1::zeros(n);
                        let mut grad = Array2::zeros((n, 3));
                        for i in 0..n {
                            let (v, g) = modulation_field(kind, enc.matrix(), x[i]);
                            value[i] = v;
                            for k in 0..3 {
                                grad[[i, k]] = g[k];
                            }
                        }
                        Some((value, grad))
                    }
                    _ => None,
                };
                (a, modulation)
            }
        }
    }

    /// Forward pass over `x` (normalized) at per-sample times `t`.
    pub fn forward(&self, x: &[Vec3], t: &[f64], tangents: bool) -> BatchTrace {
        assert_eq!(x.len(), t.len(), "one time per sample");
        let n = x.len();
        let streams = if tangents { 4 } else { 1 };
        let kind = self.config.activation;
        let omega = self.config.omega();
        let (mut a, modulation) = self.input_layer(x, t, streams);
        let last = self.params.layer_count() - 1;
        let mut layers = Vec::with_capacity(last + 1);
        for l in 0..=last {
            let (w, b) = self.params.layer(l);
            let mut z = a.dot(&w.t());
            z.slice_mut(s![..n, ..]).outer_iter_mut().for_each(|mut row| row += &b);
            if l == last {
                layers.push(LayerTrace {
                    input: a,
                    fs: Array2::zeros((0, 0)),
                    fss: Array2::zeros((0, 0)),
                    fsm: Array2::zeros((0, 0)),
                    z_dot: Array2::zeros((0, 0)),
                });
                a = z;
                break;
            }
            let width = z.ncols();
            let mut h = Array2::zeros(z.raw_dim());
            let mut fs = Array2::zeros((n, width));
            let (mut fss, mut fsm) = if tangents {
                (Array2::zeros((n, width)), Array2::zeros((n, width)))
            } else {
                (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
            };
            for i in 0..n {
                let (m, m_dot) = match &modulation {
                    Some((v, g)) => (v[i], [g[[i, 0]], g[[i, 1]], g[[i, 2]]]),
                    None => (0.0, [0.0; 3]),
                };
                for j in 0..width {
                    let d = act_derivs(kind, omega * z[[i, j]], m);
                    h[[i, j]] = d.f;
                    fs[[i, j]] = omega * d.fs;
                    if tangents {
                        fss[[i, j]] = omega * omega * d.fss;
                        fsm[[i, j]] = omega * d.fsm;
                        for k in 0..3 {
                            let r = (k + 1) * n + i;
                            h[[r, j]] = omega * d.fs * z[[r, j]] + d.fm * m_dot[k];
                        }
                    }
                }
            }
            let z_dot = if tangents {
                z.slice(s![n.., ..]).to_owned()
            } else {
                Array2::zeros((0, 0))
            };
            layers.push(LayerTrace {
                input: a,
                fs,
                fss,
                fsm,
                z_dot,
            });
            a = h;
        }
        BatchTrace {
            n,
            streams,
            layers,
            modulation,
            output: a,
        }
    }

    /// Gradient of `sum(output_bar * output)` with respect to the flat
    /// parameter vector. `output_bar` has the shape of [`BatchTrace::output`].
    pub fn backward(&self, trace: &BatchTrace, output_bar: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(trace, output_bar, &mut grad);
        grad
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(&self, trace: &BatchTrace, output_bar: &Array2<f64>, grad: &mut [f64]) {
        assert_eq!(output_bar.dim(), trace.output.dim(), "adjoint shape mismatch");
        assert_eq!(grad.len(), self.params.len());
        let n = trace.n;
        let tangents = trace.has_tangents();
        let mut z_bar = output_bar.clone();
        for l in (0..trace.layers.len()).rev() {
            let layer = &trace.layers[l];
            let shape = self.params.shapes()[l];
            let off = self.params.offset(l);
            let dw = z_bar.t().dot(&layer.input);
            for (g, v) in grad[off..off + shape.outputs * shape.inputs].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            let db = z_bar.slice(s![..n, ..]).sum_axis(Axis(0));
            for (g, v) in grad[off + shape.outputs * shape.inputs..off + shape.outputs * (shape.inputs + 1)]
                .iter_mut()
                .zip(db.iter())
            {
                *g += v;
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.params.layer(l);
            let h_bar = z_bar.dot(&w);
            let below = &trace.layers[l - 1];
            let width = h_bar.ncols();
            let mut next = Array2::zeros(h_bar.raw_dim());
            for i in 0..n {
                let m_dot = match &trace.modulation {
                    Some((_, g)) => [g[[i, 0]], g[[i, 1]], g[[i, 2]]],
                    None => [0.0; 3],
                };
                for j in 0..width {
                    let fs = below.fs[[i, j]];
                    let mut zb = h_bar[[i, j]] * fs;
                    if tangents {
                        let fss = below.fss[[i, j]];
                        let fsm = below.fsm[[i, j]];
                        for k in 0..3 {
                            let r = (k + 1) * n + i;
                            let hb = h_bar[[r, j]];
                            zb += hb * (fss * below.z_dot[[k * n + i, j]] + fsm * m_dot[k]);
                            next[[r, j]] = hb * fs;
                        }
                    }
                    next[[i, j]] = zb;
                }
            }
            z_bar = next;
        }
    }

    fn chunked<T: Send>(
        &self,
        x: &[Vec3],
        t: f64,
        tangents: bool,
        read: impl Fn(&BatchTrace, usize) -> T + Sync,
    ) -> Vec<T> {
        use rayon::prelude::*;
        x.par_chunks(EVAL_CHUNK)
            .flat_map_iter(|chunk| {
                let times = vec![t; chunk.len()];
                let trace = self.forward(chunk, &times, tangents);
                (0..chunk.len()).map(|i| read(&trace, i)).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Normalized displacements at normalized points.
    pub fn displacements(&self, x: &[Vec3], t: f64) -> Vec<Vec3> {
        self.chunked(x, t, false, BatchTrace::displacement)
    }

    /// Normalized `du/dx` at normalized points.
    pub fn jacobians(&self, x: &[Vec3], t: f64) -> Vec<Mat3> {
        self.chunked(x, t, true, BatchTrace::jacobian)
    }
}

/// Modulation input at `x` and its gradient: the amplitude for AM, the phase
/// for PSK and QPSK.
fn modulation_field(kind: Activation, b: &[[f64; 3]], x: Vec3) -> (f64, Vec3) {
    let bx: Vec<f64> = b
        .iter()
        .map(|r| r[0] * x[0] + r[1] * x[1] + r[2] * x[2])
        .collect();
    let state = modulation_params(&bx);
    let mut grad = [0.0; 3];
    match kind {
        Activation::AM => {
            let alpha = sigmoid(state.energy);
            for (row, v) in b.iter().zip(&bx) {
                let (sn, cs) = v.sin_cos();
                let de = 2.0 * (cs + sn) * (cs - sn);
                for k in 0..3 {
                    grad[k] += de * row[k];
                }
            }
            grad = grad.map(|g| alpha * (1.0 - alpha) * g);
            (state.alpha, grad)
        }
        Activation::PSK | Activation::QPSK => {
            let (mut sc, mut ss) = (0.0, 0.0);
            let (mut dsc, mut dss) = ([0.0; 3], [0.0; 3]);
            for (row, v) in b.iter().zip(&bx) {
                let (sn, cs) = v.sin_cos();
                sc += cs;
                ss += sn;
                for k in 0..3 {
                    dss[k] += cs * row[k];
                    dsc[k] -= sn * row[k];
                }
            }
            let r2 = sc * sc + ss * ss;
            if r2 > 0.0 {
                for k in 0..3 {
                    grad[k] = (sc * dss[k] - ss * dsc[k]) / r2;
                }
            }
            (state.phase, grad)
        }
        _ => unreachable!("only modulated activations carry a modulation field"),
    }
}
