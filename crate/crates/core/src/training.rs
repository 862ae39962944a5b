//! Registration loss, collocation sampling, Adam and the training loop.
//!
//! The loss for one template frame is the mean smoothed absolute intensity
//! difference between the reference and the warped template over random
//! voxel centers, plus `mu` times the mean neo-Hookean energy over random
//! voxels of the reference myocardium mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Var, ABS_SMOOTHING};
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Domain, Vec3, IDENTITY};
use crate::mechanics::{deformation_state, energy_and_gradient, neo_hookean_energy, MaterialParams, INVERSION_PENALTY};
use crate::metrics::{check_band_edges, evaluate, spectral_report, BandEnergyReport, MetricsRecord, VectorField};
use crate::model::{init_params, tangent_forward, BatchNetwork, DeformationModel, NetworkConfig, Parameters};
use crate::sampling::ImageVolume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mu: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub similarity_batch: usize,
    pub reg_batch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// History is recorded every this many iterations and at the last one.
    pub log_every: usize,
    /// Zero the output layer at initialization so training starts from the
    /// identity map.
    pub identity_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mu: 5e-6,
            lambda: 1e5,
            learning_rate: 1e-3,
            iterations: 20_000,
            similarity_batch: 1000,
            reg_batch: 1000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            log_every: 100,
            identity_start: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be finite and >= 0");
        }
        MaterialParams::new(self.lambda)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.similarity_batch == 0 || self.reg_batch == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and epsilon > 0");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        Ok(())
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams { lambda: self.lambda }
    }
}

/// Frames of one cine acquisition. Frame `reference_index` (end-diastole,
/// index 0) is the fixed image and carries the myocardium mask.
#[derive(Clone, Debug, PartialEq)]
pub struct CineSequence {
    frames: Vec<ImageVolume>,
    times: Vec<f64>,
    reference_index: usize,
}

impl CineSequence {
    pub fn new(frames: Vec<ImageVolume>, times: Vec<f64>) -> Result<Self> {
        if frames.is_empty() || frames.len() != times.len() {
            return Err(Error::usage(format!(
                "{} frames with {} times",
                frames.len(),
                times.len()
            )));
        }
        let (d, s) = (frames[0].dims(), frames[0].spacing());
        if frames.iter().any(|f| f.dims() != d || f.spacing() != s) {
            return Err(Error::usage("frames differ in dims or spacing"));
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage(format!("times must increase strictly within [0, 1]: {times:?}")));
        }
        Ok(CineSequence {
            frames,
            times,
            reference_index: 0,
        })
    }

    pub fn frames(&self) -> &[ImageVolume] {
        &self.frames
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &ImageVolume {
        &self.frames[self.reference_index]
    }

    pub fn domain(&self) -> Domain {
        self.reference().domain()
    }

    /// Flat indices of the reference mask voxels.
    pub fn mask_indices(&self) -> Result<Vec<usize>> {
        let idx = self.reference().mask_indices();
        if idx.is_empty() {
            return Err(Error::config("reference frame has no (or an empty) myocardium mask"));
        }
        Ok(idx)
    }
}

/// Voxel indices drawn for one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationBatch {
    pub frame_index: usize,
    pub similarity: Vec<usize>,
    pub regularization: Vec<usize>,
}

impl CollocationBatch {
    /// Draws a frame uniformly (the reference included) and both voxel sets
    /// uniformly with replacement. No regularization voxels are drawn when
    /// `mu = 0`.
    pub fn draw(
        rng: &mut impl Rng,
        seq: &CineSequence,
        mask: &[usize],
        config: &TrainConfig,
    ) -> Self {
        let frame_index = rng.random_range(0..seq.len());
        let n = seq.reference().len();
        let similarity = (0..config.similarity_batch).map(|_| rng.random_range(0..n)).collect();
        let regularization = if config.mu > 0.0 {
            (0..config.reg_batch).map(|_| mask[rng.random_range(0..mask.len())]).collect()
        } else {
            Vec::new()
        };
        CollocationBatch {
            frame_index,
            similarity,
            regularization,
        }
    }

    /// Every voxel once for similarity and every mask voxel once for the
    /// regularizer.
    pub fn full(seq: &CineSequence, frame_index: usize) -> Result<Self> {
        Ok(CollocationBatch {
            frame_index,
            similarity: (0..seq.reference().len()).collect(),
            regularization: seq.mask_indices()?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub similarity: f64,
    /// Mean strain energy over the regularization batch; 0 when `mu = 0`
    /// since the term is then not evaluated.
    pub regularization: f64,
    pub inversions: usize,
}

fn smooth_abs(d: f64) -> (f64, f64) {
    let r = (d * d + ABS_SMOOTHING * ABS_SMOOTHING).sqrt();
    (r - ABS_SMOOTHING, d / r)
}

fn check_batch(seq: &CineSequence, batch: &CollocationBatch, config: &TrainConfig) -> Result<()> {
    if batch.frame_index >= seq.len() {
        return Err(Error::usage(format!(
            "frame index {} out of range for {} frames",
            batch.frame_index,
            seq.len()
        )));
    }
    if batch.similarity.is_empty() {
        return Err(Error::usage("empty similarity batch"));
    }
    if config.mu > 0.0 && batch.regularization.is_empty() {
        return Err(Error::config("regularization needs a non-empty myocardium mask"));
    }
    Ok(())
}

/// The loss recorded on a tape, differentiable in `params`. Slow; meant for
/// verification and small problems.
pub fn loss<'t>(
    net: &NetworkConfig,
    params: &[Var<'t>],
    seq: &CineSequence,
    batch: &CollocationBatch,
    config: &TrainConfig,
) -> Result<(Var<'t>, LossBreakdown)> {
    check_batch(seq, batch, config)?;
    let tape = params.first().ok_or_else(|| Error::usage("empty parameters"))?.tape();
    let reference = seq.reference();
    let template = &seq.frames()[batch.frame_index];
    let t = seq.times()[batch.frame_index];
    let domain = seq.domain();
    let s = domain.half_extent();
    let lifted: Vec<Var> = params.to_vec();

    let mut sim = tape.var(0.0);
    for &idx in &batch.similarity {
        let p = reference.voxel_center(idx);
        let x = domain.to_normalized(p);
        let u = crate::model::forward_generic(net, &lifted, x.map(|v| tape.var(v)), tape.var(t))?;
        let q: [Var; 3] = std::array::from_fn(|i| u[i] * s[i] + p[i]);
        let d = template.trilinear_sample(&q) - f64::from(reference.intensities()[idx]);
        sim = sim + d.abs_smooth();
    }
    let sim = sim * (1.0 / batch.similarity.len() as f64);

    let mut total = sim;
    let mut breakdown = LossBreakdown {
        similarity: sim.value(),
        ..LossBreakdown::default()
    };
    if config.mu > 0.0 {
        let mat = config.material();
        let mut reg = tape.var(0.0);
        for &idx in &batch.regularization {
            let p = reference.voxel_center(idx);
            let u = tangent_forward(net, params, domain.to_normalized(p), t)?;
            let f: [[Var; 3]; 3] = std::array::from_fn(|i| {
                std::array::from_fn(|j| u[i].tangent[j] * (s[i] / s[j]) + IDENTITY[i][j])
            });
            let state = deformation_state(f);
            let w = if state.j.value() <= 0.0 {
                breakdown.inversions += 1;
                (state.j * state.j + 1.0) * INVERSION_PENALTY
            } else {
                neo_hookean_energy(&state, &mat, Some(p))?
            };
            reg = reg + w;
        }
        let reg = reg * (1.0 / batch.regularization.len() as f64);
        breakdown.regularization = reg.value();
        total = total + reg * config.mu;
    }
    breakdown.total = total.value();
    Ok((total, breakdown))
}

/// Rows per unit of parallel work. Chunk boundaries depend only on the batch,
/// so the fixed-order reduction gives identical sums on any thread count.
const CHUNK: usize = 256;

struct ChunkResult {
    value: f64,
    inversions: usize,
    grad: Vec<f64>,
}

fn reduce(parts: Vec<ChunkResult>, n_params: usize) -> ChunkResult {
    let mut out = ChunkResult {
        value: 0.0,
        inversions: 0,
        grad: vec![0.0; n_params],
    };
    for p in parts {
        out.value += p.value;
        out.inversions += p.inversions;
        for (g, v) in out.grad.iter_mut().zip(&p.grad) {
            *g += v;
        }
    }
    out
}

/// Loss and its exact parameter gradient through the batched engine.
pub fn loss_and_gradient(
    net: &NetworkConfig,
    params: &Parameters,
    seq: &CineSequence,
    batch: &CollocationBatch,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_batch(seq, batch, config)?;
    let engine = BatchNetwork::new(net, params);
    let reference = seq.reference();
    let template = &seq.frames()[batch.frame_index];
    let t = seq.times()[batch.frame_index];
    let domain = seq.domain();
    let s = domain.half_extent();
    let n_params = params.len();

    let n_sim = batch.similarity.len() as f64;
    let sim_parts: Vec<ChunkResult> = batch
        .similarity
        .par_chunks(CHUNK)
        .map(|chunk| {
            let p: Vec<Vec3> = chunk.iter().map(|&i| reference.voxel_center(i)).collect();
            let x: Vec<Vec3> = p.iter().map(|v| domain.to_normalized(*v)).collect();
            let trace = engine.forward(&x, &vec![t; x.len()], false);
            let mut bar = ndarray::Array2::zeros((x.len(), 3));
            let mut value = 0.0;
            for (r, &idx) in chunk.iter().enumerate() {
                let u = trace.displacement(r);
                let q: Vec3 = std::array::from_fn(|i| p[r][i] + s[i] * u[i]);
                let (v, g) = template.sample_with_gradient(q);
                let (a, da) = smooth_abs(v - f64::from(reference.intensities()[idx]));
                value += a;
                for i in 0..3 {
                    bar[[r, i]] = da * g[i] * s[i] / n_sim;
                }
            }
            ChunkResult {
                value,
                inversions: 0,
                grad: engine.backward(&trace, &bar),
            }
        })
        .collect();
    let sim = reduce(sim_parts, n_params);
    let similarity = sim.value / n_sim;
    let mut grad = sim.grad;
    let mut breakdown = LossBreakdown {
        similarity,
        total: similarity,
        ..LossBreakdown::default()
    };

    if config.mu > 0.0 {
        let mat = config.material();
        let n_reg = batch.regularization.len() as f64;
        let weight = config.mu / n_reg;
        let parts: Vec<ChunkResult> = batch
            .regularization
            .par_chunks(CHUNK)
            .map(|chunk| {
                let x: Vec<Vec3> = chunk
                    .iter()
                    .map(|&i| domain.to_normalized(reference.voxel_center(i)))
                    .collect();
                let n = x.len();
                let trace = engine.forward(&x, &vec![t; n], true);
                let mut bar = ndarray::Array2::zeros((4 * n, 3));
                let mut value = 0.0;
                let mut inversions = 0;
                for r in 0..n {
                    let f = domain.physical_gradient(&trace.jacobian(r));
                    let (w, dw, inverted) = energy_and_gradient(&f, &mat);
                    value += w;
                    inversions += usize::from(inverted);
                    for i in 0..3 {
                        for k in 0..3 {
                            bar[[(k + 1) * n + r, i]] = weight * dw[i][k] * s[i] / s[k];
                        }
                    }
                }
                ChunkResult {
                    value,
                    inversions,
                    grad: engine.backward(&trace, &bar),
                }
            })
            .collect();
        let reg = reduce(parts, n_params);
        for (g, v) in grad.iter_mut().zip(&reg.grad) {
            *g += v;
        }
        breakdown.regularization = reg.value / n_reg;
        breakdown.inversions = reg.inversions;
        breakdown.total += config.mu * breakdown.regularization;
    }
    Ok((breakdown, grad))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::usage("adam: parameter, gradient and state lengths differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub frame_index: usize,
    pub similarity: f64,
    pub regularization: f64,
    pub total: f64,
    pub inversions: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub entries: Vec<HistoryEntry>,
    /// Inverted regularization samples summed over all iterations.
    pub total_inversions: usize,
    /// Mean similarity over consecutive windows of `log_every` iterations.
    pub window_similarity: Vec<f64>,
}

/// Initial parameters for a run.
pub fn initial_params(net: &NetworkConfig, config: &TrainConfig) -> Parameters {
    let mut params = init_params(net, config.seed);
    if config.identity_start {
        params.zero_output_layer();
    }
    params
}

/// Stream used for batch sampling, kept apart from the initialization stream.
fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Trains from [`initial_params`]; `on_log` sees the parameters every time a
/// history entry is recorded, which is where callers persist checkpoints.
pub fn train_with(
    net: &NetworkConfig,
    seq: &CineSequence,
    config: &TrainConfig,
    mut on_log: impl FnMut(&Parameters, &HistoryEntry) -> Result<()>,
) -> Result<(Parameters, TrainingHistory)> {
    net.validate()?;
    config.validate()?;
    let mask = if config.mu > 0.0 { seq.mask_indices()? } else { Vec::new() };
    let mut params = initial_params(net, config);
    let mut adam = AdamState::new(params.len());
    let mut rng = sampling_rng(config.seed);
    let mut history = TrainingHistory::default();
    let mut window = 0.0;
    for it in 0..config.iterations {
        let batch = CollocationBatch::draw(&mut rng, seq, &mask, config);
        let (b, grad) = loss_and_gradient(net, &params, seq, &batch, config)?;
        if !b.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at iteration {it}", b.total)));
        }
        adam_step(params.as_mut_slice(), &grad, &mut adam, config)
            .map_err(|e| Error::NonFinite(format!("iteration {it}: {e}")))?;
        history.total_inversions += b.inversions;
        window += b.similarity;
        let last = it + 1 == config.iterations;
        if (it + 1) % config.log_every == 0 {
            history.window_similarity.push(window / config.log_every as f64);
            window = 0.0;
        }
        if it % config.log_every == 0 || last {
            let entry = HistoryEntry {
                iteration: it,
                frame_index: batch.frame_index,
                similarity: b.similarity,
                regularization: b.regularization,
                total: b.total,
                inversions: b.inversions,
            };
            log::debug!(
                "iteration {it}: loss {:.6} similarity {:.6} energy {:.4}",
                b.total,
                b.similarity,
                b.regularization
            );
            on_log(&params, &entry)?;
            history.entries.push(entry);
        }
    }
    Ok((params, history))
}

pub fn train(net: &NetworkConfig, seq: &CineSequence, config: &TrainConfig) -> Result<(Parameters, TrainingHistory)> {
    train_with(net, seq, config, |_, _| Ok(()))
}

/// One row of a hyperparameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub lambda: f64,
    pub metrics: MetricsRecord,
}

impl SweepRow {
    fn key(&self) -> (f64, f64) {
        (self.metrics.jac_dev_mean, -self.metrics.mean_dice())
    }
}

/// Trains one model per `(mu, lambda)` with `base` otherwise, evaluates each
/// at the last frame and ranks rows by mean `|J - 1|` (ties broken by mean
/// Dice).
pub fn grid_sweep(
    grid: &[(f64, f64)],
    net: &NetworkConfig,
    seq: &CineSequence,
    base: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::usage("empty sweep grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(mu, lambda) in grid {
        let config = TrainConfig { mu, lambda, ..base.clone() };
        let (params, _) = train(net, seq, &config)?;
        let model = DeformationModel::new(net.clone(), params, seq.domain())?;
        let metrics = evaluate(&model, seq, seq.len() - 1)?;
        rows.push(SweepRow { mu, lambda, metrics });
    }
    rows.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap_or(std::cmp::Ordering::Equal));
    Ok(rows)
}

/// Trains every network in `variants` on `seq` with the same `config` and
/// reports the band energies of `fitted - truth` at the last frame, over all
/// voxel centers. Variants are named by their activation.
pub fn spectral_experiment(
    variants: &[NetworkConfig],
    seq: &CineSequence,
    truth: &dyn DeformationField,
    config: &TrainConfig,
    edges: &[f64],
) -> Result<BandEnergyReport> {
    if variants.is_empty() {
        return Err(Error::usage("no variants to compare"));
    }
    check_band_edges(edges)?;
    let reference = seq.reference();
    let points = reference.voxel_centers();
    let t = seq.times()[seq.len() - 1];
    let target = VectorField::displacement_of(truth, reference.dims(), &points, t)?;
    let mut fitted = Vec::with_capacity(variants.len());
    for net in variants {
        let (params, _) = train(net, seq, config)?;
        let model = DeformationModel::new(net.clone(), params, seq.domain())?;
        let field = VectorField::displacement_of(&model, reference.dims(), &points, t)?;
        fitted.push((net.activation.to_string(), field));
    }
    spectral_report(&target, &fitted, edges)
}
