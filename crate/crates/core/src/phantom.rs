//! Synthetic beating-ventricle sequences with a known, volume-preserving
//! ground-truth motion.
//!
//! The left ventricle is a cylindrical shell about the vertical axis through
//! the domain center. Over the cycle it contracts radially with
//! `r' = sqrt(r^2 - c(t))` and twists by `rho(t)`, which preserves volume
//! exactly. An optional in-plane divergence-free overlay adds a single
//! high-frequency component for spectral-bias experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{det3, matmul, DeformationField, Mat3, Vec3, IDENTITY};
use crate::sampling::ImageVolume;
use crate::training::CineSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: Vec3,
    pub frames: usize,
    /// Inner and outer wall radius at end-diastole, mm.
    pub r_in: f64,
    pub r_out: f64,
    /// Peak `c(t)` in `r'^2 = r^2 - c(t)`, mm^2.
    pub c_max: f64,
    /// Peak twist, radians.
    pub twist: f64,
    /// Axial extent of the ventricle, mm.
    pub z_range: [f64; 2],
    /// Peak displacement of the overlay, mm.
    pub a_hf: f64,
    /// Overlay frequency, cycles per domain length.
    pub k_hf: f64,
    pub texture_seed: u64,
    pub texture_modes: usize,
    /// Highest texture frequency, cycles per voxel.
    pub texture_max_frequency: f64,
    pub landmark_count: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64; 3],
            spacing: [1.0; 3],
            frames: 8,
            r_in: 14.0,
            r_out: 22.0,
            c_max: 120.0,
            twist: PI / 16.0,
            z_range: [8.0, 56.0],
            a_hf: 0.0,
            k_hf: 8.0,
            texture_seed: 0,
            texture_modes: 48,
            texture_max_frequency: 0.2,
            landmark_count: 12,
        }
    }
}

/// Width of the logistic edges of the intensity annulus, mm.
const EDGE_WIDTH: f64 = 0.6;
/// Lowest texture frequency, cycles/mm.
const TEXTURE_K_MIN: f64 = 0.03;
/// Fixed-point iterations when inverting the overlay.
const OVERLAY_INVERSE_ITERS: usize = 60;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        if self.dims.contains(&0) || !self.spacing.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return err(format!("bad grid {:?} / {:?}", self.dims, self.spacing));
        }
        if self.frames < 2 {
            return err(format!("need at least 2 frames, got {}", self.frames));
        }
        let half = self.extent()[0].min(self.extent()[1]) / 2.0;
        if !(0.0 < self.r_in && self.r_in < self.r_out && self.r_out < half) {
            return err(format!(
                "radii must satisfy 0 < r_in < r_out < {half}, got {} / {}",
                self.r_in, self.r_out
            ));
        }
        if !(0.0..self.r_in * self.r_in).contains(&self.c_max) {
            return err(format!("c_max must lie in [0, r_in^2), got {}", self.c_max));
        }
        let [z0, z1] = self.z_range;
        if !(0.0 <= z0 && z0 < z1 && z1 <= self.extent()[2]) {
            return err(format!("z_range {:?} outside the domain", self.z_range));
        }
        if !(self.a_hf >= 0.0 && self.k_hf > 0.0 && self.twist.is_finite()) {
            return err("overlay needs a_hf >= 0 and k_hf > 0".into());
        }
        if self.texture_modes == 0 {
            return err("texture needs at least one mode".into());
        }
        let k_min = TEXTURE_K_MIN * self.spacing.iter().copied().fold(0.0, f64::max);
        if !(self.texture_max_frequency > k_min && self.texture_max_frequency <= 0.5) {
            return err(format!(
                "texture_max_frequency must lie in ({k_min}, 0.5] cycles/voxel, got {}",
                self.texture_max_frequency
            ));
        }
        Ok(())
    }

    pub fn extent(&self) -> Vec3 {
        std::array::from_fn(|i| self.dims[i] as f64 * self.spacing[i])
    }

    /// Normalized frame times `i / (frames - 1)`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.frames).map(|i| i as f64 / (self.frames - 1) as f64).collect()
    }
}

/// Smooth ramp from 0 at end-diastole to 1 at the last frame.
pub fn ramp(t: f64) -> f64 {
    0.5 * (1.0 - (PI * t).cos())
}

/// The ground-truth map `phi(X, t)` of a phantom: contraction and twist
/// followed by the optional overlay.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomField {
    spec: PhantomSpec,
    center: [f64; 2],
}

impl PhantomField {
    pub fn new(spec: &PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let e = spec.extent();
        Ok(PhantomField {
            spec: spec.clone(),
            center: [e[0] / 2.0, e[1] / 2.0],
        })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    fn polar(&self, p: Vec3) -> (f64, f64, f64) {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (dx, dy, dx * dx + dy * dy)
    }

    /// Contraction and twist. Points with `r^2 <= c(t)` collapse onto the
    /// axis.
    pub fn base_forward(&self, p: Vec3, t: f64) -> Vec3 {
        let s = ramp(t);
        let c = self.spec.c_max * s;
        if c == 0.0 && self.spec.twist * s == 0.0 {
            return p;
        }
        let (dx, dy, r2) = self.polar(p);
        let theta = dy.atan2(dx) + self.spec.twist * s;
        let r1 = (r2 - c).max(0.0).sqrt();
        [self.center[0] + r1 * theta.cos(), self.center[1] + r1 * theta.sin(), p[2]]
    }

    pub fn base_inverse(&self, q: Vec3, t: f64) -> Vec3 {
        let s = ramp(t);
        let c = self.spec.c_max * s;
        if c == 0.0 && self.spec.twist * s == 0.0 {
            return q;
        }
        let (dx, dy, r2) = self.polar(q);
        let theta = dy.atan2(dx) - self.spec.twist * s;
        let r0 = (r2 + c).sqrt();
        [self.center[0] + r0 * theta.cos(), self.center[1] + r0 * theta.sin(), q[2]]
    }

    fn overlay_amplitude(&self, t: f64) -> (f64, f64) {
        let w = 2.0 * PI * self.spec.k_hf / self.spec.extent()[0];
        (self.spec.a_hf * ramp(t), w)
    }

    /// Overlay displacement at an already contracted position.
    pub fn overlay(&self, p: Vec3, t: f64) -> Vec3 {
        let (a, w) = self.overlay_amplitude(t);
        if a == 0.0 {
            return [0.0; 3];
        }
        let (sx, cx) = (w * p[0]).sin_cos();
        let (sy, cy) = (w * p[1]).sin_cos();
        [a * sx * cy, -a * cx * sy, 0.0]
    }

    fn overlay_gradient(&self, p: Vec3, t: f64) -> Mat3 {
        let (a, w) = self.overlay_amplitude(t);
        let (sx, cx) = (w * p[0]).sin_cos();
        let (sy, cy) = (w * p[1]).sin_cos();
        let d = a * w * cx * cy;
        let o = a * w * sx * sy;
        [[1.0 + d, -o, 0.0], [o, 1.0 - d, 0.0], [0.0, 0.0, 1.0]]
    }

    fn base_gradient(&self, p: Vec3, t: f64) -> Mat3 {
        let s = ramp(t);
        let c = self.spec.c_max * s;
        let (dx, dy, r2) = self.polar(p);
        let (sn, cs) = (self.spec.twist * s).sin_cos();
        let rot = [[cs, -sn, 0.0], [sn, cs, 0.0], [0.0, 0.0, 1.0]];
        if c == 0.0 {
            return rot;
        }
        if r2 <= c {
            let mut m = [[0.0; 3]; 3];
            m[2][2] = 1.0;
            return m;
        }
        let r = r2.sqrt();
        let r1 = (r2 - c).sqrt();
        let g = r1 / r;
        let h = c / (r1 * r2 * r);
        let v = [dx, dy];
        let mut stretch = IDENTITY;
        for i in 0..2 {
            for k in 0..2 {
                stretch[i][k] = g * IDENTITY[i][k] + h * v[i] * v[k];
            }
        }
        matmul(&rot, &stretch)
    }

    pub fn forward(&self, p: Vec3, t: f64) -> Vec3 {
        let b = self.base_forward(p, t);
        let h = self.overlay(b, t);
        [b[0] + h[0], b[1] + h[1], b[2]]
    }

    /// `phi^-1(q, t)`; the overlay is inverted by fixed-point iteration,
    /// which contracts because its peak strain stays below 1.
    pub fn inverse(&self, q: Vec3, t: f64) -> Vec3 {
        let mut b = q;
        if self.spec.a_hf > 0.0 {
            for _ in 0..OVERLAY_INVERSE_ITERS {
                let h = self.overlay(b, t);
                b = [q[0] - h[0], q[1] - h[1], q[2]];
            }
        }
        self.base_inverse(b, t)
    }

    pub fn gradient(&self, p: Vec3, t: f64) -> Mat3 {
        let gb = self.base_gradient(p, t);
        if self.spec.a_hf == 0.0 {
            return gb;
        }
        matmul(&self.overlay_gradient(self.base_forward(p, t), t), &gb)
    }

    /// Whether a reference position lies in the myocardial shell.
    pub fn in_wall(&self, p: Vec3) -> bool {
        let (_, _, r2) = self.polar(p);
        let r = r2.sqrt();
        let [z0, z1] = self.spec.z_range;
        r >= self.spec.r_in && r <= self.spec.r_out && p[2] >= z0 && p[2] <= z1
    }
}

impl DeformationField for PhantomField {
    fn map_points(&self, points: &[Vec3], t: f64) -> Vec<Vec3> {
        points.iter().map(|p| self.forward(*p, t)).collect()
    }

    fn gradients(&self, points: &[Vec3], t: f64) -> Vec<Mat3> {
        points.iter().map(|p| self.gradient(*p, t)).collect()
    }
}

/// Displacement `phi(X, t) - X` and `J = det(d phi / d X)`. Inside the
/// collapsed core (`r^2 <= c(t)`) the map sends points onto the axis and
/// `J = 0`.
pub fn analytic_deformation(spec: &PhantomSpec, x: Vec3, t: f64) -> Result<(Vec3, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::usage(format!("t must lie in [0, 1], got {t}")));
    }
    let field = PhantomField::new(spec)?;
    let y = field.forward(x, t);
    Ok((std::array::from_fn(|i| y[i] - x[i]), det3(&field.gradient(x, t))))
}

/// Band-limited random texture: a sum of plane waves normalized to unit
/// variance.
#[derive(Clone, Debug)]
struct Texture {
    waves: Vec<(Vec3, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, modes: usize, k_max: f64) -> Self {
        let waves = (0..modes)
            .map(|_| {
                let mut d: Vec3 = std::array::from_fn(|_| rng.sample(StandardNormal));
                let len = crate::geometry::norm(d).max(1e-12);
                let k = rng.random_range(TEXTURE_K_MIN..k_max) * 2.0 * PI / len;
                d = d.map(|v| v * k);
                (d, rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Texture { waves }
    }

    fn eval(&self, p: Vec3) -> f64 {
        let sum: f64 = self
            .waves
            .iter()
            .map(|(k, phase)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).cos())
            .sum();
        sum * (2.0 / self.waves.len() as f64).sqrt()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x / EDGE_WIDTH).exp())
}

/// A generated sequence with its ground truth.
#[derive(Clone, Debug)]
pub struct PhantomSequence {
    pub sequence: CineSequence,
    /// Landmark positions per frame; entry 0 is the reference set.
    pub landmarks: Vec<Vec<Vec3>>,
    pub field: PhantomField,
}

impl PhantomSequence {
    /// Ground-truth landmark positions at the last frame.
    pub fn final_landmarks(&self) -> &[Vec3] {
        self.landmarks.last().expect("at least two frames")
    }
}

fn landmarks(spec: &PhantomSpec, center: [f64; 2]) -> Vec<Vec3> {
    let n = spec.landmark_count;
    if n == 0 {
        return Vec::new();
    }
    let levels = n.min(3);
    let per = n.div_ceil(levels);
    let mid = 0.5 * (spec.r_in + spec.r_out);
    let [z0, z1] = spec.z_range;
    let margin = (6.0f64).min(0.25 * (z1 - z0));
    let (lo, hi) = (z0 + margin, z1 - margin);
    (0..n)
        .map(|i| {
            let level = i / per;
            let z = if levels == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * level as f64 / (levels - 1) as f64 };
            let angle = 0.3 + 2.0 * PI * (i % per) as f64 / per as f64;
            [center[0] + mid * angle.cos(), center[1] + mid * angle.sin(), z]
        })
        .collect()
}

/// Renders every frame by pulling the reference texture back through the
/// inverse map, so that `frame_i(phi(X, t_i)) = frame_0(X)`.
pub fn generate_sequence(spec: &PhantomSpec) -> Result<PhantomSequence> {
    let field = PhantomField::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let k_max = spec.texture_max_frequency / spec.spacing.iter().copied().fold(0.0, f64::max);
    let myo = Texture::new(&mut rng, spec.texture_modes, k_max);
    let background = Texture::new(&mut rng, spec.texture_modes, k_max);
    let [z0, z1] = spec.z_range;
    let center = field.center;
    let intensity = |p: Vec3| {
        let r = (p[0] - center[0]).hypot(p[1] - center[1]);
        let shell = logistic(r - spec.r_in)
            * logistic(spec.r_out - r)
            * logistic(p[2] - z0)
            * logistic(z1 - p[2]);
        (0.2 + 0.08 * background.eval(p) + shell * (0.55 + 0.15 * myo.eval(p))).clamp(0.0, 1.0)
    };
    let grid = ImageVolume::new(spec.dims, spec.spacing, vec![0.0; spec.dims.iter().product()])?;
    let centers = grid.voxel_centers();
    let reference_landmarks = landmarks(spec, center);
    let times = spec.times();
    let frames: Vec<Result<(ImageVolume, Vec<Vec3>)>> = times
        .par_iter()
        .map(|&t| {
            let (data, mask): (Vec<f32>, Vec<bool>) = centers
                .iter()
                .map(|q| {
                    let p = field.inverse(*q, t);
                    (intensity(p) as f32, field.in_wall(p))
                })
                .unzip();
            let lm = field.map_points(&reference_landmarks, t);
            let vol = ImageVolume::new(spec.dims, spec.spacing, data)?
                .with_mask(mask)?
                .with_landmarks(lm.clone());
            Ok((vol, lm))
        })
        .collect();
    let (volumes, landmarks): (Vec<_>, Vec<_>) = frames.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(PhantomSequence {
        sequence: CineSequence::new(volumes, times)?,
        landmarks,
        field,
    })
}
