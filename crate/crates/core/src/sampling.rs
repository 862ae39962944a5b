//! Image volumes, trilinear sampling with border replication, and warping of
//! masks and landmarks through a deformation.
//!
//! Voxel `(i, j, k)` has its center at physical position
//! `((i + 0.5) sx, (j + 0.5) sy, (k + 0.5) sz)`.

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Domain, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageVolume {
    dims: [usize; 3],
    spacing: Vec3,
    intensities: Vec<f32>,
    mask: Option<Vec<bool>>,
    landmarks: Option<Vec<Vec3>>,
}

fn check_geometry(dims: [usize; 3], spacing: Vec3) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::usage(format!("volume dims must be positive, got {dims:?}")));
    }
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::usage(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(dims.iter().product())
}

impl ImageVolume {
    /// Intensities are x-fastest and must lie in `[0, 1]`.
    pub fn new(dims: [usize; 3], spacing: Vec3, intensities: Vec<f32>) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        if intensities.len() != n {
            return Err(Error::usage(format!(
                "expected {n} intensities for dims {dims:?}, got {}",
                intensities.len()
            )));
        }
        if let Some(bad) = intensities.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::usage(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(ImageVolume {
            dims,
            spacing,
            intensities,
            mask: None,
            landmarks: None,
        })
    }

    /// Min-max rescales arbitrary finite intensities onto `[0, 1]`; a
    /// constant image maps to zeros.
    pub fn from_raw(dims: [usize; 3], spacing: Vec3, raw: &[f32]) -> Result<Self> {
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::usage(format!("non-finite intensity {bad}")));
        }
        let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let range = hi - lo;
        let data = raw
            .iter()
            .map(|v| if range > 0.0 { ((v - lo) / range).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        ImageVolume::new(dims, spacing, data)
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.intensities.len() {
            return Err(Error::usage(format!(
                "mask has {} voxels, volume has {}",
                mask.len(),
                self.intensities.len()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn with_landmarks(mut self, landmarks: Vec<Vec3>) -> Self {
        self.landmarks = Some(landmarks);
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn landmarks(&self) -> Option<&[Vec3]> {
        self.landmarks.as_deref()
    }

    pub fn domain(&self) -> Domain {
        Domain::new(std::array::from_fn(|i| self.dims[i] as f64 * self.spacing[i]))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        [i, j, index / (self.dims[0] * self.dims[1])]
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        f64::from(self.intensities[self.index(i, j, k)])
    }

    pub fn voxel_center(&self, index: usize) -> Vec3 {
        let c = self.coords(index);
        std::array::from_fn(|a| (c[a] as f64 + 0.5) * self.spacing[a])
    }

    pub fn voxel_centers(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.voxel_center(i)).collect()
    }

    /// Flat indices of mask voxels; empty without a mask.
    pub fn mask_indices(&self) -> Vec<usize> {
        self.mask
            .as_ref()
            .map(|m| m.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }

    /// Continuous voxel coordinate of a physical position.
    fn to_voxel(&self, p: f64, axis: usize) -> f64 {
        p / self.spacing[axis] - 0.5
    }

    /// Lower corner index and clamped fraction along one axis.
    fn cell(&self, v: f64, axis: usize) -> (usize, f64, bool) {
        let n = self.dims[axis];
        if n == 1 {
            return (0, 0.0, true);
        }
        let hi = (n - 1) as f64;
        if v <= 0.0 {
            (0, 0.0, true)
        } else if v >= hi {
            (n - 2, 1.0, true)
        } else {
            let i0 = (v.floor() as usize).min(n - 2);
            (i0, v - i0 as f64, false)
        }
    }

    /// Trilinear sample at a physical position, generic over the scalar so
    /// positions carrying tape or tangent data differentiate through it.
    /// Positions outside the grid of voxel centers read the border value and
    /// have zero derivative along the clamped axis.
    pub fn trilinear_sample<T: Real>(&self, p: &[T; 3]) -> T {
        let mut base = [0usize; 3];
        let mut frac: [T; 3] = [p[0].lift(0.0); 3];
        for a in 0..3 {
            let v = self.to_voxel(p[a].value(), a);
            let (i0, f, clamped) = self.cell(v, a);
            base[a] = i0;
            frac[a] = if clamped {
                p[a].lift(f)
            } else {
                p[a] * (1.0 / self.spacing[a]) - (0.5 + i0 as f64)
            };
        }
        let step = self.dims.map(|n| usize::from(n > 1));
        let mut acc: Option<T> = None;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let value = self.get(
                base[0] + o[0] * step[0],
                base[1] + o[1] * step[1],
                base[2] + o[2] * step[2],
            );
            if value == 0.0 {
                continue;
            }
            let mut w = p[0].lift(value);
            for a in 0..3 {
                w = w * if o[a] == 1 { frac[a] } else { -frac[a] + 1.0 };
            }
            acc = Some(acc.map_or(w, |s| s + w));
        }
        acc.unwrap_or_else(|| p[0].lift(0.0))
    }

    /// Sample and its physical-space gradient.
    pub fn sample_with_gradient(&self, p: Vec3) -> (f64, Vec3) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut live = [0.0; 3];
        for a in 0..3 {
            let (i0, f, clamped) = self.cell(self.to_voxel(p[a], a), a);
            base[a] = i0;
            frac[a] = f;
            live[a] = if clamped { 0.0 } else { 1.0 / self.spacing[a] };
        }
        let step = self.dims.map(|n| usize::from(n > 1));
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let c = self.get(
                base[0] + o[0] * step[0],
                base[1] + o[1] * step[1],
                base[2] + o[2] * step[2],
            );
            let w: [f64; 3] = std::array::from_fn(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            let dw: [f64; 3] = std::array::from_fn(|a| if o[a] == 1 { 1.0 } else { -1.0 });
            value += c * w[0] * w[1] * w[2];
            grad[0] += c * dw[0] * w[1] * w[2] * live[0];
            grad[1] += c * w[0] * dw[1] * w[2] * live[1];
            grad[2] += c * w[0] * w[1] * dw[2] * live[2];
        }
        (value, grad)
    }

    /// Mask value of the voxel nearest to `p`; outside the grid is background.
    pub fn mask_nearest(&self, p: Vec3) -> bool {
        let Some(mask) = &self.mask else {
            return false;
        };
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = (self.to_voxel(p[a], a) + 0.5).floor();
            if !(v >= 0.0 && v < self.dims[a] as f64) {
                return false;
            }
            c[a] = v as usize;
        }
        mask[self.index(c[0], c[1], c[2])]
    }
}

/// For every voxel center `X` of the grid, the template mask sampled with
/// nearest neighbor at `phi(X, t)`.
pub fn warp_mask(template: &ImageVolume, field: &dyn DeformationField, t: f64) -> Result<Vec<bool>> {
    if template.mask().is_none() {
        return Err(Error::usage("template volume carries no mask"));
    }
    let mapped = field.map_points(&template.voxel_centers(), t);
    Ok(mapped.iter().map(|q| template.mask_nearest(*q)).collect())
}

/// Resamples `template` onto its own grid through `field`, giving
/// `T(phi(X, t))` at every voxel center. The mask and landmarks are dropped.
pub fn warp_volume(template: &ImageVolume, field: &dyn DeformationField, t: f64) -> Result<ImageVolume> {
    let mapped = field.map_points(&template.voxel_centers(), t);
    let data = mapped
        .iter()
        .map(|q| (template.sample_with_gradient(*q).0 as f32).clamp(0.0, 1.0))
        .collect();
    ImageVolume::new(template.dims, template.spacing, data)
}

/// `phi(x_i, t)` for every landmark.
pub fn warp_landmarks(landmarks: &[Vec3], field: &dyn DeformationField, t: f64) -> Vec<Vec3> {
    field.map_points(landmarks, t)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{TangentValue, Tape};
    use crate::geometry::AffineField;

    fn random_volume(n: usize, seed: u64) -> ImageVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n * n).map(|_| rng.random::<f32>()).collect();
        ImageVolume::new([n; 3], [1.0, 1.5, 0.75], data).unwrap()
    }

    /// Direct weights over the eight corners, written independently of the
    /// production path.
    fn oracle(vol: &ImageVolume, p: Vec3) -> f64 {
        let d = vol.dims();
        let s = vol.spacing();
        let mut total = 0.0;
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let idx = [i, j, k];
                    let mut w = 1.0;
                    for a in 0..3 {
                        let v = (p[a] / s[a] - 0.5).clamp(0.0, (d[a] - 1) as f64);
                        w *= (1.0 - (v - idx[a] as f64).abs()).max(0.0);
                    }
                    total += w * vol.get(i, j, k);
                }
            }
        }
        total
    }

    #[test]
    fn grid_node_and_midpoint() {
        let vol = random_volume(4, 1);
        let center = vol.voxel_center(vol.index(1, 2, 3));
        assert_eq!(vol.trilinear_sample(&center), vol.get(1, 2, 3));
        let mut data = vec![0.0f32; 8];
        data[1] = 1.0;
        let v = ImageVolume::new([2, 2, 2], [1.0; 3], data).unwrap();
        assert!((v.trilinear_sample(&[1.0, 0.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_weight_oracle() {
        let vol = random_volume(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ext = vol.domain().extent;
        for _ in 0..500 {
            let p: Vec3 = std::array::from_fn(|a| rng.random_range(-1.0..ext[a] + 1.0));
            let want = oracle(&vol, p);
            assert!((vol.trilinear_sample(&p) - want).abs() < 1e-12);
            assert!((vol.sample_with_gradient(p).0 - want).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_fields_are_reproduced() {
        let n = 6;
        let spacing = [1.0, 2.0, 0.5];
        let (a, b) = ([0.01, 0.02, 0.03], 0.1);
        let mut data = vec![0.0f32; n * n * n];
        let probe = ImageVolume::new([n; 3], spacing, data.clone()).unwrap();
        for (idx, v) in data.iter_mut().enumerate() {
            let c = probe.voxel_center(idx);
            *v = (a[0] * c[0] + a[1] * c[1] + a[2] * c[2] + b) as f32;
        }
        let vol = ImageVolume::new([n; 3], spacing, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p: Vec3 = std::array::from_fn(|ax| rng.random_range(0.5..n as f64 - 0.5) * spacing[ax]);
            // the stored grid is f32, so compare against the f32-rounded corners
            let want = oracle(&vol, p);
            assert!((vol.trilinear_sample(&p) - want).abs() < 1e-10);
            let exact = a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + b;
            assert!((want - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_and_tangents() {
        let vol = random_volume(8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = vol.spacing();
        let mut checked = 0;
        while checked < 200 {
            let p: Vec3 = std::array::from_fn(|a| rng.random_range(0.6..7.4) * s[a]);
            let away = (0..3).all(|a| {
                let f = (p[a] / s[a] - 0.5).fract();
                f > 0.1 && f < 0.9
            });
            if !away {
                continue;
            }
            checked += 1;
            let (_, g) = vol.sample_with_gradient(p);
            let tape = Tape::new();
            let x = TangentValue::seed(&tape, p);
            let tv = vol.trilinear_sample(&x);
            for a in 0..3 {
                let h = 1e-6 * s[a];
                let (mut pp, mut pm) = (p, p);
                pp[a] += h;
                pm[a] -= h;
                let fd = (vol.trilinear_sample(&pp) - vol.trilinear_sample(&pm)) / (2.0 * h);
                assert!((g[a] - fd).abs() < 1e-6 * fd.abs().max(1e-3), "axis {a}: {} vs {fd}", g[a]);
                assert!((tv.tangent[a].value() - g[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clamped_positions_replicate_the_border() {
        let vol = random_volume(4, 7);
        let v = vol.trilinear_sample(&[-5.0, 0.5, 0.375]);
        assert_eq!(v, vol.get(0, 0, 0));
        let (_, g) = vol.sample_with_gradient([-5.0, 2.2, 1.3]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn samples_stay_within_corner_range() {
        let vol = random_volume(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let p: Vec3 = std::array::from_fn(|a| rng.random_range(0.5..4.5) * vol.spacing()[a]);
            let v = vol.trilinear_sample(&p);
            let c: [usize; 3] = std::array::from_fn(|a| ((p[a] / vol.spacing()[a] - 0.5).floor() as usize).min(3));
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for o in 0..8 {
                let x = vol.get(c[0] + (o & 1), c[1] + ((o >> 1) & 1), c[2] + ((o >> 2) & 1));
                lo = lo.min(x);
                hi = hi.max(x);
            }
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn construction_is_validated() {
        assert!(ImageVolume::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(ImageVolume::new([2, 2, 2], [0.0, 1.0, 1.0], vec![0.0; 8]).is_err());
        assert!(ImageVolume::new([2, 2, 2], [1.0; 3], vec![1.5; 8]).is_err());
        let v = ImageVolume::from_raw([2, 1, 1], [1.0; 3], &[10.0, 30.0]).unwrap();
        assert_eq!(v.intensities(), &[0.0, 1.0]);
        assert!(v.with_mask(vec![true]).is_err());
    }

    fn cube_mask_volume() -> ImageVolume {
        let n = 12;
        let vol = ImageVolume::new([n; 3], [1.0; 3], vec![0.0; n * n * n]).unwrap();
        let mask = (0..n * n * n)
            .map(|i| {
                let c = vol.coords(i);
                c.iter().all(|&v| (3..8).contains(&v))
            })
            .collect();
        vol.with_mask(mask).unwrap()
    }

    #[test]
    fn identity_warp_keeps_the_mask() {
        let vol = cube_mask_volume();
        let warped = warp_mask(&vol, &AffineField::identity(), 1.0).unwrap();
        assert_eq!(warped, vol.mask().unwrap());
    }

    #[test]
    fn translation_shifts_the_mask() {
        let vol = cube_mask_volume();
        // phi(X) = X + 2 e_x: the warped mask is the template shifted by -2
        let warped = warp_mask(&vol, &AffineField::translation([2.0, 0.0, 0.0]), 1.0).unwrap();
        let mask = vol.mask().unwrap();
        for idx in 0..vol.len() {
            let [i, j, k] = vol.coords(idx);
            let want = i + 2 < 12 && mask[vol.index(i + 2, j, k)];
            assert_eq!(warped[idx], want);
        }
    }

    #[test]
    fn landmarks_follow_the_field() {
        let lm = vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(warp_landmarks(&lm, &AffineField::identity(), 0.5), lm);
        let moved = warp_landmarks(&lm, &AffineField::translation([0.5, -1.0, 2.0]), 1.0);
        assert_eq!(moved[1], [4.5, 4.0, 8.0]);
    }

    #[test]
    fn integer_translation_shifts_intensities() {
        let vol = random_volume(6, 3);
        let warped = warp_volume(&vol, &AffineField::translation([1.0, 0.0, 0.0]), 1.0).unwrap();
        for idx in 0..vol.len() {
            let [i, j, k] = vol.coords(idx);
            let want = vol.get((i + 1).min(5), j, k);
            assert!((warped.intensities()[idx] as f64 - want).abs() < 1e-6);
        }
        let same = warp_volume(&vol, &AffineField::identity(), 0.3).unwrap();
        assert_eq!(same.intensities(), vol.intensities());
    }
}
