//! Registration quality measures: overlap, contour distance, volume change,
//! landmark error and the radial band energies of a displacement residual.

use std::collections::HashMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{det3, norm, DeformationField, Vec3};
use crate::sampling::warp_mask;
use crate::training::CineSequence;

/// `2|a & b| / (|a| + |b|)`, defined as 1 when both are empty.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage(format!("dice on masks of {} and {} voxels", a.len(), b.len())));
    }
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        both += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 })
}

/// A 2D binary image, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSlice {
    pub dims: [usize; 2],
    pub data: Vec<bool>,
}

impl MaskSlice {
    pub fn new(dims: [usize; 2], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(Error::usage(format!("slice {dims:?} needs {} pixels, got {}", dims[0] * dims[1], data.len())));
        }
        Ok(MaskSlice { dims, data })
    }

    /// Axial slice `z` of an x-fastest volume mask.
    pub fn axial(mask: &[bool], dims: [usize; 3], z: usize) -> Result<Self> {
        if mask.len() != dims.iter().product::<usize>() || z >= dims[2] {
            return Err(Error::usage(format!("slice {z} outside mask of dims {dims:?}")));
        }
        let n = dims[0] * dims[1];
        MaskSlice::new([dims[0], dims[1]], mask[z * n..(z + 1) * n].to_vec())
    }

    fn get(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.dims[0]
            && (j as usize) < self.dims[1]
            && self.data[i as usize + self.dims[0] * j as usize]
    }

    /// Pixel centers (in pixel units) of mask pixels with at least one
    /// background 4-neighbor; the outside of the image counts as background.
    pub fn contour(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for j in 0..self.dims[1] as isize {
            for i in 0..self.dims[0] as isize {
                if self.get(i, j)
                    && !(self.get(i - 1, j) && self.get(i + 1, j) && self.get(i, j - 1) && self.get(i, j + 1))
                {
                    out.push([i as usize, j as usize]);
                }
            }
        }
        out
    }
}

/// Uniform bucket grid over contour points for nearest-neighbor queries.
struct Buckets<'a> {
    points: &'a [[usize; 2]],
    cell: usize,
    cells: HashMap<[usize; 2], Vec<usize>>,
    extent: [usize; 2],
}

impl<'a> Buckets<'a> {
    fn new(points: &'a [[usize; 2]], dims: [usize; 2]) -> Self {
        let cell = 4;
        let mut cells: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (k, p) in points.iter().enumerate() {
            cells.entry([p[0] / cell, p[1] / cell]).or_default().push(k);
        }
        Buckets {
            points,
            cell,
            cells,
            extent: [dims[0].div_ceil(cell), dims[1].div_ceil(cell)],
        }
    }

    /// Nearest distance from `q` in physical units; rings of cells are
    /// searched outward until no closer point can remain.
    fn nearest(&self, q: [usize; 2], spacing: [f64; 2]) -> f64 {
        let home = [(q[0] / self.cell) as isize, (q[1] / self.cell) as isize];
        let min_spacing = spacing[0].min(spacing[1]);
        let max_ring = self.extent[0].max(self.extent[1]) as isize;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // points beyond the rings searched so far are at least
            // (ring - 1) * cell + 1 pixels away along some axis
            if ring > 0 && best <= ((ring as usize - 1) * self.cell + 1) as f64 * min_spacing {
                break;
            }
            for ci in home[0] - ring..=home[0] + ring {
                for cj in home[1] - ring..=home[1] + ring {
                    if (ci - home[0]).abs().max((cj - home[1]).abs()) != ring || ci < 0 || cj < 0 {
                        continue;
                    }
                    if let Some(list) = self.cells.get(&[ci as usize, cj as usize]) {
                        for &k in list {
                            let p = self.points[k];
                            let dx = (p[0] as f64 - q[0] as f64) * spacing[0];
                            let dy = (p[1] as f64 - q[1] as f64) * spacing[1];
                            best = best.min((dx * dx + dy * dy).sqrt());
                        }
                    }
                }
            }
        }
        best
    }
}

/// Symmetric mean contour distance in physical units; `None` when either
/// slice has no mask pixels.
pub fn mean_contour_distance(a: &MaskSlice, b: &MaskSlice, spacing: [f64; 2]) -> Result<Option<f64>> {
    if a.dims != b.dims {
        return Err(Error::usage(format!("contour distance on slices {:?} and {:?}", a.dims, b.dims)));
    }
    let (ca, cb) = (a.contour(), b.contour());
    if ca.is_empty() || cb.is_empty() {
        return Ok(None);
    }
    let directed = |from: &[[usize; 2]], to: &[[usize; 2]]| {
        let grid = Buckets::new(to, a.dims);
        from.iter().map(|q| grid.nearest(*q, spacing)).sum::<f64>() / from.len() as f64
    };
    Ok(Some(0.5 * (directed(&ca, &cb) + directed(&cb, &ca))))
}

/// Axial indices at 25%, 50% and 75% of the mask's z-extent, rounded half
/// up.
pub fn slice_levels(mask: &[bool], dims: [usize; 3]) -> Result<[usize; 3]> {
    let n = dims[0] * dims[1];
    if mask.len() != n * dims[2] {
        return Err(Error::usage("mask does not match dims"));
    }
    let occupied: Vec<usize> = (0..dims[2]).filter(|&z| mask[z * n..(z + 1) * n].iter().any(|v| *v)).collect();
    let (Some(&lo), Some(&hi)) = (occupied.first(), occupied.last()) else {
        return Err(Error::usage("slice levels of an empty mask"));
    };
    Ok([0.25, 0.5, 0.75].map(|q| (lo as f64 + q * (hi - lo) as f64 + 0.5).floor() as usize))
}

/// Per-landmark Euclidean distance.
pub fn landmark_tracking_error(predicted: &[Vec3], truth: &[Vec3]) -> Result<Vec<f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::usage(format!("{} predicted vs {} true landmarks", predicted.len(), truth.len())));
    }
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(p, q)| norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]]))
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    /// Mean `|det F - 1|`, inverted samples included.
    pub mean_abs_deviation: f64,
    pub inverted_fraction: f64,
}

/// Volume-change statistics of `field` over physical `points`.
pub fn jacobian_deviation(field: &dyn DeformationField, points: &[Vec3], t: f64) -> Result<JacobianStats> {
    if points.is_empty() {
        return Err(Error::usage("jacobian deviation over an empty mask"));
    }
    let dets: Vec<f64> = field.gradients(points, t).iter().map(det3).collect();
    let n = dets.len() as f64;
    Ok(JacobianStats {
        mean_abs_deviation: dets.iter().map(|j| (j - 1.0).abs()).sum::<f64>() / n,
        inverted_fraction: dets.iter().filter(|j| **j <= 0.0).count() as f64 / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub level: String,
    pub index: usize,
    pub dsc: f64,
    /// Absent when either contour is empty.
    pub mcd: Option<f64>,
    pub jac_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub frame_index: usize,
    pub time: f64,
    /// Basal, mid and apical slices.
    pub slices: Vec<SliceMetrics>,
    /// Mean `|det F - 1|` over the whole reference mask.
    pub jac_dev_mean: f64,
    pub landmark_errors: Vec<f64>,
    pub inversion_fraction: f64,
}

impl MetricsRecord {
    pub fn mean_dice(&self) -> f64 {
        self.slices.iter().map(|s| s.dsc).sum::<f64>() / self.slices.len().max(1) as f64
    }

    pub fn mean_landmark_error(&self) -> Option<f64> {
        if self.landmark_errors.is_empty() {
            None
        } else {
            Some(self.landmark_errors.iter().sum::<f64>() / self.landmark_errors.len() as f64)
        }
    }
}

pub const LEVEL_NAMES: [&str; 3] = ["basal", "mid", "apical"];

/// Registers reference frame to `frame_index` with `field` and scores it:
/// the template mask pulled back through the field against the reference
/// mask per slice, Jacobian statistics over the reference mask, and warped
/// reference landmarks against the template's landmarks when both frames
/// carry them.
pub fn evaluate(field: &dyn DeformationField, seq: &CineSequence, frame_index: usize) -> Result<MetricsRecord> {
    if frame_index >= seq.len() {
        return Err(Error::usage(format!("frame {frame_index} of {}", seq.len())));
    }
    let reference = seq.reference();
    let template = &seq.frames()[frame_index];
    let t = seq.times()[frame_index];
    let ref_mask = reference
        .mask()
        .ok_or_else(|| Error::usage("reference frame carries no mask"))?;
    let dims = reference.dims();
    let warped = warp_mask(template, field, t)?;
    let levels = slice_levels(ref_mask, dims)?;

    let mask_idx = reference.mask_indices();
    let points: Vec<Vec3> = mask_idx.iter().map(|&i| reference.voxel_center(i)).collect();
    let dets: Vec<f64> = field.gradients(&points, t).iter().map(det3).collect();
    let n = dets.len() as f64;
    let jac_dev_mean = dets.iter().map(|j| (j - 1.0).abs()).sum::<f64>() / n;
    let inversion_fraction = dets.iter().filter(|j| **j <= 0.0).count() as f64 / n;

    let spacing = reference.spacing();
    let mut slices = Vec::with_capacity(3);
    for (name, &z) in LEVEL_NAMES.iter().zip(&levels) {
        let a = MaskSlice::axial(&warped, dims, z)?;
        let b = MaskSlice::axial(ref_mask, dims, z)?;
        let in_slice: Vec<f64> = mask_idx
            .iter()
            .zip(&dets)
            .filter(|(i, _)| reference.coords(**i)[2] == z)
            .map(|(_, j)| (j - 1.0).abs())
            .collect();
        slices.push(SliceMetrics {
            level: (*name).to_string(),
            index: z,
            dsc: dice(&a.data, &b.data)?,
            mcd: mean_contour_distance(&a, &b, [spacing[0], spacing[1]])?,
            jac_dev: in_slice.iter().sum::<f64>() / in_slice.len().max(1) as f64,
        });
    }

    let landmark_errors = match (reference.landmarks(), template.landmarks()) {
        (Some(r), Some(truth)) if r.len() == truth.len() => {
            landmark_tracking_error(&field.map_points(r, t), truth)?
        }
        _ => Vec::new(),
    };
    Ok(MetricsRecord {
        frame_index,
        time: t,
        slices,
        jac_dev_mean,
        landmark_errors,
        inversion_fraction,
    })
}

/// A displacement field sampled on a regular grid, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub dims: [usize; 3],
    pub values: Vec<Vec3>,
}

impl VectorField {
    pub fn new(dims: [usize; 3], values: Vec<Vec3>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::usage("vector field length does not match dims"));
        }
        Ok(VectorField { dims, values })
    }

    /// `phi(X, t) - X` at the given physical grid points.
    pub fn displacement_of(field: &dyn DeformationField, dims: [usize; 3], points: &[Vec3], t: f64) -> Result<Self> {
        let mapped = field.map_points(points, t);
        VectorField::new(
            dims,
            mapped
                .iter()
                .zip(points)
                .map(|(y, x)| [y[0] - x[0], y[1] - x[1], y[2] - x[2]])
                .collect(),
        )
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum()
    }
}

fn fft_axis(data: &mut [Complex<f64>], dims: [usize; 3], axis: usize, planner: &mut FftPlanner<f64>) {
    let n = dims[axis];
    let fft = planner.plan_fft_forward(n);
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut line = vec![Complex::default(); n];
    for start in 0..data.len() {
        // `start` is the first element of a line iff its coordinate on `axis` is 0
        if (start / stride) % n != 0 {
            continue;
        }
        for (k, v) in line.iter_mut().enumerate() {
            *v = data[start + k * stride];
        }
        fft.process(&mut line);
        for (k, v) in line.iter().enumerate() {
            data[start + k * stride] = *v;
        }
    }
}

/// Signed frequency index of DFT bin `k` of an `n`-point transform.
fn frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Band edges must start at 0 and increase strictly.
pub fn check_band_edges(edges: &[f64]) -> Result<()> {
    if edges.first() != Some(&0.0) || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::usage(format!("band edges must start at 0 and increase: {edges:?}")));
    }
    Ok(())
}

/// Energy of `residual` in radial frequency bands (cycles per domain).
/// `edges` are the ascending lower band edges, starting at 0; the last band
/// is unbounded above. Normalized so the bands sum to the spatial energy
/// `sum |r|^2`.
pub fn band_energies(residual: &VectorField, edges: &[f64]) -> Result<Vec<f64>> {
    check_band_edges(edges)?;
    let dims = residual.dims;
    let n = residual.values.len();
    let mut energy = vec![0.0; edges.len()];
    let mut planner = FftPlanner::new();
    for c in 0..3 {
        let mut data: Vec<Complex<f64>> = residual.values.iter().map(|v| Complex::new(v[c], 0.0)).collect();
        for axis in 0..3 {
            fft_axis(&mut data, dims, axis, &mut planner);
        }
        for (idx, v) in data.iter().enumerate() {
            let i = idx % dims[0];
            let j = (idx / dims[0]) % dims[1];
            let k = idx / (dims[0] * dims[1]);
            let kr = (frequency(i, dims[0]).powi(2) + frequency(j, dims[1]).powi(2) + frequency(k, dims[2]).powi(2)).sqrt();
            let band = edges.iter().rposition(|e| kr >= *e).unwrap_or(0);
            energy[band] += v.norm_sqr() / n as f64;
        }
    }
    Ok(energy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEnergyReport {
    /// Lower band edges in cycles per domain; the last band is open.
    pub band_edges: Vec<f64>,
    /// Per variant, residual energy per band.
    pub variants: Vec<(String, Vec<f64>)>,
}

impl BandEnergyReport {
    pub fn energies(&self, variant: &str) -> Option<&[f64]> {
        self.variants.iter().find(|(n, _)| n == variant).map(|(_, e)| e.as_slice())
    }
}

/// Band energies of `fitted - target` for every fitted field.
pub fn spectral_report(
    target: &VectorField,
    fitted: &[(String, VectorField)],
    edges: &[f64],
) -> Result<BandEnergyReport> {
    let mut variants = Vec::with_capacity(fitted.len());
    for (name, f) in fitted {
        if f.dims != target.dims {
            return Err(Error::usage(format!("{name}: field dims {:?} differ from target {:?}", f.dims, target.dims)));
        }
        let residual = VectorField {
            dims: f.dims,
            values: f
                .values
                .iter()
                .zip(&target.values)
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
                .collect(),
        };
        variants.push((name.clone(), band_energies(&residual, edges)?));
    }
    Ok(BandEnergyReport {
        band_edges: edges.to_vec(),
        variants,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{AffineField, Mat3};

    #[test]
    fn dice_examples() {
        let a = [true, true, false, false];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(dice(&a, &[false, true, true, false]).unwrap(), 0.5);
        assert_eq!(dice(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert!(dice(&a, &[true]).is_err());
    }

    fn brute_mcd(a: &MaskSlice, b: &MaskSlice, s: [f64; 2]) -> f64 {
        let (ca, cb) = (a.contour(), b.contour());
        let d = |p: [usize; 2], q: [usize; 2]| {
            ((p[0] as f64 - q[0] as f64) * s[0]).hypot((p[1] as f64 - q[1] as f64) * s[1])
        };
        let dir = |x: &[[usize; 2]], y: &[[usize; 2]]| {
            x.iter().map(|p| y.iter().map(|q| d(*p, *q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
        };
        0.5 * (dir(&ca, &cb) + dir(&cb, &ca))
    }

    fn disc(n: usize, c: [f64; 2], r: f64) -> MaskSlice {
        let data = (0..n * n)
            .map(|k| ((k % n) as f64 - c[0]).hypot((k / n) as f64 - c[1]) <= r)
            .collect();
        MaskSlice::new([n, n], data).unwrap()
    }

    #[test]
    fn contour_distance_examples() {
        let a = disc(20, [10.0, 10.0], 5.0);
        assert_eq!(mean_contour_distance(&a, &a, [1.0, 1.0]).unwrap(), Some(0.0));
        let mut p = MaskSlice::new([10, 10], vec![false; 100]).unwrap();
        let mut q = p.clone();
        p.data[2 + 10 * 3] = true;
        q.data[2 + 10 * 7] = true;
        let d = mean_contour_distance(&p, &q, [1.0, 1.5]).unwrap().unwrap();
        assert!((d - 6.0).abs() < 1e-12);
        let empty = MaskSlice::new([10, 10], vec![false; 100]).unwrap();
        assert_eq!(mean_contour_distance(&p, &empty, [1.0, 1.0]).unwrap(), None);
    }

    #[test]
    fn contour_distance_of_concentric_circles_matches_brute_force() {
        let a = disc(40, [20.0, 20.0], 10.0);
        let b = disc(40, [20.0, 20.0], 13.0);
        let got = mean_contour_distance(&a, &b, [1.0, 1.0]).unwrap().unwrap();
        assert!((got - brute_mcd(&a, &b, [1.0, 1.0])).abs() < 1e-9);
        assert!((got - 3.0).abs() < 0.5);
    }

    #[test]
    fn contour_distance_on_random_masks_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let n = rng.random_range(5..30);
            let pa = rng.random_range(0.05..0.6);
            let pb = rng.random_range(0.05..0.6);
            let a = MaskSlice::new([n, n], (0..n * n).map(|_| rng.random_bool(pa)).collect()).unwrap();
            let b = MaskSlice::new([n, n], (0..n * n).map(|_| rng.random_bool(pb)).collect()).unwrap();
            let s = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            match mean_contour_distance(&a, &b, s).unwrap() {
                Some(d) => assert!((d - brute_mcd(&a, &b, s)).abs() < 1e-9),
                None => assert!(a.contour().is_empty() || b.contour().is_empty()),
            }
            let (x, y) = (mean_contour_distance(&a, &b, s).unwrap(), mean_contour_distance(&b, &a, s).unwrap());
            assert_eq!(x, y);
        }
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let a = disc(40, [15.0, 18.0], 6.0);
        let b = disc(40, [17.0, 16.0], 7.0);
        let a2 = disc(40, [20.0, 23.0], 6.0);
        let b2 = disc(40, [22.0, 21.0], 7.0);
        assert_eq!(dice(&a.data, &b.data).unwrap(), dice(&a2.data, &b2.data).unwrap());
        let d1 = mean_contour_distance(&a, &b, [1.0, 1.0]).unwrap().unwrap();
        let d2 = mean_contour_distance(&a2, &b2, [1.0, 1.0]).unwrap().unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    fn z_mask(lo: usize, hi: usize) -> Vec<bool> {
        (0..48).map(|i| i % 4 == 0 && (lo..=hi).contains(&(i / 4))).collect()
    }

    #[test]
    fn slice_level_examples() {
        let dims = [2, 2, 12];
        assert_eq!(slice_levels(&z_mask(0, 8), dims).unwrap(), [2, 4, 6]);
        assert_eq!(slice_levels(&z_mask(3, 3), dims).unwrap(), [3, 3, 3]);
        assert_eq!(slice_levels(&z_mask(0, 9), dims).unwrap(), [2, 5, 7]);
        assert!(slice_levels(&[false; 48], dims).is_err());
    }

    #[test]
    fn landmark_error_examples() {
        let truth = vec![[1.0, 2.0, 3.0], [0.0; 3]];
        assert_eq!(landmark_tracking_error(&truth, &truth).unwrap(), vec![0.0, 0.0]);
        let pred = vec![[1.0, 2.0, 3.0], [3.0, 4.0, 0.0]];
        assert_eq!(landmark_tracking_error(&pred, &truth).unwrap(), vec![0.0, 5.0]);
        assert!(landmark_tracking_error(&pred[..1], &truth).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<Vec3> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0))).collect();
        let q: Vec<Vec3> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0))).collect();
        for (e, (a, b)) in landmark_tracking_error(&p, &q).unwrap().iter().zip(p.iter().zip(&q)) {
            let want = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!((e - want).abs() < 1e-12);
        }
    }

    struct Rotation(Mat3);

    impl DeformationField for Rotation {
        fn map_points(&self, p: &[Vec3], _: f64) -> Vec<Vec3> {
            p.iter().map(|x| std::array::from_fn(|i| (0..3).map(|k| self.0[i][k] * x[k]).sum())).collect()
        }
        fn gradients(&self, p: &[Vec3], _: f64) -> Vec<Mat3> {
            vec![self.0; p.len()]
        }
    }

    #[test]
    fn jacobian_deviation_examples() {
        let pts = vec![[1.0, 2.0, 3.0]; 5];
        let id = jacobian_deviation(&AffineField::identity(), &pts, 1.0).unwrap();
        assert_eq!(id.mean_abs_deviation, 0.0);
        let s = jacobian_deviation(&AffineField::scaling(1.1), &pts, 1.0).unwrap();
        assert!((s.mean_abs_deviation - (1.1f64.powi(3) - 1.0)).abs() < 1e-12);
        let (sn, cs) = 0.7f64.sin_cos();
        let r = Rotation([[cs, -sn, 0.0], [sn, cs, 0.0], [0.0, 0.0, 1.0]]);
        assert!(jacobian_deviation(&r, &pts, 1.0).unwrap().mean_abs_deviation < 1e-8);
        assert!(jacobian_deviation(&r, &[], 1.0).is_err());
    }

    fn field_from(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> Vec3) -> VectorField {
        let mut v = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    v.push(f(i, j, k));
                }
            }
        }
        VectorField::new(dims, v).unwrap()
    }

    #[test]
    fn spectral_examples() {
        let dims = [16, 16, 8];
        let target = field_from(dims, |i, j, _| [(i as f64 * 0.3).sin(), j as f64 * 0.01, 0.0]);
        let edges = [0.0, 2.0, 4.0, 6.0];
        let r = spectral_report(&target, &[("same".into(), target.clone())], &edges).unwrap();
        assert!(r.energies("same").unwrap().iter().all(|e| *e == 0.0));

        let tone = field_from(dims, |i, _, _| [0.0, (2.0 * PI * 5.0 * i as f64 / 16.0).cos(), 0.0]);
        let zero = field_from(dims, |_, _, _| [0.0; 3]);
        let r = spectral_report(&zero, &[("tone".into(), tone.clone())], &edges).unwrap();
        let e = r.energies("tone").unwrap();
        assert!(e[0].abs() < 1e-20 && e[1].abs() < 1e-20 && e[3].abs() < 1e-20);
        assert!((e[2] - tone.energy()).abs() < 1e-9);
        assert!(spectral_report(&zero, &[("x".into(), tone)], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn band_energies_satisfy_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [12, 10, 9];
        let n: usize = dims.iter().product();
        let f = VectorField::new(dims, (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()).unwrap();
        let e = band_energies(&f, &[0.0, 1.0, 3.0, 5.0]).unwrap();
        let total: f64 = e.iter().sum();
        assert!((total - f.energy()).abs() < 1e-8 * f.energy());
    }
}
