//! Trilinear sampling with its gradient, and warping of a volume, its mask
//! and landmarks through a translation.

use pinnreg::geometry::AffineField;
use pinnreg::sampling::{warp_landmarks, warp_mask, warp_volume, ImageVolume};

fn main() -> pinnreg::Result<()> {
    let n = 8;
    // a linear ramp along x: trilinear sampling reproduces it exactly inside the grid
    let data: Vec<f32> = (0..n * n * n).map(|i| (i % n) as f32 / (n - 1) as f32).collect();
    let mask = (0..n * n * n).map(|i| (2..5).contains(&(i % n))).collect();
    let vol = ImageVolume::new([n; 3], [1.0; 3], data)?
        .with_mask(mask)?
        .with_landmarks(vec![[3.0, 4.0, 4.0]]);

    for x in [0.5, 2.25, 4.0, 7.9] {
        let (v, g) = vol.sample_with_gradient([x, 4.0, 4.0]);
        println!("I({x:4.2}, 4, 4) = {v:.4}, dI/dx = {:.4}", g[0]);
    }

    let shift = AffineField::translation([1.0, 0.0, 0.0]);
    let warped = warp_volume(&vol, &shift, 1.0)?;
    let warped_mask = warp_mask(&vol, &shift, 1.0)?;
    let row = |m: &[bool]| (0..n).map(|i| if m[i] { '#' } else { '.' }).collect::<String>();
    println!("\nmask row before: {}", row(vol.mask().unwrap_or_default()));
    println!("mask row after:  {}", row(&warped_mask));
    println!("first intensities after: {:?}", &warped.intensities()[..4]);
    println!("landmark moves to {:?}", warp_landmarks(vol.landmarks().unwrap_or_default(), &shift, 1.0));
    Ok(())
}
