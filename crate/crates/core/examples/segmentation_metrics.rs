//! Dice, mean contour distance, slice levels and landmark error on small
//! hand-made masks.

use pinnreg::metrics::{dice, landmark_tracking_error, mean_contour_distance, slice_levels, MaskSlice};

fn disk(n: usize, cx: f64, cy: f64, r: f64) -> MaskSlice {
    let data = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            (x - cx).hypot(y - cy) <= r
        })
        .collect();
    MaskSlice { dims: [n, n], data }
}

fn main() -> pinnreg::Result<()> {
    let a = disk(32, 15.0, 15.0, 8.0);
    let b = disk(32, 17.0, 15.0, 8.0);
    println!("disks offset by 2 px: DSC = {:.4}", dice(&a.data, &b.data)?);
    if let Some(mcd) = mean_contour_distance(&a, &b, [1.0, 1.0])? {
        println!("                      MCD = {mcd:.4} mm");
    }

    // a 3D mask occupying z = 4..=19: levels at 25, 50 and 75% of its length
    let dims = [4, 4, 24];
    let mask: Vec<bool> = (0..96 * 4).map(|i| (4..=19).contains(&(i / 16))).collect();
    println!("slice levels: {:?}", slice_levels(&mask, dims)?);

    let errors = landmark_tracking_error(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], &[[3.0, 4.0, 0.0], [1.0, 1.0, 2.0]])?;
    println!("landmark errors: {errors:?}");
    Ok(())
}
