//! Saves a volume and a model checkpoint, reloads both and confirms they are
//! bit-identical; then corrupts the payload to show the integrity check.

use pinnreg::geometry::Domain;
use pinnreg::io::{load_checkpoint, load_volume, save_checkpoint, save_volume, Checkpoint};
use pinnreg::model::{forward, init_params, Activation, NetworkConfig};
use pinnreg::sampling::ImageVolume;
use pinnreg::training::TrainConfig;

fn main() -> pinnreg::Result<()> {
    let dir = std::env::temp_dir().join(format!("pinnreg-checkpoints-{}", std::process::id()));
    let vol = ImageVolume::new([8; 3], [1.0; 3], (0..512).map(|i| (i as f32 * 0.37).sin().abs()).collect())?;
    let vol_path = dir.join("volume.toml");
    save_volume(&vol_path, &vol)?;
    println!("volume round trip identical: {}", load_volume(&vol_path)? == vol);

    let net = NetworkConfig::for_activation(Activation::PSK, 8, 1.0, 5)?;
    let params = init_params(&net, 9);
    let ck_path = dir.join("checkpoint.json");
    save_checkpoint(&ck_path, &Checkpoint::new(&net, &TrainConfig::default(), &params, 0, Domain::new([8.0; 3])))?;
    let back = load_checkpoint(&ck_path)?;
    let x = [0.3, -0.2, 0.1];
    let before = forward(&net, &params, x, 0.5)?.1;
    let after = forward(&back.network, &back.parameters()?, x, 0.5)?.1;
    println!("checkpoint forward bit-identical: {}", before.map(f64::to_bits) == after.map(f64::to_bits));

    let payload = dir.join("volume.f32");
    let mut bytes = std::fs::read(&payload).map_err(|e| pinnreg::Error::Usage(e.to_string()))?;
    bytes[100] ^= 1;
    std::fs::write(&payload, bytes).map_err(|e| pinnreg::Error::Usage(e.to_string()))?;
    match load_volume(&vol_path) {
        Err(e) => println!("after flipping one bit: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
