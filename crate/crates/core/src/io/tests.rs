use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{forward, init_params};
use crate::training::HistoryEntry;

fn random_volume(n: usize, seed: u64) -> ImageVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * n * n).map(|_| rng.random::<f32>()).collect();
    let mask = (0..n * n * n).map(|_| rng.random_bool(0.3)).collect();
    ImageVolume::new([n; 3], [1.0, 1.25, 0.8], data)
        .unwrap()
        .with_mask(mask)
        .unwrap()
        .with_landmarks(vec![[0.1, 2.0 / 3.0, 5.5], [1e-17, 3.0, std::f64::consts::PI]])
}

#[test]
fn volume_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    let vol = random_volume(8, 1);
    save_volume(&path, &vol).unwrap();
    let back = load_volume(&path).unwrap();
    assert_eq!(back, vol);
    let bits = |v: &ImageVolume| v.intensities().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&vol));
    assert!(dir.path().join("vol.f32").exists());
    assert_eq!(fs::metadata(dir.path().join("vol.f32")).unwrap().len(), 8 * 8 * 8 * 4);
}

#[test]
fn corrupted_payload_byte_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    save_volume(&path, &random_volume(8, 2)).unwrap();
    let payload = dir.path().join("vol.f32");
    let mut bytes = fs::read(&payload).unwrap();
    bytes[777] ^= 0x10;
    fs::write(&payload, &bytes).unwrap();
    assert!(matches!(load_volume(&path), Err(Error::Integrity { .. })));
}

#[test]
fn truncated_payload_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    save_volume(&path, &random_volume(4, 3)).unwrap();
    let payload = dir.path().join("vol.f32");
    let bytes = fs::read(&payload).unwrap();
    fs::write(&payload, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_volume(&path).unwrap_err();
    assert!(matches!(err, Error::Integrity { .. }), "{err}");
}

#[test]
fn header_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    save_volume(&path, &random_volume(4, 4)).unwrap();
    let text = fs::read_to_string(&path).unwrap().replace("format_version = 1", "format_version = 7");
    fs::write(&path, text).unwrap();
    assert!(matches!(
        load_volume(&path),
        Err(Error::VersionMismatch { found: 7, expected: 1, .. })
    ));
}

#[test]
fn unknown_header_keys_are_tolerated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    let vol = random_volume(4, 5);
    save_volume(&path, &vol).unwrap();
    let text = format!("scanner = \"none\"\n{}", fs::read_to_string(&path).unwrap());
    fs::write(&path, &text).unwrap();
    assert_eq!(load_volume(&path).unwrap(), vol);
    let (_, unknown): (VolumeHeader, _) = parse_header(&path, &text, &VOLUME_KEYS).unwrap();
    assert_eq!(unknown, vec!["scanner".to_string()]);
}

#[test]
fn missing_payload_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vol.toml");
    save_volume(&path, &random_volume(4, 6)).unwrap();
    fs::remove_file(dir.path().join("vol.f32")).unwrap();
    let err = load_volume(&path).unwrap_err();
    assert!(err.to_string().contains("vol.f32"), "{err}");
}

#[test]
fn checkpoint_reload_reproduces_forward_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let domain = Domain::new([64.0, 48.0, 32.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in Activation::ALL {
        let net = NetworkConfig::for_activation(kind, 8, 1.0, 11).unwrap();
        let mut params = init_params(&net, 3);
        for v in params.as_mut_slice() {
            *v += rng.random_range(-0.1..0.1);
        }
        let path = dir.path().join(format!("{kind}.json"));
        let ck = Checkpoint::new(&net, &TrainConfig::default(), &params, 42, domain);
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let reloaded = back.parameters().unwrap();
        for _ in 0..20 {
            let x: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let t = rng.random::<f64>();
            let (a, _) = forward(&net, &params, x, t).unwrap();
            let (b, _) = forward(&back.network, &reloaded, x, t).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits), "{kind}");
        }
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkConfig::default();
    let ck = Checkpoint::new(&net, &TrainConfig::default(), &init_params(&net, 0), 0, Domain::new([1.0; 3]));
    let path = dir.path().join("ck.json");
    save_checkpoint(&path, &ck).unwrap();
    let mut value: serde_json::Value = load_json(&path).unwrap();
    value["params"][5] = serde_json::json!(0.125);
    save_json(&path, &value).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Integrity { .. })));

    value["format_version"] = serde_json::json!(2);
    save_json(&path, &value).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::VersionMismatch { found: 2, .. })));
}

#[test]
fn sequence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames = vec![random_volume(4, 8), random_volume(4, 9), random_volume(4, 10)];
    let seq = CineSequence::new(frames, vec![0.0, 1.0 / 3.0, 1.0]).unwrap();
    let manifest = save_sequence(dir.path(), &seq).unwrap();
    let back = load_sequence(dir.path()).unwrap();
    assert_eq!(back.frames(), seq.frames());
    assert_eq!(back.times(), seq.times());
    assert_eq!(load_sequence(&manifest).unwrap().times(), seq.times());
}

#[test]
fn history_and_report_csv_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let entry = |iteration| HistoryEntry {
        iteration,
        frame_index: 1,
        similarity: 0.5,
        regularization: 0.25,
        total: 0.75,
        inversions: 0,
    };
    let history = TrainingHistory {
        entries: vec![entry(0), entry(10), entry(19)],
        ..TrainingHistory::default()
    };
    let path = dir.path().join("history.csv");
    save_history_csv(&path, &history).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("iteration,frame_index,similarity"));

    let report = BandEnergyReport {
        band_edges: vec![0.0, 4.0, 8.0],
        variants: vec![("tanh".into(), vec![1.0, 2.0, 3.0]), ("ffs".into(), vec![0.5, 0.25, 0.0])],
    };
    let path = dir.path().join("report.csv");
    save_report_csv(&path, &report).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "band_lo,band_hi,tanh,ffs");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("8,inf,3,"));
}

#[test]
fn run_config_sections_are_optional() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[training]\niterations = 12\nmu = 0.0\n\n[network]\nactivation = \"ffs\"\n").unwrap();
    let config = RunConfig::load(&path).unwrap();
    assert_eq!(config.training.iterations, 12);
    assert_eq!(config.phantom, PhantomSpec::default());
    let net = config.network.build().unwrap();
    assert_eq!(net.input_dim(), 17);

    fs::write(&path, "[training]\niteration = 12\n").unwrap();
    assert!(matches!(RunConfig::load(&path), Err(Error::Format { .. })));

    let text = RunConfig::default().to_toml().unwrap();
    fs::write(&path, text).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}

#[test]
fn atomic_write_leaves_only_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.json");
    save_json(&path, &[1.5, 2.5]).unwrap();
    save_json(&path, &[3.5]).unwrap();
    let names: Vec<_> = fs::read_dir(dir.path().join("nested")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("out.json")]);
    assert_eq!(load_json::<Vec<f64>>(&path).unwrap(), vec![3.5]);
}
