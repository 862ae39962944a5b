//! On-disk formats and run configuration.
//!
//! A volume is a TOML header next to a raw little-endian `f32` payload
//! (x fastest). The header records the payload's SHA-256, so truncation and
//! bit flips are caught on load. An optional `u8` mask and a CSV landmark
//! list sit beside it. A sequence is a directory holding a `sequence.toml`
//! manifest and one volume per frame.
//!
//! Checkpoints, metrics and reports are JSON with shortest round-trip float
//! formatting, so reloading a checkpoint reproduces the network bit for bit.
//! Every write goes to a temporary file in the target directory, which is
//! then renamed into place.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Vec3};
use crate::metrics::BandEnergyReport;
use crate::model::{Activation, DeformationModel, NetworkConfig, Parameters};
use crate::phantom::PhantomSpec;
use crate::sampling::ImageVolume;
use crate::training::{CineSequence, TrainConfig, TrainingHistory};

/// Version written into every header, manifest and checkpoint.
pub const FORMAT_VERSION: u32 = 1;

/// Name of the manifest inside a sequence directory.
pub const SEQUENCE_MANIFEST: &str = "sequence.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling of `path` and renames it over
/// `path`, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::format(path, "path has no usable file name"))
}

fn check_version(path: &Path, found: Option<i64>) -> Result<()> {
    let found = found.ok_or_else(|| Error::format(path, "missing format_version"))?;
    if found != i64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Parses a TOML header, checking the version before the schema so that a
/// newer layout reports a version error rather than a field error. Keys this
/// build does not know are logged and returned.
fn parse_header<T: DeserializeOwned>(path: &Path, text: &str, known: &[&str]) -> Result<(T, Vec<String>)> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format(path, e.to_string()))?;
    check_version(path, table.get("format_version").and_then(toml::Value::as_integer))?;
    let known: BTreeSet<&str> = known.iter().copied().collect();
    let unknown: Vec<String> = table.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
    for key in &unknown {
        log::warn!("{}: ignoring unknown header key '{key}'", path.display());
    }
    let value = T::deserialize(toml::Value::Table(table)).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((value, unknown))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::usage(format!("cannot encode TOML: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub spacing: Vec3,
    /// Smallest and largest stored intensity, informational.
    pub intensity_range: [f32; 2],
    pub payload: String,
    pub payload_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
}

const VOLUME_KEYS: [&str; 9] = [
    "format_version",
    "dims",
    "spacing",
    "intensity_range",
    "payload",
    "payload_sha256",
    "mask",
    "mask_sha256",
    "landmarks",
];

/// Writes `path` (the header) plus `<stem>.f32`, and `<stem>.mask` /
/// `<stem>.landmarks.csv` when the volume carries them.
pub fn save_volume(path: &Path, volume: &ImageVolume) -> Result<()> {
    let stem = file_stem(path)?;
    let payload: Vec<u8> = volume.intensities().iter().flat_map(|v| v.to_le_bytes()).collect();
    let lo = volume.intensities().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = volume.intensities().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut header = VolumeHeader {
        format_version: FORMAT_VERSION,
        dims: volume.dims(),
        spacing: volume.spacing(),
        intensity_range: [lo, hi],
        payload: format!("{stem}.f32"),
        payload_sha256: sha256_hex(&payload),
        mask: None,
        mask_sha256: None,
        landmarks: None,
    };
    write_atomic(&sibling(path, &header.payload), &payload)?;
    if let Some(mask) = volume.mask() {
        let bytes: Vec<u8> = mask.iter().map(|&m| u8::from(m)).collect();
        let name = format!("{stem}.mask");
        write_atomic(&sibling(path, &name), &bytes)?;
        header.mask_sha256 = Some(sha256_hex(&bytes));
        header.mask = Some(name);
    }
    if let Some(landmarks) = volume.landmarks() {
        let name = format!("{stem}.landmarks.csv");
        save_points(&sibling(path, &name), landmarks)?;
        header.landmarks = Some(name);
    }
    write_atomic(path, to_toml(&header)?.as_bytes())
}

fn verified(path: &Path, expected: &str) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let got = sha256_hex(&bytes);
    if got != expected {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: format!("checksum {got} does not match header {expected}"),
        });
    }
    Ok(bytes)
}

fn integrity(path: &Path, reason: String) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        reason,
    }
}

pub fn load_volume(path: &Path) -> Result<ImageVolume> {
    let (header, _): (VolumeHeader, _) = parse_header(path, &read_text(path)?, &VOLUME_KEYS)?;
    let n: usize = header.dims.iter().product();
    let payload_path = sibling(path, &header.payload);
    let payload = read_bytes(&payload_path)?;
    if payload.len() != n * 4 {
        return Err(integrity(
            &payload_path,
            format!("payload has {} bytes, dims {:?} need {}", payload.len(), header.dims, n * 4),
        ));
    }
    let payload = verified(&payload_path, &header.payload_sha256)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut volume =
        ImageVolume::new(header.dims, header.spacing, data).map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(name) = &header.mask {
        let mask_path = sibling(path, name);
        let bytes = match &header.mask_sha256 {
            Some(sum) => verified(&mask_path, sum)?,
            None => read_bytes(&mask_path)?,
        };
        if bytes.len() != n {
            return Err(integrity(&mask_path, format!("mask has {} bytes, expected {n}", bytes.len())));
        }
        volume = volume
            .with_mask(bytes.iter().map(|&b| b != 0).collect())
            .map_err(|e| Error::format(&mask_path, e.to_string()))?;
    }
    if let Some(name) = &header.landmarks {
        volume = volume.with_landmarks(load_points(&sibling(path, name))?);
    }
    Ok(volume)
}

#[derive(Serialize, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    z: f64,
}

/// CSV with an `x,y,z` header, one point per row.
pub fn save_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(PointRow { x: p[0], y: p[1], z: p[2] })
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &csv_bytes(path, w)?)
}

pub fn load_points(path: &Path) -> Result<Vec<Vec3>> {
    let text = read_bytes(path)?;
    csv::Reader::from_reader(text.as_slice())
        .deserialize::<PointRow>()
        .map(|r| r.map(|p| [p.x, p.y, p.z]).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

fn csv_bytes(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SequenceManifest {
    format_version: u32,
    times: Vec<f64>,
    frames: Vec<String>,
}

/// Writes every frame as `frame_NNN.toml` plus the manifest into `dir`.
pub fn save_sequence(dir: &Path, seq: &CineSequence) -> Result<PathBuf> {
    let mut frames = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames().iter().enumerate() {
        let name = format!("frame_{i:03}.toml");
        save_volume(&dir.join(&name), frame)?;
        frames.push(name);
    }
    let manifest = SequenceManifest {
        format_version: FORMAT_VERSION,
        times: seq.times().to_vec(),
        frames,
    };
    let path = dir.join(SEQUENCE_MANIFEST);
    write_atomic(&path, to_toml(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Accepts the sequence directory or its manifest.
pub fn load_sequence(path: &Path) -> Result<CineSequence> {
    let manifest_path = if path.is_dir() { path.join(SEQUENCE_MANIFEST) } else { path.to_path_buf() };
    let (manifest, _): (SequenceManifest, _) =
        parse_header(&manifest_path, &read_text(&manifest_path)?, &["format_version", "times", "frames"])?;
    let frames = manifest
        .frames
        .iter()
        .map(|name| load_volume(&sibling(&manifest_path, name)))
        .collect::<Result<Vec<_>>>()?;
    CineSequence::new(frames, manifest.times).map_err(|e| Error::format(&manifest_path, e.to_string()))
}

/// Everything needed to rebuild a trained model. The Fourier matrix is
/// stored as drawn, so the checkpoint does not depend on the RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    /// Number of completed optimizer steps.
    pub iteration: usize,
    pub domain_extent: Vec3,
    pub params: Vec<f64>,
    pub params_sha256: String,
}

fn params_digest(params: &[f64]) -> String {
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

impl Checkpoint {
    pub fn new(
        network: &NetworkConfig,
        training: &TrainConfig,
        params: &Parameters,
        iteration: usize,
        domain: Domain,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            network: network.clone(),
            training: training.clone(),
            iteration,
            domain_extent: domain.extent,
            params: params.flatten(),
            params_sha256: params_digest(params.as_slice()),
        }
    }

    pub fn parameters(&self) -> Result<Parameters> {
        Parameters::from_flat(&self.network, self.params.clone())
    }

    pub fn model(&self) -> Result<DeformationModel> {
        DeformationModel::new(self.network.clone(), self.parameters()?, Domain::new(self.domain_extent))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(bad) = checkpoint.params.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {bad} cannot be checkpointed")));
    }
    save_json(path, checkpoint)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    check_version(path, value.get("format_version").and_then(serde_json::Value::as_i64))?;
    let checkpoint: Checkpoint = serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
    let got = params_digest(&checkpoint.params);
    if got != checkpoint.params_sha256 {
        return Err(integrity(path, format!("parameter checksum {got} does not match {}", checkpoint.params_sha256)));
    }
    checkpoint.network.validate().map_err(|e| Error::format(path, e.to_string()))?;
    checkpoint.parameters().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(checkpoint)
}

/// Pretty-printed JSON, newline terminated.
pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// One row per recorded history entry.
pub fn save_history_csv(path: &Path, history: &TrainingHistory) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &history.entries {
        w.serialize(e).map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &csv_bytes(path, w)?)
}

/// Columns `band_lo,band_hi,<variant>...`; the last band's upper edge is
/// written as `inf`.
pub fn save_report_csv(path: &Path, report: &BandEnergyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["band_lo".to_string(), "band_hi".to_string()];
    head.extend(report.variants.iter().map(|(n, _)| n.clone()));
    w.write_record(&head).map_err(|e| Error::format(path, e.to_string()))?;
    for (b, lo) in report.band_edges.iter().enumerate() {
        let hi = report.band_edges.get(b + 1).copied().unwrap_or(f64::INFINITY);
        let mut row = vec![lo.to_string(), hi.to_string()];
        row.extend(report.variants.iter().map(|(_, e)| e[b].to_string()));
        w.write_record(&row).map_err(|e| Error::format(path, e.to_string()))?;
    }
    write_atomic(path, &csv_bytes(path, w)?)
}

/// Network section of a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub activation: Activation,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub omega0: f64,
    /// Fourier features `m`, used by the encoded variants.
    pub features: usize,
    pub sigma: f64,
    pub encoder_seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let net = NetworkConfig::default();
        NetworkSpec {
            activation: net.activation,
            hidden_layers: net.hidden_layers,
            hidden_width: net.hidden_width,
            omega0: net.omega0,
            features: 8,
            sigma: 1.0,
            encoder_seed: 0,
        }
    }
}

impl NetworkSpec {
    pub fn build(&self) -> Result<NetworkConfig> {
        let mut net = NetworkConfig::for_activation(self.activation, self.features, self.sigma, self.encoder_seed)?;
        net.hidden_layers = self.hidden_layers;
        net.hidden_width = self.hidden_width;
        net.omega0 = self.omega0;
        net.validate()?;
        Ok(net)
    }
}

/// Everything a CLI run can be configured with; each section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub network: NetworkSpec,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))?;
        config.phantom.validate().map_err(|e| Error::format(path, e.to_string()))?;
        config.training.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        to_toml(self)
    }
}

#[cfg(test)]
mod tests;
