//! Command-line front end: `synth`, `train`, `register`, `eval`, `spectra`.
//!
//! Exit status is 0 on success, 2 for usage errors and 1 for anything else
//! (unreadable or inconsistent input files, numerical failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pinnreg::geometry::DeformationField;
use pinnreg::io::{self, Checkpoint, RunConfig};
use pinnreg::metrics::evaluate;
use pinnreg::model::Activation;
use pinnreg::phantom::generate_sequence;
use pinnreg::sampling::warp_volume;
use pinnreg::training::{spectral_experiment, train_with};
use pinnreg::{Error, Result};

#[derive(Parser)]
#[command(name = "pinnreg", version, about = "Physics-informed neural image registration")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "PINNREG_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Run configuration (TOML with optional [phantom], [network], [training] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for phantom texture, encoder and training; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom cine sequence.
    Synth,
    /// Train a model on a sequence; writes checkpoint.json and history files.
    Train {
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        activation: Option<Activation>,
        #[arg(long)]
        identity_start: Option<bool>,
    },
    /// Warp a volume and export the displacement field at one time.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Normalized time in [0, 1].
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        /// Optional CSV of x,y,z points to map.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a sequence; writes metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Template frame; defaults to the last one.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Train each variant on the configured phantom and report residual band energies.
    Spectra {
        #[arg(long, value_delimiter = ',', default_value = "tanh,siren,ffs")]
        variants: Vec<Activation>,
        /// Lower band edges in cycles per domain, starting at 0.
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,8")]
        bands: Vec<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.phantom.texture_seed = seed;
        config.network.encoder_seed = seed;
        config.training.seed = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => synth(&config, out),
        Command::Train {
            sequence,
            iterations,
            activation,
            identity_start,
        } => {
            if let Some(n) = iterations {
                config.training.iterations = n;
            }
            if let Some(a) = activation {
                config.network.activation = a;
            }
            if let Some(b) = identity_start {
                config.training.identity_start = b;
            }
            train(&config, &sequence, out)
        }
        Command::Register {
            checkpoint,
            volume,
            time,
            points,
        } => register(&checkpoint, &volume, time, points.as_deref(), out),
        Command::Eval {
            checkpoint,
            sequence,
            frame,
        } => eval(&checkpoint, &sequence, frame, out),
        Command::Spectra {
            variants,
            bands,
            iterations,
        } => {
            if let Some(n) = iterations {
                config.training.iterations = n;
            }
            spectra(&config, &variants, &bands, out)
        }
    }
}

fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let phantom = generate_sequence(&config.phantom)?;
    io::save_sequence(out, &phantom.sequence)?;
    let spec = toml::to_string(&config.phantom).map_err(|e| Error::Usage(e.to_string()))?;
    io::write_atomic(&out.join("phantom.toml"), spec.as_bytes())?;
    println!("wrote {} frames to {}", phantom.sequence.len(), out.display());
    Ok(())
}

fn train(config: &RunConfig, sequence: &Path, out: &Path) -> Result<()> {
    let seq = io::load_sequence(sequence)?;
    let net = config.network.build()?;
    let ck_path = out.join("checkpoint.json");
    let domain = seq.domain();
    let (params, history) = train_with(&net, &seq, &config.training, |params, entry| {
        let ck = Checkpoint::new(&net, &config.training, params, entry.iteration, domain);
        io::save_checkpoint(&ck_path, &ck)
    })?;
    let ck = Checkpoint::new(&net, &config.training, &params, config.training.iterations, domain);
    io::save_checkpoint(&ck_path, &ck)?;
    io::save_history_csv(&out.join("history.csv"), &history)?;
    io::save_json(&out.join("history.json"), &history)?;
    println!("wrote {}", ck_path.display());
    Ok(())
}

fn register(checkpoint: &Path, volume: &Path, time: f64, points: Option<&Path>, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&time) {
        return Err(Error::Usage(format!("time {time} outside [0, 1]")));
    }
    let model = io::load_checkpoint(checkpoint)?.model()?;
    let template = io::load_volume(volume)?;
    io::save_volume(&out.join("warped.toml"), &warp_volume(&template, &model, time)?)?;
    let centers = template.voxel_centers();
    let mapped = model.map_points(&centers, time);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "z", "ux", "uy", "uz"]).map_err(|e| Error::Usage(e.to_string()))?;
    for (p, q) in centers.iter().zip(&mapped) {
        let row = [p[0], p[1], p[2], q[0] - p[0], q[1] - p[1], q[2] - p[2]].map(|v| v.to_string());
        w.write_record(&row).map_err(|e| Error::Usage(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    io::write_atomic(&out.join("displacement.csv"), &bytes)?;
    if let Some(path) = points {
        let pts = io::load_points(path)?;
        io::save_points(&out.join("mapped_points.csv"), &model.map_points(&pts, time))?;
    }
    println!("wrote warped volume and displacement field to {}", out.display());
    Ok(())
}

fn eval(checkpoint: &Path, sequence: &Path, frame: Option<usize>, out: &Path) -> Result<()> {
    let model = io::load_checkpoint(checkpoint)?.model()?;
    let seq = io::load_sequence(sequence)?;
    let frame = frame.unwrap_or(seq.len() - 1);
    if frame >= seq.len() {
        return Err(Error::Usage(format!("frame {frame} out of range, sequence has {}", seq.len())));
    }
    let record = evaluate(&model, &seq, frame)?;
    let path = out.join("metrics.json");
    io::save_json(&path, &record)?;
    println!("mean dice {:.4}, mean |J - 1| {:.4}", record.mean_dice(), record.jac_dev_mean);
    Ok(())
}

fn spectra(config: &RunConfig, variants: &[Activation], bands: &[f64], out: &Path) -> Result<()> {
    let phantom = generate_sequence(&config.phantom)?;
    let nets = variants
        .iter()
        .map(|&a| {
            let spec = io::NetworkSpec { activation: a, ..config.network.clone() };
            spec.build()
        })
        .collect::<Result<Vec<_>>>()?;
    let report = spectral_experiment(&nets, &phantom.sequence, &phantom.field, &config.training, bands)?;
    io::save_json(&out.join("spectra.json"), &report)?;
    io::save_report_csv(&out.join("spectra.csv"), &report)?;
    println!("wrote {} bands for {} variants", report.band_edges.len(), report.variants.len());
    Ok(())
}
