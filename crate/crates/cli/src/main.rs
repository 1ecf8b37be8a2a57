use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use dsenet::dsp::{read_wav, write_wav, MultichannelWaveform, SampleFormat};
use dsenet::embed::ClueInput;
use dsenet::nn::{DseNet, ModelConfig};
use dsenet::pipeline::{
    gain_pattern, speaker_sweep, train, Backend, GainSweepSpec, MvdrBackend, NetBackend,
    OracleBackend, TrainConfig,
};
use dsenet::scene::{generate_dataset, read_manifest, render_scene, DatasetConfig};
use dsenet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dsenet",
    version,
    about = "Directional speaker extraction toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Net,
    Mvdr,
    OracleInBeam,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset of reverberant mixtures and write its manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage of the network.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        config: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to continue from (required for stage 2).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the signal inside a beam from a multichannel WAV file.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        doa: f64,
        #[arg(long)]
        width: f64,
        #[arg(long, default_value = "extracted.wav")]
        out: PathBuf,
    },
    /// Gain per talker direction for a moving single talker.
    GainPattern {
        #[arg(long, required_if_eq("backend", "net"))]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "net")]
        backend: BackendKind,
        /// Sweep specification (JSON); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-speaker SI-SDRi of one scene as the clue walks around the array.
    Sweep {
        #[arg(long, required_if_eq("backend", "net"))]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "net")]
        backend: BackendKind,
        /// Scene id from the manifest.
        #[arg(long)]
        scene: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        width: f64,
        #[arg(long, default_value_t = 5.0)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report the parameter count of a model configuration.
    Params {
        /// Model or training configuration (JSON).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["desk", "full"])]
        preset: Option<String>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report")
}

fn backend(kind: BackendKind, ckpt: Option<&Path>) -> Result<Box<dyn Backend>> {
    Ok(match kind {
        BackendKind::Net => {
            let path =
                ckpt.ok_or_else(|| Error::Config("--ckpt is required for the net backend".into()))?;
            Box::new(NetBackend::load(path)?)
        }
        BackendKind::Mvdr => Box::new(MvdrBackend::default()),
        BackendKind::OracleInBeam => Box::new(OracleBackend::InBeam),
    })
}

fn model_config(config: Option<&Path>, preset: Option<&str>) -> Result<ModelConfig> {
    match (config, preset) {
        (Some(path), _) => {
            let value: serde_json::Value = read_json(path)?;
            let model = value.get("model").cloned().unwrap_or(value);
            serde_json::from_value(model).map_err(|e| Error::Json {
                path: path.into(),
                source: e,
            })
        }
        (None, Some("full")) => Ok(ModelConfig::full()),
        (None, Some(_)) => Ok(ModelConfig::desk()),
        (None, None) => Err(Error::Config("give --config or --preset".into())),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg: DatasetConfig = read_json(&config)?;
            let entries = generate_dataset(&cfg, &out)?;
            println!("wrote {} scenes to {}", entries.len(), out.display());
        }
        Command::Train {
            stage,
            config,
            data,
            resume,
            out,
        } => {
            let mut cfg: TrainConfig = read_json(&config)?;
            cfg.stage = stage;
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let report = train(&cfg, &data, resume.as_deref())?;
            println!(
                "trained {} epochs ({} steps); checkpoint {}",
                report.epochs,
                report.steps,
                report.checkpoint.display()
            );
        }
        Command::Extract {
            ckpt,
            wav,
            doa,
            width,
            out,
        } => {
            let net = NetBackend::load(&ckpt)?;
            let x = read_wav(&wav)?;
            let clue = ClueInput::new(doa, width)?;
            let y = net.extract_mixture(&x, &clue)?;
            let y = MultichannelWaveform::from_mono(y, x.sample_rate())?;
            write_wav(&out, &y, SampleFormat::Float32)?;
            println!("wrote {} ({} samples)", out.display(), y.len());
        }
        Command::GainPattern {
            ckpt,
            backend: kind,
            spec,
            out,
        } => {
            let spec: GainSweepSpec = match spec {
                Some(p) => read_json(&p)?,
                None => GainSweepSpec::default(),
            };
            let b = backend(kind, ckpt.as_deref())?;
            let pattern = gain_pattern(b.as_ref(), &spec)?;
            write_text(&out, &pattern.to_csv())?;
            write_text(&out.with_extension("json"), &to_json(&pattern.summary))?;
            for s in &pattern.summary {
                println!(
                    "clue {:.1} width {:.0}: in-beam {:.2} dB, out-of-beam {:.2} dB",
                    s.clue_doa, s.width, s.mean_in_beam_db, s.mean_out_of_beam_db
                );
            }
        }
        Command::Sweep {
            ckpt,
            backend: kind,
            scene,
            data,
            width,
            step,
            out,
        } => {
            let entry = read_manifest(&data)?
                .into_iter()
                .find(|e| e.id == scene)
                .ok_or_else(|| Error::Input(format!("scene {scene} not in {}", data.display())))?;
            let render = render_scene(&entry.scene)?;
            let b = backend(kind, ckpt.as_deref())?;
            let sweep = speaker_sweep(b.as_ref(), &render, width, step)?;
            write_text(&out, &sweep.to_csv())?;
            println!("wrote {} rows to {}", sweep.rows.len(), out.display());
        }
        Command::Params { config, preset } => {
            let model = model_config(config.as_deref(), preset.as_deref())?;
            let count = DseNet::parameter_count(&model)?;
            println!(
                "{}",
                to_json(&serde_json::json!({ "parameters": count, "model": model }))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
