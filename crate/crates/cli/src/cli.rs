use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lockloop_core::cascade::{Channel, LockConfig};
use lockloop_core::config::{Config, DEFAULT_CONFIG};

use crate::commands::{self, DEFAULT_BEAT_LOCKS};
use crate::error::CliError;
use crate::output::{sha256_hex, OutputDir, RunManifest, RunOptions, MANIFEST_NAME};

const BUILT_IN: &str = "<built-in default>";

#[derive(Debug, Parser)]
#[command(name = "lockloop", version, about = "Cascade-locked laser noise simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). Falls back to the built-in calibrated default.
    #[arg(long, env = "LOCKLOOP_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed (TOML integers stop at 2^63 - 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulated and analytic residual PSD for one lock configuration.
    Psd {
        #[command(flatten)]
        common: Common,
        /// free_run, sas_only, lc_only, cascade or ule_reference; defaults to the configured lock.
        #[arg(long, value_parser = parse_lock)]
        lock: Option<LockConfig>,
        /// absolute, relative, cavity or error.
        #[arg(long, default_value = "absolute", value_parser = parse_channel)]
        channel: Channel,
        /// Also write the settled time series.
        #[arg(long)]
        series: bool,
    },
    /// Beat spectra and lineshape fits for several lock configurations.
    Beat {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lock configurations [default: free_run,sas_only,lc_only,cascade].
        #[arg(long, value_delimiter = ',', value_parser = parse_lock)]
        lock: Vec<LockConfig>,
        /// Resolution bandwidth in Hz [default: analysis.rbw_hz].
        #[arg(long)]
        rbw: Option<f64>,
    },
    /// Readout-noise comparison at the resonant and detuned operating points.
    Readout {
        #[command(flatten)]
        common: Common,
        /// Readout band as LO:HI in Hz.
        #[arg(long, value_parser = parse_band)]
        band: Option<(f64, f64)>,
    },
    /// Re-derives the cavity-noise scale against the target beat linewidth.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Discriminator, transmission and open-loop curves.
    Curves {
        #[command(flatten)]
        common: Common,
    },
    /// Re-runs a manifest and checks the outputs are byte-identical.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_lock(s: &str) -> Result<LockConfig, String> {
    s.parse().map_err(|e: lockloop_core::Error| e.to_string())
}

fn parse_channel(s: &str) -> Result<Channel, String> {
    match s {
        "absolute" => Ok(Channel::Absolute),
        "relative" => Ok(Channel::Relative),
        "cavity" => Ok(Channel::Cavity),
        "error" => Ok(Channel::Error),
        _ => Err(format!(
            "unknown channel '{s}'; valid values: absolute, relative, cavity, error"
        )),
    }
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("band must look like LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad band edge '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad band edge '{hi}'"))?;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(format!("band {lo}:{hi} must satisfy 0 < LO < HI"));
    }
    Ok((lo, hi))
}

/// Everything that determines a run's outputs.
struct RunSpec {
    command: String,
    config_path: String,
    config_text: String,
    seed_override: Option<u64>,
    options: RunOptions,
}

pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            return Err(CliError::Usage(
                e.render().to_string().trim_start_matches("error: ").trim_end().into(),
            ))
        }
    };
    match cli.command {
        Command::Psd {
            common,
            lock,
            channel,
            series,
        } => {
            let options = RunOptions {
                locks: lock.map(|l| vec![l.name().to_string()]).unwrap_or_default(),
                channel: Some(commands::channel_name(channel).to_string()),
                series,
                ..RunOptions::default()
            };
            execute("psd", &common, options)
        }
        Command::Beat { common, lock, rbw } => {
            let options = RunOptions {
                locks: lock.iter().map(|l| l.name().to_string()).collect(),
                rbw_hz: rbw,
                ..RunOptions::default()
            };
            execute("beat", &common, options)
        }
        Command::Readout { common, band } => {
            let options = RunOptions {
                band_hz: band,
                ..RunOptions::default()
            };
            execute("readout", &common, options)
        }
        Command::Calibrate { common } => execute("calibrate", &common, RunOptions::default()),
        Command::Curves { common } => execute("curves", &common, RunOptions::default()),
        Command::Replay { manifest, out } => replay(&manifest, &out),
    }
}

fn execute(command: &str, common: &Common, options: RunOptions) -> Result<(), CliError> {
    let (config_path, config_text) = match &common.config {
        Some(p) => (
            p.display().to_string(),
            fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        ),
        None => (BUILT_IN.to_string(), DEFAULT_CONFIG.to_string()),
    };
    let spec = RunSpec {
        command: command.to_string(),
        config_path,
        config_text,
        seed_override: common.seed,
        options,
    };
    run_spec(&spec, &common.out).map(|_| ())
}

fn run_spec(spec: &RunSpec, out_dir: &Path) -> Result<Vec<crate::output::EmittedFile>, CliError> {
    let mut cfg = Config::parse(&spec.config_text).map_err(|e| match e {
        lockloop_core::Error::Config(msg) => CliError::Usage(format!("{}: {msg}", spec.config_path)),
        other => CliError::Usage(format!("{}: {other}", spec.config_path)),
    })?;
    if let Some(seed) = spec.seed_override {
        cfg.seed = seed;
    }
    let locks: Vec<LockConfig> = spec
        .options
        .locks
        .iter()
        .map(|s| parse_lock(s).map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    let mut out = OutputDir::open(out_dir)?;
    let result = match spec.command.as_str() {
        "psd" => {
            let channel =
                parse_channel(spec.options.channel.as_deref().unwrap_or("absolute")).map_err(CliError::Usage)?;
            let lock = locks.first().copied().unwrap_or(cfg.lock_config);
            commands::psd(&cfg, lock, channel, spec.options.series, &mut out)
        }
        "beat" => {
            let locks = if locks.is_empty() {
                DEFAULT_BEAT_LOCKS.to_vec()
            } else {
                locks
            };
            let rbw = spec.options.rbw_hz.unwrap_or(cfg.analysis.rbw_hz);
            commands::beat(&cfg, &locks, rbw, &mut out)
        }
        "readout" => commands::readout(&cfg, spec.options.band_hz, &mut out),
        "calibrate" => commands::calibrate(&cfg, &mut out),
        "curves" => commands::curves(&cfg, &mut out),
        other => Err(CliError::Usage(format!("unknown command '{other}' in manifest"))),
    };
    // partial outputs from a flagged analysis are still recorded
    if result.is_ok() || matches!(result, Err(CliError::Analysis(_))) {
        out.write_manifest(RunManifest {
            tool: "lockloop".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: spec.command.clone(),
            config_path: spec.config_path.clone(),
            config_text: spec.config_text.clone(),
            seed_override: spec.seed_override,
            seed: cfg.seed,
            options: spec.options.clone(),
            output_dir: out.path().display().to_string(),
            emitted_files: Vec::new(),
        })?;
    }
    let files = out.files().to_vec();
    result.map(|_| files)
}

fn replay(manifest_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CliError::io(manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", manifest_path.display())))?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let spec = RunSpec {
        command: manifest.command.clone(),
        config_path: manifest.config_path.clone(),
        config_text: manifest.config_text.clone(),
        seed_override: manifest.seed_override,
        options: manifest.options.clone(),
    };
    run_spec(&spec, out_dir)?;
    let mut mismatched = Vec::new();
    for f in &manifest.emitted_files {
        let path = out_dir.join(&f.name);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if sha256_hex(&bytes) != f.sha256 {
            mismatched.push(f.name.clone());
        }
    }
    if mismatched.is_empty() {
        println!(
            "replay: {} files byte-identical to {}",
            manifest.emitted_files.len(),
            manifest_path.display()
        );
        Ok(())
    } else {
        Err(CliError::Analysis(format!(
            "replay outputs differ from the manifest: {} (see {})",
            mismatched.join(", "),
            out_dir.join(MANIFEST_NAME).display()
        )))
    }
}
