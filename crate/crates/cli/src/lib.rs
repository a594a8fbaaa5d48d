//! `svstitch` command-line front end.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration or input
//! error, 3 alignment failure.

pub mod artifacts;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use svstitch::dataset::{load_set_from, synth_generate, write_synth, SurroundSet, SynthSpec};
use svstitch::eval::{ablation_to_csv, bucketize, rows_to_csv, run_ablation};
use svstitch::image::MaskedImage;
use svstitch::pipeline::{stitch_set, Toggles};
use svstitch::Error;

use crate::artifacts::{write_stitch, MotionsFile, MOTIONS_NAME};
use crate::config::PipelineArgs;

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALIGNMENT: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_alignment_failure() => EXIT_ALIGNMENT,
            Error::DegenerateChain(_) | Error::SingularConfiguration(_) => EXIT_ALIGNMENT,
            Error::Io { .. } | Error::Image { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "svstitch", version, about = "Surround-view multi-image stitching")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SVSTITCH_JOBS")]
    pub jobs: Option<usize>,
    /// More diagnostics on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stitch a surround set described by a `set.json` manifest.
    Stitch {
        /// Manifest file or the directory holding `set.json`.
        set: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Stitch a single reference/target pair.
    Pair {
        /// Reference image (stays fixed).
        reference: PathBuf,
        /// Target image (warped onto the reference).
        target: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Generate a synthetic set with ground-truth warps.
    Synth {
        /// JSON synthetic spec; omitted fields take defaults.
        spec: Option<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Aggregate run directories into one bucketed CSV, or run the ablation
    /// sweep over set directories.
    Eval {
        /// Run directories (holding `motions.json`), or set directories with `--ablation`.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// CSV destination (default: stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Stitch each set under every leave-one-out toggle combination.
        #[arg(long)]
        ablation: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let result = match cli.jobs {
        Some(0) => Err(CliError::config("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::config(format!("cannot start {n} workers: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("svstitch: {e}");
            e.code
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Stitch { set, out, pipeline } => {
            let loaded = load_set_from(&set)?;
            stitch_into(&loaded, &set_name(&set), &out, &pipeline)
        }
        Command::Pair {
            reference,
            target,
            out,
            pipeline,
        } => {
            let images = vec![MaskedImage::load(&reference)?, MaskedImage::load(&target)?];
            let set = SurroundSet::new(images, None, true)?;
            stitch_into(&set, "pair", &out, &pipeline)
        }
        Command::Synth { spec, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::read(p)?,
                None => SynthSpec::default(),
            };
            let generated = synth_generate(&spec)?;
            write_synth(&generated, &out)?;
            log::info!("wrote {} views to {}", spec.n_views, out.display());
            Ok(())
        }
        Command::Eval {
            dirs,
            out,
            ablation,
            pipeline,
        } => {
            let csv = if ablation {
                ablation_csv(&dirs, &pipeline)?
            } else {
                aggregate_csv(&dirs)?
            };
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|source| Error::Io { path, source })?,
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

/// Name of a set from its manifest path: the directory name.
fn set_name(path: &Path) -> String {
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    dir.and_then(|d| d.canonicalize().ok())
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "set".into())
}

fn stitch_into(set: &SurroundSet, name: &str, out: &Path, args: &PipelineArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let label = cfg.toggles.label();
    log::info!("stitching {} images ({label})", set.images.len());
    let result = stitch_set(set, &cfg.effective())?;
    log::info!(
        "overlap PSNR {:.2} dB, SSIM {:.4}, canvas {}x{}",
        result.metrics.psnr,
        result.metrics.ssim,
        result.rendering.canvas.width(),
        result.rendering.canvas.height()
    );
    write_stitch(out, name, &label, &result, cfg.dump_masks)?;
    Ok(())
}

fn aggregate_csv(dirs: &[PathBuf]) -> Result<String, CliError> {
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let path = dir.join(MOTIONS_NAME);
        if !path.is_file() {
            return Err(CliError::config(format!("missing {}", path.display())));
        }
        let motions = MotionsFile::read(&path)?;
        rows.push(motions.metric_row(&set_name(dir)));
    }
    Ok(rows_to_csv(&bucketize(rows)))
}

fn ablation_csv(dirs: &[PathBuf], args: &PipelineArgs) -> Result<String, CliError> {
    let cfg = args.resolve()?;
    let sets = dirs.iter().map(load_set_from).collect::<svstitch::Result<Vec<_>>>()?;
    let toggles: Vec<Toggles> = Toggles::leave_one_out()
        .into_iter()
        .map(|t| Toggles {
            cylindrical: t.cylindrical && cfg.toggles.cylindrical,
            shape: t.shape && cfg.toggles.shape,
            size: t.size && cfg.toggles.size,
            fold: t.fold && cfg.toggles.fold,
        })
        .collect();
    let rows = run_ablation(&sets, &toggles, &cfg.stitch)?;
    for r in &rows {
        for f in &r.failures {
            log::warn!("{} n={}: {f}", r.toggles.label(), r.n_images);
        }
    }
    Ok(ablation_to_csv(&rows))
}
