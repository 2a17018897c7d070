use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use n2n_seismic::clip::{clip_denoise, default_schedule, ClipSchedule, Denoiser, IdentityDenoiser};
use n2n_seismic::fx::fx_decon;
use n2n_seismic::grid::{denormalize, normalize, stats};
use n2n_seismic::io::checkpoint::Checkpoint;
use n2n_seismic::io::corpus::load_image_corpus;
use n2n_seismic::io::render::{render_png, Colormap};
use n2n_seismic::io::report::{write_eval_csv, write_training_log_csv};
use n2n_seismic::io::{
    load_checkpoint, load_seismic, save_checkpoint, write_grid, InputFormat, RunConfig, CONFIG_ENV,
};
use n2n_seismic::metrics::{evaluate, time_interval};
use n2n_seismic::nn::{denoise_image, DenoiserModel, Trainer};
use n2n_seismic::synth::{add_noise, make_wedge, procedural_corpus};
use n2n_seismic::{AxisUnit, Error, Result, SeismicSection};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

/// Self-supervised seismic random-noise attenuation.
#[derive(Parser)]
#[command(name = "n2n-seismic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-reflector wedge section.
    WedgeGen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Add Gaussian noise to a section.
    Corrupt {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        mean: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// First row that receives noise.
        #[arg(long)]
        from_row: Option<usize>,
        /// Rescale the noisy result to a peak amplitude of 1.
        #[arg(long)]
        renormalize: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the denoiser with Noise2Noise pairs.
    Train {
        /// Directory of png/jpeg training images.
        #[arg(long, conflicts_with = "procedural", required_unless_present_any = ["procedural", "resume"])]
        corpus_dir: Option<PathBuf>,
        /// Train on generated textures instead of images.
        #[arg(long)]
        procedural: bool,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Continue from this checkpoint; its model settings take precedence.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many more epochs even if not converged.
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch log; defaults to the checkpoint path with `.log.csv`
        /// appended.
        #[arg(long)]
        log_csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Denoise a section with a trained model.
    Denoise {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Use a pass-through denoiser instead of a checkpoint.
        #[arg(long, hide = true, conflicts_with = "checkpoint")]
        identity: bool,
        #[arg(long, value_enum, default_value_t = Mode::N2nSeismic)]
        mode: Mode,
        /// Number of evenly spaced clip levels.
        #[arg(long, conflicts_with = "schedule")]
        t: Option<usize>,
        /// Explicit comma-separated clip levels in amplitude units.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<f64>>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// f-x deconvolution baseline.
    Fxdecon {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Compare sections against a clean reference.
    Eval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        /// Sample interval in seconds; defaults to the clean section's.
        #[arg(long)]
        dt: Option<f64>,
        /// Velocity for converting depth sections to time.
        #[arg(long)]
        velocity: Option<f64>,
        /// Comma-separated `low-high` bands in Hz, e.g. `0-10,10-20`.
        #[arg(long, value_delimiter = ',', value_parser = parse_band)]
        bands: Option<Vec<(f64, f64)>>,
        /// Defaults to standard output.
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[command(flatten)]
        csv_input: CsvArgs,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Render a section to PNG.
    Render {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out_png: PathBuf,
        #[arg(long, default_value_t = 99.0)]
        clip_percentile: f64,
        #[arg(long, value_enum, default_value_t = Colormap::Gray)]
        cmap: Colormap,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Clip & denoise over amplitude bands.
    N2nSeismic,
    /// One pass over the peak-normalized section.
    N2nImage,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref())
    }
}

#[derive(Args)]
struct CsvArgs {
    /// Sample interval for CSV input.
    #[arg(long, default_value_t = 0.002)]
    csv_interval: f64,
    #[arg(long, value_enum, default_value_t = AxisArg::Time)]
    csv_axis: AxisArg,
}

impl CsvArgs {
    fn load(&self, path: &Path) -> Result<SeismicSection> {
        let unit = match self.csv_axis {
            AxisArg::Time => AxisUnit::Time,
            AxisArg::Depth => AxisUnit::Depth,
        };
        load_seismic(path, InputFormat::guess(path, self.csv_interval, unit))
    }
}

#[derive(Args)]
struct InputArgs {
    /// Grid file, or `.csv` with one row per sample.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    csv: CsvArgs,
}

impl InputArgs {
    fn load(&self) -> Result<SeismicSection> {
        self.csv.load(&self.input)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Time,
    Depth,
}

fn parse_band(text: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = text
        .split_once('-')
        .ok_or_else(|| format!("band {text:?} is not low-high"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad band start in {text:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad band end in {text:?}"))?;
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Divergence(_) => EXIT_DIVERGENCE,
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::WedgeGen { out, config } => {
            let cfg = config.load()?;
            let wedge = make_wedge(&cfg.wedge)?;
            write_grid(&out, &wedge, cfg.output.dtype)?;
            let s = stats(&wedge, 10)?;
            println!(
                "wrote {} ({}x{}): max_abs {:.6} mean {:.6} variance {:.6}",
                out.display(),
                wedge.n_samples(),
                wedge.n_traces(),
                s.max_abs,
                s.mean,
                s.variance
            );
            Ok(())
        }
        Command::Corrupt {
            input,
            out,
            sigma,
            mean,
            seed,
            from_row,
            renormalize,
            config,
        } => {
            let cfg = config.load()?;
            let mut spec = cfg.noise;
            spec.sigma = sigma.unwrap_or(spec.sigma);
            spec.mean = mean.unwrap_or(spec.mean);
            spec.seed = seed.unwrap_or(spec.seed);
            spec.region_start_row = from_row.unwrap_or(spec.region_start_row);
            let mut noisy = add_noise(&input.load()?, &spec)?;
            if renormalize {
                let (scaled, peak) = normalize(&noisy)?;
                noisy = scaled.with_provenance(format!("normalize: divided by {peak}"));
            }
            write_grid(&out, &noisy, cfg.output.dtype)
        }
        Command::Train {
            corpus_dir,
            procedural,
            out_checkpoint,
            resume,
            epochs,
            log_csv,
            config,
        } => train(
            corpus_dir.as_deref(),
            procedural,
            &out_checkpoint,
            resume.as_deref(),
            epochs,
            log_csv,
            &config.load()?,
        ),
        Command::Denoise {
            input,
            out,
            checkpoint,
            identity,
            mode,
            t,
            schedule,
            config,
        } => {
            let cfg = config.load()?;
            let section = input.load()?;
            let mut section = section;
            let (model, source): (Option<DenoiserModel>, String) = match &checkpoint {
                Some(path) if !identity => {
                    let ckpt = load_checkpoint(path)?;
                    section.push_provenance(format!(
                        "train: checkpoint={} epochs={} steps={} best_val_mse={} seed={}",
                        path.display(),
                        ckpt.progress.epochs_completed,
                        ckpt.model.adam.step_count,
                        ckpt.progress.best_val_mse,
                        ckpt.model.config.seed
                    ));
                    (Some(ckpt.best_model()), path.display().to_string())
                }
                _ => (None, "identity".to_string()),
            };
            let denoiser: &dyn Denoiser = match &model {
                Some(m) => m,
                None => &IdentityDenoiser,
            };
            let output = match mode {
                Mode::N2nSeismic => {
                    let schedule = match (schedule, t) {
                        (Some(levels), _) => ClipSchedule::new(levels)?,
                        (None, Some(t)) => default_schedule(&section, t)?,
                        (None, None) => match cfg.clip.schedule {
                            Some(s) => s,
                            None => default_schedule(&section, cfg.clip.t)?,
                        },
                    };
                    clip_denoise(&section, &schedule, denoiser)?
                        .with_provenance(format!("denoise: mode=n2n-seismic model={source}"))
                }
                Mode::N2nImage => {
                    let (scaled, peak) = normalize(&section)?;
                    let cleaned = match &model {
                        Some(m) => denoise_image(m, scaled.view())?,
                        None => IdentityDenoiser.denoise(scaled.view())?,
                    };
                    denormalize(&section.with_data(cleaned)?, peak)?
                        .with_provenance(format!("denoise: mode=n2n-image model={source}"))
                }
            };
            write_grid(&out, &output, cfg.output.dtype)
        }
        Command::Fxdecon { input, out, config } => {
            let cfg = config.load()?;
            let result = fx_decon(&input.load()?, &cfg.fx)?;
            write_grid(&out, &result, cfg.output.dtype)
        }
        Command::Eval {
            clean,
            test,
            dt,
            velocity,
            bands,
            out_csv,
            csv_input,
            config,
        } => {
            let cfg = config.load()?;
            let reference = csv_input.load(&clean)?;
            let dt = match dt {
                Some(dt) => dt,
                None => time_interval(&reference, velocity.or(cfg.metrics.velocity))?,
            };
            let bands = bands.unwrap_or(cfg.metrics.bands);
            let reports = test
                .iter()
                .map(|path| {
                    let section = csv_input.load(path)?;
                    evaluate(&path.display().to_string(), &reference, &section, dt, &bands)
                })
                .collect::<Result<Vec<_>>>()?;
            match out_csv {
                Some(path) => write_eval_csv(BufWriter::new(File::create(path)?), &reports),
                None => write_eval_csv(io::stdout().lock(), &reports),
            }
        }
        Command::Render {
            input,
            out_png,
            clip_percentile,
            cmap,
        } => render_png(&input.load()?, &out_png, clip_percentile, cmap),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn train(
    corpus_dir: Option<&Path>,
    procedural: bool,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
    log_csv: Option<PathBuf>,
    cfg: &RunConfig,
) -> Result<()> {
    let start = match resume {
        Some(path) => load_checkpoint(path)?,
        None => Checkpoint::from_model(DenoiserModel::new(cfg.model.clone())?),
    };
    let corpus = match corpus_dir {
        Some(dir) if !procedural => load_image_corpus(dir)?,
        _ => {
            let size = cfg.corpus.procedural_size;
            procedural_corpus(cfg.corpus.procedural_count, (size, size), start.model.config.seed)
        }
    };
    let mut trainer = Trainer::resume(start.model, start.progress, start.log, &corpus)?;
    let outcome = trainer.train(epochs, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val_mse {:.6}  {:.1}s",
            r.epoch,
            r.train_loss,
            r.val_mse,
            r.wall_time_s.unwrap_or(0.0)
        );
    });
    let ckpt = Checkpoint {
        model: trainer.model.clone(),
        progress: trainer.progress.clone(),
        log: trainer.log.clone(),
    };
    let log_path = log_csv.unwrap_or_else(|| with_suffix(out, ".log.csv"));
    match outcome {
        Ok(termination) => {
            save_checkpoint(out, &ckpt)?;
            let mut file = BufWriter::new(File::create(&log_path)?);
            write_training_log_csv(&mut file, &ckpt.log)?;
            file.flush()?;
            println!(
                "stopped: {termination:?} after {} epochs, best val_mse {:.6}",
                ckpt.progress.epochs_completed, ckpt.progress.best_val_mse
            );
            Ok(())
        }
        Err(e @ Error::Divergence(_)) => {
            let partial = with_suffix(out, ".diverged");
            save_checkpoint(&partial, &ckpt)?;
            write_training_log_csv(BufWriter::new(File::create(&log_path)?), &ckpt.log)?;
            eprintln!("partial checkpoint written to {}", partial.display());
            Err(e)
        }
        Err(e) => Err(e),
    }
}
