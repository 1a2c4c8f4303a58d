use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use jl1vae::datasets::{crop_natural, read_pgm, tile_2x2, write_pgm, DatasetCache, FactorRenderer, ThreeDots};
use jl1vae::linear::{data_matrix, export_components, fastica_fit, pca_fit, signed_to_gray, IcaOptions};
use jl1vae::metrics::{local_metric, write_metric_csv, LocalSampleSpec, Metric, ModelEmbedding, METRIC_CSV_HEADER};
use jl1vae::rng::{stream, Stream};
use jl1vae::train::{DatasetSpec, ExperimentConfig, Trainer, CONFIG_KEYS};
use jl1vae::vae::{fd_jacobian, Checkpoint, VaeModel};

/// Jacobian-regularized VAE experiments.
#[derive(Parser, Debug)]
#[command(name = "jl1", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a three-dots dataset cache.
    GenDots {
        /// (required)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500_000)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        positions: u16,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Train a model from a `key = value` config.
    #[command(after_help = config_keys_help())]
    Train {
        /// Experiment config; optional when resuming [default: none]
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset cache, required when the config says `dataset = cache` [default: none]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for checkpoints and `run.csv`.
        /// (required)
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh [default: none]
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many batches [default: the configured total]
        #[arg(long)]
        until: Option<u64>,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Local MIG or modularity of a trained model, one CSV row per sample.
    EvalLocal {
        /// (required)
        #[arg(long)]
        ckpt: PathBuf,
        /// One radius or a comma-separated sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::Mig)]
        metric: MetricArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label for the `model_id` column [default: checkpoint file stem]
        #[arg(long)]
        model_id: Option<String>,
        /// (required)
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Write every generator Jacobian column at one image as a PGM.
    ExportJacobian {
        /// (required)
        #[arg(long)]
        ckpt: PathBuf,
        /// Record index in `--data`, or draw index for generated images.
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Dataset cache to take the image from [default: render one from the checkpoint's generator]
        #[arg(long)]
        data: Option<PathBuf>,
        /// (required)
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Fit PCA or FastICA to a cache and export its components.
    Baseline {
        /// (required)
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 100)]
        components: usize,
        /// (required)
        #[arg(long)]
        data: PathBuf,
        /// (required)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Cut random square crops from grayscale PGM images into a cache.
    CropNatural {
        /// Grayscale PGM sources (required)
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        crop: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// (required)
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
    /// Subsample four PGM images and tile them 2×2.
    Tile {
        /// Exactly four grayscale PGM images (required)
        #[arg(long, num_args = 4, required = true)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// (required)
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs [default: off]
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Mig,
    Modularity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Pca,
    Ica,
}

fn config_keys_help() -> String {
    let mut s = String::from("Config keys and defaults:\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<18} {v}\n"));
    }
    s
}

/// Errors caused by how the command was invoked rather than by its work.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<jl1vae::Error>(), Some(jl1vae::Error::Config(_)));
            ExitCode::from(if is_usage { 1 } else { 2 })
        }
    }
}

fn check_file_out(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(usage(format!("{} already exists (use --force to overwrite)", path.display())));
    }
    Ok(())
}

fn check_dir_out(path: &Path, force: bool) -> anyhow::Result<()> {
    let occupied = path.is_file() || fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(usage(format!("{} already exists and is not empty (use --force)", path.display())));
    }
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn generator_of(ck: &Checkpoint) -> anyhow::Result<ThreeDots> {
    match ck.meta.train.as_ref().map(|t| t.dataset) {
        Some(DatasetSpec::ThreeDots(d)) => Ok(d),
        _ => bail!("checkpoint was not trained on a three-dots generator, so its factors cannot be re-rendered"),
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenDots { out, count, size, positions, radius, seed, force } => {
            check_file_out(&out, force)?;
            if count == 0 {
                return Err(usage("--count must be positive"));
            }
            let dots = ThreeDots::new(size, positions, radius).map_err(|e| usage(e.to_string()))?;
            DatasetCache::generate(&dots, count, seed)?.save(&out)?;
        }
        Command::Train { config, data, out, resume, until, force } => {
            let mut trainer = match (&config, &resume) {
                (_, Some(ck)) => {
                    if config.is_some() {
                        return Err(usage("--config and --resume are exclusive; the checkpoint carries its config"));
                    }
                    Trainer::from_checkpoint(load_checkpoint(ck)?)?
                }
                (Some(path), None) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let cfg = ExperimentConfig::parse(&text)?.train;
                    let shape = match (cfg.dataset, &data) {
                        (DatasetSpec::ThreeDots(d), None) => FactorRenderer::image_shape(&d),
                        (DatasetSpec::ThreeDots(_), Some(_)) => {
                            return Err(usage("--data given but the config renders three-dots on demand"))
                        }
                        (DatasetSpec::Cache, Some(p)) => DatasetCache::load(p)?.shape(),
                        (DatasetSpec::Cache, None) => return Err(usage("dataset = cache needs --data")),
                    };
                    Trainer::new(cfg, shape)?
                }
                (None, None) => return Err(usage("either --config or --resume is required")),
            };
            check_dir_out(&out, force)?;
            let cache;
            let dots;
            let source: &dyn jl1vae::datasets::ImageSource = match (trainer.config.dataset, &data) {
                (DatasetSpec::ThreeDots(d), _) => {
                    dots = d;
                    &dots
                }
                (DatasetSpec::Cache, Some(p)) => {
                    cache = DatasetCache::load(p)?;
                    &cache
                }
                (DatasetSpec::Cache, None) => return Err(usage("dataset = cache needs --data")),
            };
            let until = until.unwrap_or(trainer.config.total_batches);
            let record = trainer.train_until(source, until, |t| {
                t.checkpoint().save(out.join(format!("checkpoint-{:09}.jl1", t.step)))
            })?;
            fs::write(out.join("run.csv"), record.to_csv())?;
            trainer.checkpoint().save(out.join("final.jl1"))?;
        }
        Command::EvalLocal { ckpt, rho, repeats, points, bins, metric, seed, model_id, out, force } => {
            check_file_out(&out, force)?;
            let ck = load_checkpoint(&ckpt)?;
            let dots = generator_of(&ck)?;
            let metric = match metric {
                MetricArg::Mig => Metric::Mig,
                MetricArg::Modularity => Metric::Modularity,
            };
            let id = model_id.unwrap_or_else(|| {
                ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
            });
            let emb = ModelEmbedding::new(&ck.model, &dots);
            let mut csv = format!("{METRIC_CSV_HEADER}\n");
            for r in rho {
                let spec = LocalSampleSpec { rho: r, n_points: points, n_repeats: repeats, n_bins: bins, seed };
                spec.validate().map_err(|e| usage(e.to_string()))?;
                let score = local_metric(&emb, &spec, metric)?;
                write_metric_csv(&mut csv, &id, &spec, metric, &score);
            }
            fs::write(&out, csv)?;
        }
        Command::ExportJacobian { ckpt, image_index, epsilon, data, out, force } => {
            if !(epsilon > 0.0) {
                return Err(usage("--epsilon must be positive"));
            }
            let ck = load_checkpoint(&ckpt)?;
            let image = match &data {
                Some(p) => {
                    let cache = DatasetCache::load(p)?;
                    if image_index >= cache.len() {
                        return Err(usage(format!("--image-index {image_index} out of range ({} records)", cache.len())));
                    }
                    cache.image(image_index)
                }
                None => {
                    let dots = generator_of(&ck)?;
                    let factors = dots.schema().sample(&mut stream(0, Stream::Fit, image_index as u64));
                    dots.render(&factors)?
                }
            };
            let model = &ck.model;
            let mut shape = vec![1];
            shape.extend(model.image_shape());
            let x = jl1vae::autodiff::Tensor::new(shape, image).map_err(|e| anyhow!("image does not fit the model: {e}"))?;
            let z = model.encode(&x)?.mean;
            let jac = fd_jacobian(model, z.data(), epsilon as f32)?;
            check_dir_out(&out, force)?;
            let cols: Vec<Vec<f64>> =
                jac.columns().iter().map(|c| c.iter().map(|&v| v as f64).collect()).collect();
            // channels are stacked vertically
            let (h, w) = (model.arch.image_size * model.arch.channels, model.arch.image_size);
            for (i, px) in signed_to_gray(&cols).iter().enumerate() {
                write_pgm(out.join(format!("latent_{i:02}.pgm")), w, h, px)?;
            }
            let mut order: Vec<(usize, f64)> = jac.column_norms().into_iter().enumerate().collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut index = String::from("latent,l2_norm\n");
            for (i, n) in order {
                index.push_str(&format!("{i},{n}\n"));
            }
            fs::write(out.join("index.csv"), index)?;
        }
        Command::Baseline { method, components, data, out, seed, max_iter, tol, force } => {
            let cache = DatasetCache::load(&data)?;
            let [c, h, w] = cache.shape();
            let d = c * h * w;
            if components == 0 || components > d.min(cache.len()) {
                return Err(usage(format!("--components must be in 1..={}", d.min(cache.len()))));
            }
            check_dir_out(&out, force)?;
            let x = data_matrix(cache.len(), d, &cache.to_matrix())?;
            let model = match method {
                Method::Pca => pca_fit(&x, components)?,
                Method::Ica => {
                    let fit = fastica_fit(&x, components, IcaOptions { max_iter, tol }, &mut stream(seed, Stream::Fit, 0))?;
                    if !fit.converged {
                        eprintln!("warning: FastICA did not converge in {max_iter} iterations");
                    }
                    fit
                }
            };
            export_components(&model, c * h, w, &out)?;
            fs::write(out.join("model.json"), serde_json::to_string(&model)?)?;
        }
        Command::CropNatural { images, count, crop, seed, out, force } => {
            check_file_out(&out, force)?;
            let imgs = images
                .iter()
                .map(|p| read_pgm(p).with_context(|| format!("reading {}", p.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            crop_natural(&imgs, count, crop, &mut stream(seed, Stream::Fit, 0))?.save(&out)?;
        }
        Command::Tile { images, size, out, force } => {
            check_file_out(&out, force)?;
            let imgs = images.iter().map(read_pgm).collect::<Result<Vec<_>, _>>()?;
            let t = tile_2x2([&imgs[0], &imgs[1], &imgs[2], &imgs[3]], size)?;
            let px: Vec<u8> = t.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            write_pgm(&out, t.width, t.height, &px)?;
        }
    }
    Ok(())
}
