//! The `bsn` command line: argument definitions, config merging and the
//! subcommand implementations. `main.rs` only parses and reports.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use bsn_core::eval::{boundary_band_iou, iou, make_trimap, write_report, EvalRecord};
use bsn_core::geometry::{assemble_input, distance_transform, extract_contour};
use bsn_core::kernels::{compute_mean_mask, global_kernel, individual_kernel, GlobalMode, NormMode};
use bsn_core::loss::Attribute;
use bsn_core::net::{
    gradient_check, init_net, load_checkpoint, predict_mask, save_checkpoint, train, write_loss_log,
    GradCheckSample, LossMode, Sample, TrainConfig,
};
use bsn_core::raster::{self, BinaryMask, ScalarField};
use bsn_core::synth::{portrait_suite, SynthParams};
use bsn_core::{seeded_rng, Error};
use clap::{Args, Parser, Subcommand};

use config::{load_config, FileConfig};

/// File written next to a checkpoint so `eval` can rebuild the input channels.
pub const MEAN_MASK_FILE: &str = "mean_mask.bsnt";
pub const LOSS_LOG_FILE: &str = "loss.csv";
/// Pass/fail threshold for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "bsn", version, about = "Boundary-sensitive portrait segmentation toolkit")]
pub struct Cli {
    /// TOML file with defaults for any flag (flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the inner foreground contour of a mask.
    Contour {
        #[arg(long)]
        mask: PathBuf,
        /// Contour PNG (255 on contour pixels).
        #[arg(long)]
        out: PathBuf,
        /// Also write the distance-to-contour field as BSNT.
        #[arg(long, value_name = "FILE")]
        distance: Option<PathBuf>,
    },
    /// Soft labels [fg, boundary, bg] for one mask.
    IndivKernel {
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        band: BandArgs,
        #[arg(long)]
        out: PathBuf,
        /// Boundary-channel visualisation.
        #[arg(long, value_name = "FILE")]
        png: Option<PathBuf>,
    },
    /// Position-prior loss weights from a directory of masks.
    GlobalKernel {
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        global: GlobalArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        png: Option<PathBuf>,
    },
    /// Pixelwise mean of a directory of masks.
    MeanMask {
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_name = "FILE")]
        png: Option<PathBuf>,
    },
    /// Train the network; writes a checkpoint, the mean mask and the loss log.
    Train(Box<TrainArgs>),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Foreground / unknown / background map for matting.
    Trimap {
        #[arg(long)]
        mask: PathBuf,
        /// Total width of the unknown band in pixels.
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long)]
        loss: Option<LossMode>,
        /// Side of the random square input (at most 8).
        #[arg(long, default_value_t = 6)]
        size: usize,
    },
}

#[derive(Debug, Args)]
pub struct BandArgs {
    /// Boundary band width P in pixels.
    #[arg(long)]
    pub width: Option<u32>,
    /// Soft-label normalisation: max or sum.
    #[arg(long)]
    pub norm: Option<NormMode>,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Weight range lower end.
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// Weight range upper end.
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// literal or intent.
    #[arg(long)]
    pub mode: Option<GlobalMode>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of RGB images named like their masks.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Directory of ground-truth mask PNGs.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// CSV `image_id,attribute` with long/short hair labels.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Train on N generated portraits instead of files.
    #[arg(long, value_name = "N", conflicts_with_all = ["images", "masks", "attributes"])]
    pub synthetic: Option<usize>,
    /// Side of the generated portraits.
    #[arg(long, default_value_t = 64, requires = "synthetic")]
    pub size: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning rate (default 2.5e-4)
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    /// SGD momentum (default 0)
    #[arg(long, allow_negative_numbers = true)]
    pub momentum: Option<f64>,
    /// Phase-1 iterations (segmentation only).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Phase-2 iterations (attribute head added, lr / 10).
    #[arg(long)]
    pub phase2_iterations: Option<usize>,
    /// Square crop side (default 400, capped at the image size).
    #[arg(long)]
    pub crop: Option<usize>,
    /// Horizontal flip probability.
    #[arg(long, allow_negative_numbers = true)]
    pub flip: Option<f64>,
    /// ik, gk, combined or baseline (default combined)
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[command(flatten)]
    pub band: BandArgs,
    #[command(flatten)]
    pub global: GlobalArgs,
    /// Attribute loss weight.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth mask directory.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Directory of predicted mask PNGs named like the ground truth.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    pub preds: Option<PathBuf>,
    /// Checkpoint directory written by `train`; predicts from `--images`.
    #[arg(long, requires = "images")]
    pub checkpoint: Option<PathBuf>,
    /// Input images for checkpoint mode
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Radius for the boundary-band IoU.
    #[arg(long)]
    pub band_width: Option<u32>,
    /// Per-image CSV report.
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the predicted masks here (checkpoint mode).
    #[arg(long, value_name = "DIR")]
    pub save_preds: Option<PathBuf>,
}

/// Flag overrides file overrides default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn require_path(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or(file)
        .ok_or_else(|| anyhow!("missing --{name} (or `{name}` in the config file)"))
}

/// The command-line flag that sets a core parameter.
pub fn flag_for(param: &str) -> String {
    match param {
        "learning_rate" => "--lr".into(),
        "flip_prob" => "--flip".into(),
        "band_width" | "width_px" => "--width".into(),
        "global_mode" => "--mode".into(),
        "w" => "--band-width".into(),
        other => format!("--{}", other.replace('_', "-")),
    }
}

/// One-line rendering of an error chain; core parameter errors are reported
/// against the flag that sets them.
pub fn diagnostic(err: &anyhow::Error) -> String {
    for cause in err.chain() {
        if let Some(Error::InvalidParameter { name, reason }) = cause.downcast_ref::<Error>() {
            return format!("invalid {}: {reason}", flag_for(name));
        }
    }
    // Core I/O errors already print their source; skip causes that repeat.
    let mut line = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !line.contains(&text) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&text);
        }
    }
    line.replace('\n', " ")
}

fn mask_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("{}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{}: no .png masks found", dir.display());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_masks(dir: &Path) -> anyhow::Result<Vec<(PathBuf, BinaryMask)>> {
    mask_files(dir)?
        .into_iter()
        .map(|p| Ok((p.clone(), raster::load_mask(&p)?)))
        .collect()
}

fn save_field(field: &ScalarField<f64>, out: &Path, png: Option<&Path>) -> anyhow::Result<()> {
    raster::write_tensor(&field.to_tensor().map(|v| v as f32), out)?;
    if let Some(png) = png {
        raster::field_to_png(field, png)?;
    }
    Ok(())
}

fn read_attributes(path: &Path) -> anyhow::Result<Vec<(String, Attribute)>> {
    let ctx = || format!("{}", path.display());
    let mut reader = csv::Reader::from_path(path).with_context(ctx)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.with_context(ctx)?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            bail!("{}: row {} needs `image_id,attribute`", path.display(), i + 2);
        };
        let attr = label
            .parse()
            .map_err(|e: Error| anyhow!("{}: row {}: {e}", path.display(), i + 2))?;
        out.push((id.trim().to_string(), attr));
    }
    Ok(out)
}

/// Resolved training configuration plus the dataset it applies to.
pub fn train_config(args: &TrainArgs, file: &FileConfig, seed: u64, image_side: usize) -> TrainConfig {
    let d = TrainConfig::default();
    let crop = args.crop.or(file.crop).unwrap_or(d.crop.min(image_side));
    TrainConfig {
        learning_rate: pick(args.lr, file.lr, d.learning_rate),
        momentum: pick(args.momentum, file.momentum, d.momentum),
        iterations: pick(args.iterations, file.iterations, d.iterations),
        phase2_iterations: pick(args.phase2_iterations, file.phase2_iterations, d.phase2_iterations),
        crop,
        flip_prob: pick(args.flip, file.flip, d.flip_prob),
        seed,
        loss: pick(args.loss, file.loss, d.loss),
        band_width: pick(args.band.width, file.width, d.band_width),
        norm: pick(args.band.norm, file.norm, d.norm),
        global_mode: pick(args.global.mode, file.mode, d.global_mode),
        a: pick(args.global.a, file.a, d.a),
        b: pick(args.global.b, file.b, d.b),
        lambda: pick(args.lambda, file.lambda, d.lambda),
    }
}

fn load_dataset(args: &TrainArgs, file: &FileConfig, seed: u64) -> anyhow::Result<Vec<Sample>> {
    if let Some(n) = args.synthetic {
        if n == 0 || args.size == 0 {
            bail!("invalid --synthetic/--size: need at least one image of positive size");
        }
        let params = SynthParams {
            size: args.size,
            edge_blur: 1,
            ..SynthParams::default()
        };
        return Ok(portrait_suite(n, &params, seed));
    }
    let masks_dir = require_path(args.masks.clone(), file.masks.clone(), "masks")?;
    let images_dir = require_path(args.images.clone(), file.images.clone(), "images")?;
    let attributes = match args.attributes.clone().or(file.attributes.clone()) {
        Some(p) => read_attributes(&p)?,
        None => Vec::new(),
    };
    load_masks(&masks_dir)?
        .into_iter()
        .map(|(path, mask)| {
            let id = stem(&path);
            let image_path = images_dir.join(path.file_name().expect("listed file"));
            let image = raster::load_rgb(&image_path)?;
            if image.dims() != mask.dims() {
                bail!(
                    "{}: image is {}x{} but its mask is {}x{}",
                    image_path.display(),
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                );
            }
            let attribute = attributes.iter().find(|(k, _)| *k == id).map(|(_, a)| *a);
            Ok(Sample {
                id,
                image,
                mask,
                attribute,
            })
        })
        .collect()
}

fn run_train(args: &TrainArgs, file: &FileConfig, seed: u64, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let dataset = load_dataset(args, file, seed)?;
    let side = dataset
        .iter()
        .map(|s| s.mask.width().min(s.mask.height()))
        .min()
        .unwrap_or(0);
    let config = train_config(args, file, seed, side);
    let outcome = train(&dataset, &config)?;

    let out = &args.out;
    save_checkpoint(&outcome.net, out)?;
    save_field(&outcome.mean_mask, &out.join(MEAN_MASK_FILE), None)?;
    let mut csv = Vec::new();
    write_loss_log(&outcome.log, &mut csv)?;
    let log_path = out.join(LOSS_LOG_FILE);
    fs::write(&log_path, csv).with_context(|| format!("{}", log_path.display()))?;

    let last = outcome.log.last().map_or(f64::NAN, |e| e.total);
    writeln!(
        stdout,
        "trained {} iterations on {} images, final loss {last:.6}, checkpoint in {}",
        outcome.log.len(),
        dataset.len(),
        out.display()
    )?;
    Ok(())
}

fn run_eval(args: &EvalArgs, file: &FileConfig, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let masks_dir = require_path(args.masks.clone(), file.masks.clone(), "masks")?;
    let band = pick(args.band_width, file.band_width, 5);
    if band == 0 {
        bail!("invalid --band-width: must be at least 1");
    }
    let model = match &args.checkpoint {
        Some(dir) => {
            let net = load_checkpoint(dir)?;
            let mean = raster::read_tensor(dir.join(MEAN_MASK_FILE))?.plane(0).map(f64::from);
            let images = require_path(args.images.clone(), file.images.clone(), "images")?;
            Some((net, mean, images))
        }
        None => None,
    };
    if let Some(dir) = &args.save_preds {
        fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    }

    let mut records = Vec::new();
    for (path, gt) in load_masks(&masks_dir)? {
        let name = path.file_name().expect("listed file");
        let pred = match (&model, &args.preds) {
            (Some((net, mean, images)), _) => {
                let image = raster::load_rgb(images.join(name))?;
                let input = assemble_input(&image, mean)
                    .with_context(|| format!("{}", images.join(name).display()))?;
                predict_mask(net, &input)?
            }
            (None, Some(dir)) => raster::load_mask(dir.join(name))?,
            (None, None) => bail!("missing --preds or --checkpoint"),
        };
        if pred.dims() != gt.dims() {
            bail!(
                "{}: prediction is {}x{}, ground truth is {}x{}",
                name.to_string_lossy(),
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            );
        }
        if let Some(dir) = &args.save_preds {
            raster::save_mask(&pred, dir.join(name))?;
        }
        records.push(EvalRecord {
            image_id: stem(&path),
            iou: iou(&pred, &gt)?,
            band_iou: boundary_band_iou(&pred, &gt, band)?,
        });
    }

    let mut csv = Vec::new();
    write_report(&records, &mut csv)?;
    fs::write(&args.out, csv).with_context(|| format!("{}", args.out.display()))?;
    let n = records.len() as f64;
    writeln!(
        stdout,
        "images={} mean_iou={:.6} mean_band_iou={:.6}",
        records.len(),
        records.iter().map(|r| r.iou).sum::<f64>() / n,
        records.iter().map(|r| r.band_iou).sum::<f64>() / n
    )?;
    Ok(())
}

/// Runs one parsed invocation, writing human-readable results to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let seed = pick(cli.seed, file.seed, 0);
    let d = TrainConfig::default();

    match cli.command {
        Command::Contour { mask, out, distance } => {
            let m = raster::load_mask(&mask)?;
            let contour = extract_contour(&m);
            raster::save_mask(&contour.to_mask(), &out)?;
            if let Some(path) = distance {
                let field = distance_transform(&contour)
                    .with_context(|| format!("{}: mask has no contour", mask.display()))?;
                save_field(&field, &path, None)?;
            }
            writeln!(stdout, "{} contour pixels", contour.len())?;
        }
        Command::IndivKernel { mask, band, out, png } => {
            let width = pick(band.width, file.width, d.band_width);
            let norm = pick(band.norm, file.norm, d.norm);
            let k = individual_kernel(&raster::load_mask(&mask)?, width, norm);
            raster::write_tensor(&k.to_tensor().map(|v| v as f32), &out)?;
            if let Some(png) = png {
                raster::field_to_png(&k.boundary_plane(), png)?;
            }
        }
        Command::GlobalKernel { masks, global, out, png } => {
            let dir = require_path(masks, file.masks.clone(), "masks")?;
            let masks: Vec<BinaryMask> = load_masks(&dir)?.into_iter().map(|(_, m)| m).collect();
            let mean = compute_mean_mask(&masks).with_context(|| format!("{}", dir.display()))?;
            let k = global_kernel(
                &mean,
                pick(global.a, file.a, d.a),
                pick(global.b, file.b, d.b),
                pick(global.mode, file.mode, d.global_mode),
            )?;
            save_field(k.weights(), &out, png.as_deref())?;
        }
        Command::MeanMask { masks, out, png } => {
            let dir = require_path(masks, file.masks.clone(), "masks")?;
            let masks: Vec<BinaryMask> = load_masks(&dir)?.into_iter().map(|(_, m)| m).collect();
            let mean = compute_mean_mask(&masks).with_context(|| format!("{}", dir.display()))?;
            save_field(&mean, &out, png.as_deref())?;
        }
        Command::Train(args) => run_train(&args, &file, seed, stdout)?,
        Command::Eval(args) => run_eval(&args, &file, stdout)?,
        Command::Trimap { mask, width, out } => {
            let width = pick(width, file.width, d.band_width);
            make_trimap(&raster::load_mask(&mask)?, width).save(&out)?;
        }
        Command::Gradcheck { loss, size } => {
            if !(1..=8).contains(&size) {
                bail!("invalid --size: {size} is not in 1..=8");
            }
            let loss = pick(loss, file.loss, d.loss);
            let net = init_net(seed).cast::<f64>();
            let sample = GradCheckSample::random(size, loss, &mut seeded_rng(seed))?;
            let report = gradient_check(&net, &sample)?;
            writeln!(
                stdout,
                "max relative error {:.3e} (loss {:.3e}, parameters {:.3e} at {})",
                report.max_error(),
                report.logit_error,
                report.param_error,
                report.worst_param
            )?;
            if report.max_error() >= GRADCHECK_TOLERANCE {
                bail!(
                    "gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}",
                    report.max_error()
                );
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_for_core_parameters() {
        assert_eq!(flag_for("learning_rate"), "--lr");
        assert_eq!(flag_for("flip_prob"), "--flip");
        assert_eq!(flag_for("w"), "--band-width");
        assert_eq!(flag_for("a"), "--a");
        assert_eq!(flag_for("phase2_iterations"), "--phase2-iterations");
    }

    #[test]
    fn flag_beats_file_beats_default() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
    }

    #[test]
    fn crop_defaults_to_image_side() {
        let cli = Cli::try_parse_from(["bsn", "train", "--synthetic", "2", "--out", "x"]).unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let file = FileConfig::default();
        assert_eq!(train_config(&args, &file, 0, 64).crop, 64);
        assert_eq!(train_config(&args, &file, 0, 1000).crop, 400);
        let file = FileConfig {
            crop: Some(32),
            lr: Some(0.5),
            ..FileConfig::default()
        };
        let c = train_config(&args, &file, 0, 64);
        assert_eq!((c.crop, c.learning_rate), (32, 0.5));
    }
}
