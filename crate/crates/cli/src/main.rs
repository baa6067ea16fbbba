mod config;

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attsf::data::{
    extract_patches, load_dataset, png_stems, read_image, synth_dual_pixel, write_png,
    write_sample, DualPixelSample, Split,
};
use attsf::loss::{mae, psnr, ssim, LossConfig};
use attsf::nn::AttsfModel;
use attsf::train::{Checkpoint, Trainer};
use attsf::{Error, RngState};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::config::{synth_problems, CliConfig};

#[derive(Parser)]
#[command(name = "attsf", version, about = "Dual-pixel defocus deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on `<data>/train` (and validate on `<data>/val` when present).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Deblur one left/right pair into a PNG of the same size and bit depth.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image and mean PSNR/SSIM/MAE of matching PNG stems, as CSV.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Score the common stems instead of failing on unmatched ones.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Turn a folder of sharp PNGs into a synthetic dual-pixel dataset.
    Synth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum blur radius in pixels; overrides `synth.max_blur_radius`.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// A failed command and its exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 2;
const PARTIAL: u8 = 3;
const NUMERIC: u8 = 4;

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    fn config(problems: Vec<String>) -> Self {
        Self::usage(format!("invalid config:\n  {}", problems.join("\n  ")))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => NUMERIC,
            Error::Io(ref io) if io.kind() != io::ErrorKind::NotFound => 1,
            _ => USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<CliConfig, Failure> {
    match path {
        Some(p) => CliConfig::load(p).map_err(Failure::config),
        None => Ok(CliConfig::default()),
    }
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

fn patches_of(root: &Path, split: Split, cfg: &CliConfig) -> Result<Vec<DualPixelSample>, Failure> {
    let mut out = Vec::new();
    for sample in load_dataset(root, split)? {
        out.extend(extract_patches(&sample?, &cfg.patch)?);
    }
    Ok(out)
}

fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    require_dir(data, "data")?;
    require_dir(&data.join(Split::Train.dir_name()), "training split")?;
    let checkpoint = resume
        .map(|p| Checkpoint::load_for(p, &cfg.model, false))
        .transpose()?;

    let train = patches_of(data, Split::Train, &cfg)?;
    if train.is_empty() {
        return Err(Failure::usage(format!(
            "no {0}×{0} training patches under {1}",
            cfg.patch.size,
            data.join(Split::Train.dir_name()).display()
        )));
    }
    let val = if data.join(Split::Val.dir_name()).is_dir() {
        patches_of(data, Split::Val, &cfg)?
    } else {
        Vec::new()
    };
    info!(
        "{} training patches, {} validation patches",
        train.len(),
        val.len()
    );

    let mut trainer = match checkpoint {
        Some(ckpt) => Trainer::resume(&ckpt, cfg.train.clone())?,
        None => {
            let model = AttsfModel::new(&cfg.model, &mut RngState::new(cfg.train.seed))?;
            Trainer::new(model, cfg.train.clone())?
        }
    };
    let records = trainer.run(&train, &val, Some(out))?;
    if let Some(last) = records.last() {
        info!(
            "finished at phase {} epoch {} with loss {:.6}",
            last.phase, last.epoch, last.train_loss
        );
    }
    Ok(())
}

fn cmd_infer(ckpt: &Path, left: &Path, right: &Path, out: &Path) -> CmdResult {
    let (l, depth) = read_image(left)?;
    let (r, _) = read_image(right)?;
    if l.shape() != r.shape() {
        return Err(Failure::usage(format!(
            "left {} is {:?} but right {} is {:?}",
            left.display(),
            &l.shape()[..2],
            right.display(),
            &r.shape()[..2]
        )));
    }
    let model = Checkpoint::load(ckpt)?.model()?;
    let pred = model.deblur(&l, &r)?;
    if !pred.all_finite() {
        return Err(Failure {
            code: NUMERIC,
            message: "model produced non-finite output".into(),
        });
    }
    write_png(out, &pred, depth)?;
    Ok(())
}

struct Scores {
    psnr: f64,
    ssim: f64,
    mae: f64,
}

fn format_row(name: &str, s: &Scores) -> String {
    format!("{name},{},{},{}", s.psnr, s.ssim, s.mae)
}

fn cmd_eval(pred: &Path, gt: &Path, allow_partial: bool) -> CmdResult {
    require_dir(pred, "prediction")?;
    require_dir(gt, "ground-truth")?;
    let pred_stems = png_stems(pred)?;
    let gt_stems = png_stems(gt)?;
    let unmatched: Vec<&String> = pred_stems.symmetric_difference(&gt_stems).collect();
    if !unmatched.is_empty() {
        let list: Vec<&str> = unmatched.iter().map(|s| s.as_str()).collect();
        let message = format!("unmatched stems: {}", list.join(", "));
        if !allow_partial {
            return Err(Failure {
                code: PARTIAL,
                message,
            });
        }
        warn!("{message}");
    }
    let common: Vec<&String> = pred_stems.intersection(&gt_stems).collect();
    if common.is_empty() {
        return Err(Failure::usage(
            "no stems in common between prediction and ground truth",
        ));
    }

    let loss_cfg = LossConfig::default();
    let mut rows = Vec::with_capacity(common.len());
    for stem in &common {
        let (p, _) = read_image(&pred.join(format!("{stem}.png")))?;
        let (t, _) = read_image(&gt.join(format!("{stem}.png")))?;
        if p.shape() != t.shape() {
            return Err(Failure::usage(format!(
                "`{stem}`: prediction is {:?} but ground truth is {:?}",
                &p.shape()[..2],
                &t.shape()[..2]
            )));
        }
        let scores = Scores {
            psnr: psnr(&p, &t)?,
            ssim: ssim(&p, &t, &loss_cfg)?,
            mae: mae(&p, &t)?,
        };
        rows.push((stem.as_str(), scores));
    }
    let n = rows.len() as f64;
    let mean = Scores {
        psnr: rows.iter().map(|(_, s)| s.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|(_, s)| s.ssim).sum::<f64>() / n,
        mae: rows.iter().map(|(_, s)| s.mae).sum::<f64>() / n,
    };

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "image,psnr,ssim,mae")?;
    for (stem, s) in &rows {
        writeln!(stdout, "{}", format_row(stem, s))?;
    }
    writeln!(stdout, "{}", format_row("mean", &mean))?;
    eprintln!(
        "{} images: PSNR {:.2} dB, SSIM {:.4}, MAE {:.4}",
        rows.len(),
        mean.psnr,
        mean.ssim,
        mean.mae
    );
    Ok(())
}

fn cmd_synth(
    input: &Path,
    out: &Path,
    radius: Option<f64>,
    seed: u64,
    split: Split,
    config: Option<&Path>,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(r) = radius {
        cfg.synth.max_blur_radius = r;
    }
    let problems = synth_problems(&cfg.synth);
    if !problems.is_empty() {
        return Err(Failure::config(problems));
    }
    require_dir(input, "input")?;
    let stems = png_stems(input)?;
    if stems.is_empty() {
        return Err(Failure::usage(format!(
            "no PNG images in {}",
            input.display()
        )));
    }

    let split_dir = out.join(split.dir_name());
    let root = RngState::new(seed);
    let mut written = 0;
    for (i, stem) in stems.iter().enumerate() {
        let path = input.join(format!("{stem}.png"));
        let (sharp, depth) = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let mut rng = root.derive(i as u64);
        match synth_dual_pixel(stem, &sharp, &cfg.synth, &mut rng) {
            Ok(sample) => {
                write_sample(&split_dir, &sample, depth)?;
                written += 1;
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return Err(Failure::usage(format!(
            "none of the {} inputs could be synthesized",
            stems.len()
        )));
    }
    info!("wrote {written} samples under {}", split_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            resume,
        } => cmd_train(config.as_deref(), data, out, *seed, resume.as_deref()),
        Command::Infer {
            ckpt,
            left,
            right,
            out,
        } => cmd_infer(ckpt, left, right, out),
        Command::Eval {
            pred,
            gt,
            allow_partial,
        } => cmd_eval(pred, gt, *allow_partial),
        Command::Synth {
            input,
            out,
            radius,
            seed,
            split,
            config,
        } => cmd_synth(
            input,
            out,
            *radius,
            *seed,
            (*split).into(),
            config.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
