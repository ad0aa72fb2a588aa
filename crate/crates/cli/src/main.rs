//! `cascn`: synthesize data, train, evaluate, predict, run the ablation
//! sweep and self-verify.
//!
//! Exit status is 0 on success, 2 for usage, configuration and input-data
//! errors, and 3 for runtime failures such as a diverged loss or a damaged
//! checkpoint.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cascn::config::RunConfig;
use cascn::data::io::read_rgb;
use cascn::data::resize::{resize_bilinear, resize_nearest};
use cascn::data::{load_dataset, save_dataset, synth_dataset, write_mask_png, Sample};
use cascn::metrics::THRESHOLD;
use cascn::model::{CascnModel, Scale};
use cascn::train::{evaluate, Trainer};
use cascn::{par, pipeline, verify, Error};
use clap::{Parser, Subcommand, ValueEnum};

/// Caps the worker pool.
const THREADS_ENV: &str = "CASCN_THREADS";
/// Test fixture: `conv_backward_sign` flips the sign of the convolution input
/// gradient so `verify` can be seen to fail.
const FAULT_ENV: &str = "CASCN_INJECT_FAULT";

#[derive(Parser)]
#[command(name = "cascn", version, about = "Skin lesion segmentation with CASCN")]
struct Cli {
    /// Run configuration (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root with images/ and masks/.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory or file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seeds weights, split and augmentation; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Defaults the config starts from.
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to --out.
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// HxW; defaults to the configured input size.
        #[arg(long)]
        size: Option<String>,
    },
    /// Train on --data, writing logs, checkpoints and the test report to --out.
    Train {
        /// Continue from --out/last.state.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on every sample under --data; CSV on stdout.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Segment one image into a 0/255 PNG at --out.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Train and test every ablation variant; CSV on stdout and in --out.
    Ablate,
    /// Run the self-verification suite.
    Verify,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(Error::Config { .. } | Error::Data(_) | Error::Image { .. }) => 2,
            Failure::Run(_) => 3,
        }
    }
}

type Outcome = Result<(), Failure>;

fn need<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref().ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn run_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let scale = match cli.scale {
        ScaleArg::Paper => Scale::Paper,
        ScaleArg::Desk => Scale::Desk,
    };
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p, scale)?,
        None => RunConfig::for_scale(scale),
    };
    if let Some(seed) = cli.seed {
        c.set_seed(seed);
    }
    Ok(c)
}

fn load_data(cli: &Cli) -> Result<Vec<Sample>, Failure> {
    let root = need(&cli.data, "data")?;
    if !root.is_dir() {
        return Err(Failure::Usage(format!("data root {} does not exist", root.display())));
    }
    Ok(load_dataset(root)?)
}

fn synth(cli: &Cli, count: usize, size: Option<&str>) -> Outcome {
    let out = need(&cli.out, "out")?;
    let c = run_config(cli)?;
    let size = match size {
        Some(s) => {
            let mut probe = c.model.clone();
            probe.set("input_size", s)?;
            probe.input_size
        }
        None => c.model.input_size,
    };
    let samples = synth_dataset(count, size, c.model.seed)?;
    save_dataset(out, &samples)?;
    eprintln!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn train(cli: &Cli, resume: bool) -> Outcome {
    let c = run_config(cli)?;
    let out = need(&cli.out, "out")?;
    let samples = load_data(cli)?;
    if resume {
        let mut trainer = Trainer::resume(&out.join("last.state"))?;
        let data = pipeline::prepare(&samples, trainer.model.config().input_size);
        let parts = cascn::data::split(&data, &c.split)?;
        trainer.fit(&parts.train, &parts.val, &c.train, &c.augmentation, Some(out))?;
        let report = evaluate(&trainer.model, &parts.test)?;
        std::fs::write(out.join("report.csv"), report.to_csv())?;
        trainer.model.save(&out.join("final.ckpt"))?;
        print!("{}", report.to_csv());
        return Ok(());
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("run.cfg"), c.to_text())?;
    let outcome = pipeline::run(&c, &samples, Some(out))?;
    print!("{}", outcome.test.to_csv());
    Ok(())
}

fn eval(cli: &Cli, checkpoint: &Path) -> Outcome {
    let model = CascnModel::load(checkpoint)?;
    let samples = load_data(cli)?;
    let data = pipeline::prepare(&samples, model.config().input_size);
    print!("{}", evaluate(&model, &data)?.to_csv());
    Ok(())
}

fn predict(cli: &Cli, checkpoint: &Path, image: &Path) -> Outcome {
    let out = need(&cli.out, "out")?;
    let (h, w, rgb) = read_rgb(image)?;
    let model = CascnModel::load(checkpoint)?;
    let size = model.config().input_size;
    let resized = resize_bilinear(&rgb, (h, w), 3, size);
    let sample = Sample::new("input", size.0, size.1, resized, vec![0; size.0 * size.1])?;
    let probs = model.predict(&sample.image_tensor())?;
    let mask: Vec<u8> = probs.data().iter().map(|&p| u8::from(p >= THRESHOLD)).collect();
    write_mask_png(out, &resize_nearest(&mask, size, (h, w)), h, w)?;
    Ok(())
}

fn ablate(cli: &Cli) -> Outcome {
    let c = run_config(cli)?;
    let samples = load_data(cli)?;
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
    }
    let table = pipeline::ablate(&c, &samples, cli.out.as_deref())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn self_verify() -> Outcome {
    match std::env::var(FAULT_ENV).as_deref() {
        Ok("conv_backward_sign") => cascn::ops::conv::inject_backward_sign_fault(true),
        Ok(other) => return Err(Failure::Usage(format!("{FAULT_ENV}: unknown fault {other:?}"))),
        Err(_) => {}
    }
    let results = verify::run_suite(|r| println!("{}", r.line()));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!("{} checks, {} failed", results.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(Error::Contract(format!("failed checks: {}", failed.join(", ")))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                par::init_threads(n);
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    par::force_sequential(cli.deterministic);
    let result = match &cli.command {
        Command::Synth { count, size } => synth(&cli, *count, size.as_deref()),
        Command::Train { resume } => train(&cli, *resume),
        Command::Eval { checkpoint } => eval(&cli, checkpoint),
        Command::Predict { checkpoint, image } => predict(&cli, checkpoint, image),
        Command::Ablate => ablate(&cli),
        Command::Verify => self_verify(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Run(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
