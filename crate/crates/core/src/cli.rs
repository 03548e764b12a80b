//! Command-line front end: `train`, `denoise`, `eval`, `bench`, `selftest`.
//!
//! Settings merge in the order defaults, `--preset`, checkpoint, `--config`
//! file, `--set`, dedicated flags. Exit codes: 0 success, 1 usage or
//! configuration error, 2 data error, 3 numeric failure. Failures print one
//! line `error kind=<kind> exit=<code>: <message>` to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{config_err, usage_err, Error, Result};
use crate::eval::dataset::{load_dir, split_validation, NamedImage};
use crate::eval::image::Colorspace;
use crate::eval::pnm::{read_image, write_image};
use crate::eval::report::{evaluate, EvalReport};
use crate::eval::synth::corpus;
use crate::eval::tile::{denoise, tile_denoise};
use crate::model::{count_flops, window_sweep, Model, ModelConfig};
use crate::nn::Init;
use crate::tensor::{DType, Scalar};
use crate::train::run::{best_path, EpochLog};
use crate::train::{train, Checkpoint, OptimState, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "hwformer", version, about = "Heterogeneous window transformer for image denoising")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Model preset: `paper` (C=64, windows 96/48, p=6) or `toy` (C=8, windows 16/8, p=2).
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Flat `key=value` file with `model.`, `train.` and `eval.` keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set model.heads=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; 1 is the bit-reproducible mode. Falls back to HWF_THREADS.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints.
    Train(TrainArgs),
    /// Denoise one image or a directory of images with a checkpoint.
    Denoise(DenoiseArgs),
    /// Corrupt clean images, denoise them and report PSNR/SSIM.
    Eval(EvalArgs),
    /// Parameter and FLOP accounting across window and image sizes.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Seed for initialization, sampling and noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of clean PGM/PPM images.
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use this many generated textures instead of a directory.
    #[arg(long, value_name = "COUNT")]
    synthetic: Option<usize>,
    /// Side length of generated textures.
    #[arg(long, value_name = "PIXELS", default_value_t = 32)]
    synthetic_size: usize,
}

#[derive(Debug, Args)]
struct TileArgs {
    /// Tile side for tiled inference (0 or absent: whole image).
    #[arg(long, value_name = "PIXELS")]
    tile: Option<usize>,
    /// Overlap between neighbouring tiles.
    #[arg(long, value_name = "PIXELS")]
    overlap: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Patches per optimizer step.
    #[arg(long)]
    batch: Option<usize>,
    /// Base learning rate before halvings.
    #[arg(long)]
    lr: Option<f64>,
    /// Stop after this many optimizer steps.
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
    /// Resume from this checkpoint (weights, optimizer state and settings).
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    checkpoint: Option<PathBuf>,
    /// Where to write the latest checkpoint; the best one goes to `<FILE>.best`.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// Trained weights.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Noisy PGM/PPM image, or a directory of them.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Output image, or output directory when the input is a directory.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    tile: TileArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Trained weights; without it the identity (zero-weight) model of the preset is scored.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    tile: TileArgs,
    /// Report layout.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Also write the CSV report to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated window sizes for the global-block sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 6, 8, 48, 96])]
    windows: Vec<usize>,
    /// Comma-separated square image sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [96usize])]
    image: Vec<usize>,
    /// Output layout.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

/// Evaluation settings addressable as `eval.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub sigma: f64,
    pub seed: u64,
    /// 0 disables tiling.
    pub tile: usize,
    pub overlap: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            sigma: 25.0,
            seed: 0,
            tile: 0,
            overlap: 16,
        }
    }
}

impl EvalSettings {
    fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("sigma", self.sigma.to_string()),
            ("seed", self.seed.to_string()),
            ("tile", self.tile.to_string()),
            ("overlap", self.overlap.to_string()),
        ])
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || config_err!("eval.{key}: cannot parse {value:?}");
        match key {
            "sigma" => self.sigma = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "tile" => self.tile = value.parse().map_err(|_| bad())?,
            "overlap" => self.overlap = value.parse().map_err(|_| bad())?,
            _ => return Err(config_err!("unknown eval setting {key:?}")),
        }
        Ok(())
    }

    fn tiling(&self) -> Option<(usize, usize)> {
        (self.tile > 0).then_some((self.tile, self.overlap))
    }
}

/// Every setting after merging defaults, preset, checkpoint, config file and flags.
#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub threads: Option<usize>,
}


impl CliConfig {
    /// Applies one `section.key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.split_once('.') {
            Some(("model", k)) => self.model.set(k, value),
            Some(("train", k)) => self.train.set(k, value),
            Some(("eval", k)) => self.eval.set(k, value),
            _ => Err(config_err!("setting {key:?} needs a model., train. or eval. prefix")),
        }
    }

    /// Sorted `section.key=value` lines.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (section, pairs) in [
            ("eval", self.eval.to_pairs()),
            ("model", self.model.to_pairs()),
            ("train", self.train.to_pairs()),
        ] {
            out.extend(pairs.into_iter().map(|(k, v)| format!("{section}.{k}={v}")));
        }
        out
    }
}

/// Parses a config file body: `key = value` lines, `#` comments, blank lines.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err!("config line {}: expected key=value, got {raw:?}", n + 1))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(config_err!("config line {}: {k} set twice", n + 1));
        }
        out.push((k, v));
    }
    Ok(out)
}

fn parse_set(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| usage_err!("--set expects KEY=VALUE, got {s:?}"))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => 1,
        Error::Io { .. } | Error::Image { .. } | Error::Checkpoint(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the CLI on `argv` (program name first) and returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.kind().to_string();
            let detail = one_line(&e.to_string());
            let _ = writeln!(err, "error kind=usage exit=1: {msg}: {detail}");
            return 1;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "error kind={} exit={code}: {}", e.kind(), one_line(&e.to_string()));
            code
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("HWF_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| config_err!("HWF_THREADS must be a positive integer, got {v:?}")),
        Err(_) => Ok(None),
    }
}

/// Flag-level overrides keyed like the config file.
fn flag_overrides(cmd: &Command) -> Vec<(String, String)> {
    let mut v: Vec<(&str, Option<String>)> = Vec::new();
    match cmd {
        Command::Train(a) => {
            v.push(("train.sigma", a.noise.sigma.map(|x| x.to_string())));
            v.push(("train.seed", a.noise.seed.map(|x| x.to_string())));
            v.push(("train.epochs", a.epochs.map(|x| x.to_string())));
            v.push(("train.batch", a.batch.map(|x| x.to_string())));
            v.push(("train.lr", a.lr.map(|x| x.to_string())));
            v.push(("train.max_steps", a.max_steps.map(|x| x.to_string())));
        }
        Command::Eval(a) => {
            v.push(("eval.sigma", a.noise.sigma.map(|x| x.to_string())));
            v.push(("eval.seed", a.noise.seed.map(|x| x.to_string())));
            v.push(("eval.tile", a.tile.tile.map(|x| x.to_string())));
            v.push(("eval.overlap", a.tile.overlap.map(|x| x.to_string())));
        }
        Command::Denoise(a) => {
            v.push(("eval.tile", a.tile.tile.map(|x| x.to_string())));
            v.push(("eval.overlap", a.tile.overlap.map(|x| x.to_string())));
        }
        Command::Bench(_) | Command::Selftest => {}
    }
    v.into_iter().filter_map(|(k, x)| x.map(|x| (k.to_string(), x))).collect()
}

fn checkpoint_of(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Train(a) => a.checkpoint.as_deref(),
        Command::Denoise(a) => Some(&a.checkpoint),
        Command::Eval(a) => a.checkpoint.as_deref(),
        Command::Bench(_) | Command::Selftest => None,
    }
}

/// Merges every settings source; returns the config and the checkpoint, if one was named.
fn resolve(common: &Common, cmd: &Command) -> Result<(CliConfig, Option<Checkpoint>)> {
    let mut cfg = CliConfig::default();
    let preset = common.preset.as_deref();
    if let Some(name) = preset {
        cfg.model = ModelConfig::preset(name)?;
        if name == "toy" {
            cfg.train = TrainConfig::toy();
        }
    }
    let ckpt = checkpoint_of(cmd).map(Checkpoint::load).transpose()?;
    if let Some(c) = &ckpt {
        cfg.model = c.model_config()?;
        if let Some(t) = c.train_config()? {
            cfg.train = t;
        }
    }

    let file = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let sets = common.set.iter().map(|s| parse_set(s)).collect::<Result<Vec<_>>>()?;
    let flags = flag_overrides(cmd);

    for (i, (k, _)) in sets.iter().enumerate() {
        if sets[..i].iter().any(|(seen, _)| seen == k) {
            return Err(usage_err!("--set {k} given twice"));
        }
        if flags.iter().any(|(f, _)| f == k) {
            return Err(usage_err!("{k} is given both by --set and by its own flag"));
        }
    }
    let arch_change = |k: &str| k.starts_with("model.") && k != "model.precision";
    if ckpt.is_some() {
        if let Some((k, _)) = file.iter().chain(&sets).find(|(k, _)| arch_change(k)) {
            return Err(usage_err!("{k} cannot change the architecture stored in a checkpoint"));
        }
    }
    for (k, v) in file.iter().chain(&sets).chain(&flags) {
        cfg.set(k, v)?;
    }
    cfg.threads = thread_count(common.threads)?;
    if cfg.threads == Some(0) {
        return Err(config_err!("thread count must be at least 1"));
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok((cfg, ckpt))
}

fn dispatch(cli: Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32> {
    if let Command::Selftest = cli.command {
        return Ok(selftest(out));
    }
    let (cfg, ckpt) = resolve(&cli.common, &cli.command)?;
    for line in cfg.to_lines() {
        let _ = writeln!(err, "# {line}");
    }
    let mut work = || -> Result<i32> {
        match (&cli.command, cfg.model.precision) {
            (Command::Train(a), DType::F32) => train_cmd::<f32>(a, &cfg, ckpt.as_ref(), out, err),
            (Command::Train(a), DType::F64) => train_cmd::<f64>(a, &cfg, ckpt.as_ref(), out, err),
            (Command::Denoise(a), DType::F32) => denoise_cmd::<f32>(a, &cfg, ckpt.as_ref(), out),
            (Command::Denoise(a), DType::F64) => denoise_cmd::<f64>(a, &cfg, ckpt.as_ref(), out),
            (Command::Eval(a), DType::F32) => eval_cmd::<f32>(a, &cfg, ckpt.as_ref(), out, err),
            (Command::Eval(a), DType::F64) => eval_cmd::<f64>(a, &cfg, ckpt.as_ref(), out, err),
            (Command::Bench(a), _) => bench_cmd(a, &cfg, out),
            (Command::Selftest, _) => unreachable!("handled above"),
        }
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config_err!("cannot start {n} threads: {e}"))?
            .install(work),
        None => work(),
    }
}

fn colorspace_of(model: &ModelConfig) -> Result<Colorspace> {
    Colorspace::from_channels(model.in_channels)
}

fn load_images(data: &DataArgs, model: &ModelConfig, err: &mut (dyn Write + Send)) -> Result<(Vec<NamedImage>, usize)> {
    match (&data.data, data.synthetic) {
        (Some(dir), None) => {
            let (images, failed) = load_dir(dir, colorspace_of(model)?)?;
            for (path, e) in &failed {
                let _ = writeln!(err, "warning: skipping {}: {}", path.display(), one_line(&e.to_string()));
            }
            if images.is_empty() {
                return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no readable PGM/PPM images")));
            }
            Ok((images, failed.len()))
        }
        (None, Some(n)) if n > 0 => {
            if model.in_channels != 1 {
                return Err(usage_err!("generated textures are grayscale; the model expects {} channels", model.in_channels));
            }
            Ok((corpus(n, data.synthetic_size, 0), 0))
        }
        _ => Err(usage_err!("give --data DIR or --synthetic COUNT")),
    }
}

fn train_cmd<T: Scalar>(
    a: &TrainArgs,
    cfg: &CliConfig,
    ckpt: Option<&Checkpoint>,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<i32> {
    let (images, _) = load_images(&a.data, &cfg.model, err)?;
    let split = split_validation(images);
    let (mut model, mut state) = match ckpt {
        Some(c) => {
            let mut m = Model::<T>::new(cfg.model.clone(), Init::Zeros, 0)?;
            c.restore(&mut m)?;
            let s = c.optim_state(&m)?.unwrap_or_else(|| OptimState::new(&m.params));
            (m, s)
        }
        None => {
            let m = Model::<T>::new(cfg.model.clone(), Init::Standard, cfg.train.seed)?;
            let s = OptimState::new(&m.params);
            (m, s)
        }
    };
    let _ = writeln!(
        err,
        "# {} train / {} val images, {} parameters",
        split.train.len(),
        split.val.len(),
        model.count_params()
    );
    writeln!(out, "{}", EpochLog::HEADER).map_err(|e| Error::io("<stdout>", e))?;
    let outcome = train(&mut model, &mut state, &cfg.train, &split, Some(&a.out), |e| {
        let _ = writeln!(out, "{e}");
    })?;
    if outcome.log.is_empty() {
        Checkpoint::from_model(&model, Some(&state), Some(&cfg.train)).save(&a.out)?;
    }
    let _ = writeln!(
        err,
        "# steps={} probe_loss={:.6e}->{:.6e} val_psnr_noisy={:.4} val_psnr_best={:.4} best_epoch={} best={}",
        outcome.steps,
        outcome.initial_loss,
        outcome.final_loss,
        outcome.noisy_val_psnr,
        outcome.best_val_psnr,
        outcome.best_epoch,
        best_path(&a.out).display()
    );
    Ok(0)
}

fn denoise_one<T: Scalar>(model: &Model<T>, cfg: &CliConfig, input: &Path, output: &Path) -> Result<()> {
    let img = read_image(input)?;
    let want = colorspace_of(&model.config)?;
    if img.colorspace() != want {
        return Err(usage_err!(
            "{} is {:?} but the checkpoint expects {:?}",
            input.display(),
            img.colorspace(),
            want
        ));
    }
    let clean = match cfg.eval.tiling() {
        Some((t, o)) => tile_denoise(model, &img, t, o)?,
        None => denoise(model, &img)?,
    };
    write_image(&clean.to_u8(), output)
}

fn denoise_cmd<T: Scalar>(a: &DenoiseArgs, cfg: &CliConfig, ckpt: Option<&Checkpoint>, out: &mut (dyn Write + Send)) -> Result<i32> {
    let mut model = Model::<T>::new(cfg.model.clone(), Init::Zeros, 0)?;
    ckpt.expect("denoise requires a checkpoint").restore(&mut model)?;
    if a.input.is_dir() {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        let mut inputs: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm" | "pnm")))
            .collect();
        inputs.sort();
        for input in inputs {
            let target = a.out.join(input.file_name().expect("listed files have names"));
            denoise_one(&model, cfg, &input, &target)?;
            let _ = writeln!(out, "{}", target.display());
        }
    } else {
        denoise_one(&model, cfg, &a.input, &a.out)?;
        let _ = writeln!(out, "{}", a.out.display());
    }
    Ok(0)
}

fn eval_cmd<T: Scalar>(
    a: &EvalArgs,
    cfg: &CliConfig,
    ckpt: Option<&Checkpoint>,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<i32> {
    let mut model = Model::<T>::new(cfg.model.clone(), Init::Zeros, 0)?;
    let name = match (ckpt, &a.checkpoint) {
        (Some(c), Some(path)) => {
            c.restore(&mut model)?;
            path.display().to_string()
        }
        _ => "identity (zero weights)".to_string(),
    };
    let (images, skipped) = load_images(&a.data, &cfg.model, err)?;
    let rows = evaluate(&model, &images, cfg.eval.sigma, cfg.eval.seed, cfg.eval.tiling())?;
    let report = EvalReport {
        model: name,
        rows,
        skipped,
    };
    let text = match a.format {
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))?;
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(0)
}

fn bench_cmd(a: &BenchArgs, cfg: &CliConfig, out: &mut (dyn Write + Send)) -> Result<i32> {
    if a.windows.iter().any(|&w| w < 2) || a.image.contains(&0) {
        return Err(config_err!("windows must be at least 2 and image sizes positive"));
    }
    let params = Model::<f32>::zeros(cfg.model.clone())?.count_params();
    let mut text = String::new();
    let csv = a.format == Format::Csv;
    use std::fmt::Write as _;
    if csv {
        text.push_str(
            "kind,image,window,patch,windows,tokens,dim,conv_proj_params,fcl_proj_params,attention_flops,block_flops\n",
        );
    } else {
        text.push_str("# global-block window sweep (four projections, biases included)\n");
        let _ = writeln!(
            text,
            "{:>6} {:>6} {:>5} {:>7} {:>6} {:>6} {:>12} {:>14} {:>16} {:>16}",
            "image", "window", "patch", "windows", "tokens", "dim", "conv params", "fcl params", "attention FLOPs", "block FLOPs"
        );
    }
    for &image in &a.image {
        for r in window_sweep(&cfg.model, image, &a.windows) {
            if csv {
                let _ = writeln!(
                    text,
                    "sweep,{image},{},{},{},{},{},{},{},{},{}",
                    r.window,
                    r.patch,
                    r.windows,
                    r.tokens,
                    r.dim,
                    r.conv_projection_params,
                    r.fcl_projection_params,
                    r.attention_flops,
                    r.block_flops
                );
            } else {
                let _ = writeln!(
                    text,
                    "{image:>6} {:>6} {:>5} {:>7} {:>6} {:>6} {:>12} {:>14} {:>16} {:>16}",
                    r.window,
                    r.patch,
                    r.windows,
                    r.tokens,
                    r.dim,
                    r.conv_projection_params,
                    r.fcl_projection_params,
                    r.attention_flops,
                    r.block_flops
                );
            }
        }
    }
    if csv {
        text.push_str("kind,image,params,head,gte,tde,tail,attention,total\n");
    } else {
        let _ = writeln!(text, "# whole model: {params} parameters");
        let _ = writeln!(
            text,
            "{:>6} {:>16} {:>16} {:>16} {:>14} {:>16} {:>16}",
            "image", "head", "gte", "tde", "tail", "attention", "total"
        );
    }
    for &image in &a.image {
        let f = count_flops(&cfg.model, image, image);
        if csv {
            let _ = writeln!(
                text,
                "model,{image},{params},{},{},{},{},{},{}",
                f.head,
                f.gte,
                f.tde,
                f.tail,
                f.attention,
                f.total()
            );
        } else {
            let _ = writeln!(
                text,
                "{image:>6} {:>16} {:>16} {:>16} {:>14} {:>16} {:>16}",
                f.head,
                f.gte,
                f.tde,
                f.tail,
                f.attention,
                f.total()
            );
        }
    }
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))?;
    Ok(0)
}

fn selftest(out: &mut (dyn Write + Send)) -> i32 {
    let checks = crate::selftest::run();
    for c in &checks {
        let _ = writeln!(out, "{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(out, "{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        0
    } else {
        3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("hwformer").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn config_text_parses_comments_and_rejects_duplicates() {
        let pairs = parse_config_text("# c\nmodel.heads = 2 # trailing\n\ntrain.lr=0.001\n").unwrap();
        assert_eq!(pairs, vec![("model.heads".into(), "2".into()), ("train.lr".into(), "0.001".into())]);
        assert!(parse_config_text("a=1\na=2").is_err());
        assert!(parse_config_text("no equals").is_err());
    }

    #[test]
    fn effective_config_round_trips_through_set() {
        let mut c = CliConfig::default();
        c.model = ModelConfig::toy();
        c.eval.tile = 64;
        let mut back = CliConfig::default();
        for line in c.to_lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, err) = run_args(&["bench", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error kind=usage exit=1:"), "{err}");
        assert_eq!(err.lines().count(), 1);
    }

    #[test]
    fn conflicting_settings_are_rejected() {
        let (code, _, err) = run_args(&["eval", "--synthetic", "2", "--sigma", "15", "--set", "eval.sigma=25"]);
        assert_eq!(code, 1, "{err}");
        let (code, _, _) = run_args(&["bench", "--set", "model.heads=2", "--set", "model.heads=4"]);
        assert_eq!(code, 1);
        let (code, _, err) = run_args(&["bench", "--preset", "nope"]);
        assert_eq!(code, 1);
        assert!(err.contains("kind=config"), "{err}");
    }

    #[test]
    fn help_lists_every_flag() {
        let (code, out, _) = run_args(&["train", "--help"]);
        assert_eq!(code, 0);
        for flag in ["--preset", "--config", "--sigma", "--seed", "--epochs", "--batch", "--lr", "--checkpoint", "--out", "--threads"] {
            assert!(out.contains(flag), "missing {flag}");
        }
        let (_, out, _) = run_args(&["bench", "--help"]);
        for flag in ["--windows", "--image", "--format"] {
            assert!(out.contains(flag), "missing {flag}");
        }
    }

    #[test]
    fn bench_prints_one_row_per_window() {
        let (code, out, err) = run_args(&["bench", "--windows", "4,6,8,48,96", "--image", "96", "--format", "csv"]);
        assert_eq!(code, 0, "{err}");
        let sweep: Vec<&str> = out.lines().filter(|l| l.starts_with("sweep,")).collect();
        assert_eq!(sweep.len(), 5);
        assert!(err.contains("# model.channels=64"));
    }

    #[test]
    fn missing_data_dir_is_a_data_error() {
        let (code, _, err) = run_args(&["eval", "--preset", "toy", "--data", "/nonexistent/hwformer"]);
        assert_eq!(code, 2, "{err}");
    }
}
