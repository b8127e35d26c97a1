mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use deblur_core::blindestim::{estimate_with, EstimateResult, IterationRecord};
use deblur_core::evalprobe::{aggregate, align_kernel, error_ratio, probe_regularizers, ErrorRatioReport, ProbeReport};
use deblur_core::imgcore::io::{kernel_image, load_image, read_kernel, save_png, write_kernel};
use deblur_core::restore::{deconvolve, RestoreMethod};
use deblur_core::synth::{blur_image, motion_kernel};
use deblur_core::{DeblurError, Image, Kernel};
use log::{info, warn};
use serde::Serialize;

use settings::{RunManifest, Settings, SCHEMA_VERSION};

/// Documented process exit codes.
mod exit {
    pub const FAILURE: u8 = 1;
    pub const UNREADABLE: u8 = 2;
    pub const DEGENERATE: u8 = 3;
    pub const BAD_KERNEL: u8 = 4;
    pub const NEGATIVE_NOISE: u8 = 5;
    pub const MISMATCH: u8 = 6;
    pub const USAGE: u8 = 64;
}

#[derive(Parser, Debug)]
#[command(name = "deblur", version, about = "Blind motion-blur kernel estimation and deblurring")]
struct Cli {
    /// Settings file: `key=value` lines, or the JSON manifest of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DEBLUR_THREADS")]
    threads: Option<usize>,
    /// Print the manifest or report as JSON on stdout, and progress as JSON lines on stderr.
    #[arg(long, global = true)]
    json: bool,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the blur kernel of an image.
    Estimate(EstimateArgs),
    /// Restore an image with a known kernel, or blindly.
    Deblur(DeblurArgs),
    /// Blur a sharp image with a kernel and add Gaussian noise.
    Synth(SynthArgs),
    /// Compare the patch priors on a sharp image and box-blurred copies.
    Probe(ProbeArgs),
    /// Error ratios of blind estimates against ground-truth kernels.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    input: PathBuf,
    /// Directory receiving kernel.txt, kernel.png, latent.png and manifest.json.
    #[arg(long, short, default_value = ".")]
    out_dir: PathBuf,
    /// Kernel support in pixels; even values are rounded up.
    #[arg(long)]
    kernel_size: Option<usize>,
}

#[derive(Args, Debug)]
struct DeblurArgs {
    input: PathBuf,
    /// Kernel file to deconvolve with.
    #[arg(long, conflicts_with = "blind", required_unless_present = "blind")]
    kernel: Option<PathBuf>,
    /// Estimate the kernel first.
    #[arg(long)]
    blind: bool,
    #[arg(long, short)]
    output: PathBuf,
    /// tv_l1, hyper_laplacian or wiener.
    #[arg(long)]
    method: Option<RestoreMethod>,
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    kernel_size: Option<usize>,
    /// Write 16-bit samples.
    #[arg(long)]
    sixteen_bit: bool,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    input: PathBuf,
    /// Blurry output, written with 16-bit samples.
    #[arg(long, short)]
    output: PathBuf,
    /// Where to write the kernel that was applied.
    #[arg(long)]
    kernel_out: PathBuf,
    /// Blur with this kernel file instead of a random motion path.
    #[arg(long, conflicts_with = "motion_size")]
    kernel: Option<PathBuf>,
    /// Side of the random motion kernel.
    #[arg(long, default_value_t = 15)]
    motion_size: usize,
    /// Noise standard deviation in percent of the intensity range.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    noise: f64,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    input: PathBuf,
    /// Box blur sides, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 5])]
    blurs: Vec<usize>,
    /// Report path; stdout only when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// `SHARP,BLURRY,KERNEL[,ESTIMATE]`; without ESTIMATE the kernel is estimated blindly.
    #[arg(long = "triple", required = true, value_name = "PATHS")]
    triples: Vec<String>,
    /// Success threshold (3 for sparse back-ends, 5 for the lenient protocol).
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Compare estimates as given instead of aligning their translation first.
    #[arg(long)]
    no_align: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn root_cause(e: &DeblurError) -> &DeblurError {
    match e {
        DeblurError::Level { source, .. } => root_cause(source),
        other => other,
    }
}

impl From<DeblurError> for Failure {
    fn from(e: DeblurError) -> Self {
        let code = match root_cause(&e) {
            DeblurError::DegenerateGradient(_) | DeblurError::DegenerateData(_) => exit::DEGENERATE,
            DeblurError::Dimension(_) | DeblurError::Shape(_) => exit::MISMATCH,
            _ => exit::FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read_image(path: &Path) -> Outcome<Image> {
    load_image(path).map_err(|e| Failure::new(exit::UNREADABLE, format!("cannot read {}: {e}", path.display())))
}

fn load_kernel(path: &Path, warnings: &mut Vec<String>) -> Outcome<Kernel> {
    match read_kernel(path) {
        Ok((k, renormalized)) => {
            if renormalized {
                note(warnings, format!("{}: taps did not sum to 1 and were normalized", path.display()));
            }
            Ok(k)
        }
        Err(DeblurError::Io(e)) => Err(Failure::new(exit::UNREADABLE, format!("cannot read {}: {e}", path.display()))),
        Err(e) => Err(Failure::new(exit::BAD_KERNEL, format!("{}: {e}", path.display()))),
    }
}

fn note(warnings: &mut Vec<String>, message: String) {
    warn!("{message}");
    warnings.push(message);
}

fn emit_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("document serializes"));
}

struct Context {
    settings: Settings,
    threads: usize,
    json: bool,
    warnings: Vec<String>,
}

impl Context {
    fn set_kernel_size(&mut self, size: Option<usize>) -> Outcome<()> {
        if let Some(k) = size {
            if let Some(n) = self.settings.set("kernel_size", &k.to_string())? {
                note(&mut self.warnings, n);
            }
        }
        Ok(())
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, &self.settings, self.threads);
        m.warnings = self.warnings.clone();
        m
    }

    fn estimate(&self, y: &Image) -> Outcome<EstimateResult> {
        let json = self.json;
        let mut observer = |r: &IterationRecord, _: &Kernel| {
            if json {
                eprintln!("{}", serde_json::to_string(r).expect("record serializes"));
            } else {
                info!(
                    "level {} iter {} {}x{} kernel {} tau {:.4} mask {} bicg {} ({:.1e}) change {:.2e}",
                    r.level,
                    r.iteration,
                    r.width,
                    r.height,
                    r.kernel_size,
                    r.tau,
                    r.mask_pixels,
                    r.bicg_iterations,
                    r.bicg_residual,
                    r.change
                );
            }
        };
        Ok(estimate_with(y, &self.settings.estimation, &mut observer)?)
    }
}

fn cmd_estimate(ctx: &mut Context, args: &EstimateArgs) -> Outcome<()> {
    ctx.set_kernel_size(args.kernel_size)?;
    let y = read_image(&args.input)?;
    let t = Instant::now();
    let result = ctx.estimate(&y)?;
    let elapsed = t.elapsed().as_secs_f64();
    for w in &result.warnings {
        ctx.warnings.push(w.clone());
    }

    std::fs::create_dir_all(&args.out_dir).map_err(DeblurError::from)?;
    let mut m = ctx.manifest("estimate");
    m.input("image", &args.input);
    m.timings.insert("estimate".into(), elapsed);
    let kernel_path = args.out_dir.join("kernel.txt");
    let png_path = args.out_dir.join("kernel.png");
    let latent_path = args.out_dir.join("latent.png");
    let manifest_path = args.out_dir.join("manifest.json");
    write_kernel(&result.kernel, &kernel_path)?;
    save_png(&kernel_image(&result.kernel), &png_path, false)?;
    save_png(&result.latent, &latent_path, false)?;
    m.output("kernel", &kernel_path);
    m.output("kernel_image", &png_path);
    m.output("latent", &latent_path);
    m.output("manifest", &manifest_path);
    m.write(&manifest_path)?;
    if ctx.json {
        emit_json(&m);
    } else {
        println!(
            "kernel {0}x{0} written to {1} ({2} levels, {3:.1} s)",
            result.kernel.size(),
            kernel_path.display(),
            result.levels,
            elapsed
        );
    }
    Ok(())
}

fn cmd_deblur(ctx: &mut Context, args: &DeblurArgs) -> Outcome<()> {
    ctx.set_kernel_size(args.kernel_size)?;
    if let Some(method) = args.method {
        ctx.settings.restore.method = method;
    }
    if let Some(w) = args.weight {
        ctx.settings.restore.weight = w;
    }
    let y = read_image(&args.input)?;
    let mut timings = Vec::new();
    let kernel = match &args.kernel {
        Some(p) => load_kernel(p, &mut ctx.warnings)?,
        None => {
            let t = Instant::now();
            let result = ctx.estimate(&y)?;
            timings.push(("estimate", t.elapsed().as_secs_f64()));
            ctx.warnings.extend(result.warnings);
            result.kernel
        }
    };
    let t = Instant::now();
    let x = deconvolve(&y, &kernel, &ctx.settings.restore)?;
    timings.push(("restore", t.elapsed().as_secs_f64()));
    save_png(&x, &args.output, args.sixteen_bit)?;

    let mut m = ctx.manifest("deblur");
    m.input("image", &args.input);
    if let Some(p) = &args.kernel {
        m.input("kernel", p);
    }
    m.output("image", &args.output);
    for (k, v) in timings {
        m.timings.insert(k.into(), v);
    }
    if args.blind {
        let kp = args.output.with_extension("kernel.txt");
        write_kernel(&kernel, &kp)?;
        m.output("kernel", &kp);
    }
    if let Some(p) = &args.manifest {
        m.output("manifest", p);
        m.write(p)?;
    }
    if ctx.json {
        emit_json(&m);
    } else {
        println!("restored image written to {}", args.output.display());
    }
    Ok(())
}

fn cmd_synth(ctx: &mut Context, args: &SynthArgs) -> Outcome<()> {
    if !(args.noise >= 0.0) || !args.noise.is_finite() {
        return Err(Failure::new(
            exit::NEGATIVE_NOISE,
            format!("noise must be a non-negative percentage, got {}", args.noise),
        ));
    }
    let x = read_image(&args.input)?;
    let seed = ctx.settings.estimation.seed;
    let kernel = match &args.kernel {
        Some(p) => load_kernel(p, &mut ctx.warnings)?,
        None => motion_kernel(args.motion_size, seed)?,
    };
    let y = blur_image(&x, &kernel, args.noise, seed.wrapping_add(1))?;
    save_png(&y, &args.output, true)?;
    write_kernel(&kernel, &args.kernel_out)?;

    let mut m = ctx.manifest("synth");
    m.input("image", &args.input);
    if let Some(p) = &args.kernel {
        m.input("kernel", p);
    }
    m.output("image", &args.output);
    m.output("kernel", &args.kernel_out);
    if let Some(p) = &args.manifest {
        m.output("manifest", p);
        m.write(p)?;
    }
    if ctx.json {
        emit_json(&m);
    } else {
        println!(
            "blurred with a {0}x{0} kernel and {1}% noise: {2}",
            kernel.size(),
            args.noise,
            args.output.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ProbeDocument<'a> {
    schema_version: u32,
    image: String,
    report: &'a ProbeReport,
}

fn cmd_probe(ctx: &mut Context, args: &ProbeArgs) -> Outcome<()> {
    let x = read_image(&args.input)?.to_gray();
    let blurs: Vec<Kernel> = args
        .blurs
        .iter()
        .map(|&k| Kernel::box_blur(k))
        .collect::<deblur_core::Result<_>>()?;
    let report = probe_regularizers(&x, &blurs, &ctx.settings.estimation)?;
    let doc = ProbeDocument {
        schema_version: SCHEMA_VERSION,
        image: args.input.display().to_string(),
        report: &report,
    };
    if let Some(p) = &args.output {
        std::fs::write(p, serde_json::to_string_pretty(&doc).expect("document serializes") + "\n")
            .map_err(DeblurError::from)?;
    }
    if ctx.json {
        emit_json(&doc);
    } else {
        println!("{:>8} {:>12} {:>12}", "blur", "reg_c", "reg_s");
        for r in &report.rows {
            println!("{:>8} {:>12.6} {:>12.6}", r.label, r.reg_c, r.reg_s);
        }
        for s in &report.sets {
            println!(
                "{}: R_s covers {:.3} of all patches and {:.3} of edge patches",
                s.label, s.r_s_fraction, s.r_s_on_edges
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalEntry {
    sharp: String,
    blurry: String,
    kernel: String,
    estimate: Option<String>,
    error_ratio: f64,
}

#[derive(Serialize)]
struct EvalDocument {
    schema_version: u32,
    images: Vec<EvalEntry>,
    summary: ErrorRatioReport,
}

fn cmd_eval(ctx: &mut Context, args: &EvalArgs) -> Outcome<()> {
    let mut entries = Vec::new();
    for triple in &args.triples {
        let parts: Vec<&str> = triple.split(',').map(str::trim).collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(Failure::new(
                exit::USAGE,
                format!("--triple expects SHARP,BLURRY,KERNEL[,ESTIMATE], got '{triple}'"),
            ));
        }
        let x = read_image(Path::new(parts[0]))?;
        let y = read_image(Path::new(parts[1]))?;
        if x.dims() != y.dims() || x.channels() != y.channels() {
            return Err(Failure::new(
                exit::MISMATCH,
                format!(
                    "{} is {}x{}x{} but {} is {}x{}x{}",
                    parts[0],
                    x.width(),
                    x.height(),
                    x.channels(),
                    parts[1],
                    y.width(),
                    y.height(),
                    y.channels()
                ),
            ));
        }
        let truth = load_kernel(Path::new(parts[2]), &mut ctx.warnings)?;
        let estimate = match parts.get(3) {
            Some(p) => load_kernel(Path::new(p), &mut ctx.warnings)?,
            None => {
                let r = ctx.estimate(&y)?;
                ctx.warnings.extend(r.warnings);
                r.kernel
            }
        };
        let estimate = if args.no_align { estimate } else { align_kernel(&estimate, &truth)? };
        let xe = deconvolve(&y, &estimate, &ctx.settings.restore)?;
        let xt = deconvolve(&y, &truth, &ctx.settings.restore)?;
        let er = error_ratio(&x, &xe, &xt)?;
        entries.push(EvalEntry {
            sharp: parts[0].into(),
            blurry: parts[1].into(),
            kernel: parts[2].into(),
            estimate: parts.get(3).map(|s| s.to_string()),
            error_ratio: er,
        });
    }
    let values: Vec<f64> = entries.iter().map(|e| e.error_ratio).collect();
    let summary = aggregate(&values, args.threshold)?;
    let doc = EvalDocument {
        schema_version: SCHEMA_VERSION,
        images: entries,
        summary,
    };
    if let Some(p) = &args.output {
        std::fs::write(p, serde_json::to_string_pretty(&doc).expect("document serializes") + "\n")
            .map_err(DeblurError::from)?;
    }
    if ctx.json {
        emit_json(&doc);
    } else {
        for e in &doc.images {
            println!("{}: ER {:.4}", e.blurry, e.error_ratio);
        }
        println!(
            "success rate {:.1}% at ER <= {}, mean ER {:.4}",
            100.0 * doc.summary.success_rate,
            doc.summary.threshold,
            doc.summary.mean
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    let mut warnings = Vec::new();
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p, &mut warnings).map_err(|e| match e {
            DeblurError::Io(io) => Failure::new(exit::UNREADABLE, format!("cannot read {}: {io}", p.display())),
            other => Failure::new(exit::FAILURE, format!("{}: {other}", p.display())),
        })?,
        None => Settings::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::new(exit::USAGE, format!("--set expects KEY=VALUE, got '{kv}'")))?;
        warnings.extend(settings.set(k.trim(), v)?);
    }
    if let Some(s) = cli.seed {
        settings.estimation.seed = s;
    }
    settings.estimation.validate()?;
    settings.restore.validate()?;
    for w in &warnings {
        warn!("{w}");
    }

    let threads = cli.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
    let mut ctx = Context {
        settings,
        threads: rayon::current_num_threads(),
        json: cli.json,
        warnings,
    };
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(&mut ctx, a),
        Command::Deblur(a) => cmd_deblur(&mut ctx, a),
        Command::Synth(a) => cmd_synth(&mut ctx, a),
        Command::Probe(a) => cmd_probe(&mut ctx, a),
        Command::Eval(a) => cmd_eval(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
