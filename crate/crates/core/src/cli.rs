//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data or model error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    compare_reports, evaluate, pixel_error_histogram, trend_by_size, write_histogram_csv, ErrorReport, ModelRasterizer,
};
use crate::dataset::{load_dataset, validate_dataset, write_pgm, Dataset};
use crate::models::{Decoding, GlyphModel, Model};
use crate::renderer::{interpolate_weights, render, render_cascade, write_bitmap, Interpolation, RenderRequest};
use crate::sampling::build_mask;
use crate::trainer::{resume, train, write_history_csv, Approach, EpochRecord, ResumeOutcome, TrainJob};
use crate::Error;

/// Environment variable naming the default dataset root.
pub const DATASET_ENV: &str = "GLYPHNET_DATASET";

#[derive(Debug, Parser)]
#[command(name = "glyphnet", version, about = "Train and render per-glyph neural rasterizers")]
struct Cli {
    /// Print progress details to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Write the sampling mask for a source size inside a target grid.
    Mask {
        #[arg(long)]
        source: usize,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a job file, or every job file in a directory.
    Train(TrainArgs),
    /// Continue training a checkpoint.
    Resume(ResumeArgs),
    /// Render one bitmap.
    Render(RenderArgs),
    /// Render a range of sizes and stack them into a sheet.
    Cascade(CascadeArgs),
    /// Render latent blends between two weights.
    Interpolate(InterpolateArgs),
    /// Measure a checkpoint against ground truth.
    Eval(EvalArgs),
    /// Compare two evaluation reports.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Check a dataset for gaps, bad intensities, shapes and point-size order.
    Validate {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, conflicts_with = "jobs_dir", required_unless_present = "jobs_dir")]
    job: Option<PathBuf>,
    #[arg(long)]
    jobs_dir: Option<PathBuf>,
    /// Parallel jobs when training a directory.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Required unless the job file sets one.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Checkpoint path; a directory of jobs writes `<job name>.ckpt` next to each job.
    #[arg(long, conflicts_with = "jobs_dir")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ResumeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Final epoch to train to; defaults to the stored job's count.
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Where to write the result; defaults to overwriting `--ckpt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    weight: Option<String>,
    /// Expected checkpoint kind.
    #[arg(long)]
    approach: Option<String>,
    /// `WEIGHT_A,WEIGHT_B,ALPHA`
    #[arg(long, conflicts_with = "weight")]
    interpolate: Option<String>,
    #[arg(long, default_value = "snapped")]
    decoding: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CascadeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// `LO-HI` or a comma list; defaults to the trained range.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    weight: Option<String>,
    #[arg(long, default_value = "snapped")]
    decoding: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    weight_a: String,
    #[arg(long)]
    weight_b: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alpha: Vec<f64>,
    #[arg(long, default_value = "snapped")]
    decoding: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long, default_value = "snapped")]
    decoding: String,
    /// Also write a histogram of individual pixel errors.
    #[arg(long)]
    per_pixel: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report directory written by `eval`.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

/// A failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Dataset {
            command: DatasetCommand::Validate { dataset },
        } => {
            let ds = load_dataset(&dataset_root(dataset)?)?;
            let violations = validate_dataset(&ds);
            for v in &violations {
                println!("{v}");
            }
            if violations.is_empty() {
                println!("ok: {} bitmaps", ds.len());
                Ok(())
            } else {
                Err(Failure {
                    code: 2,
                    message: format!("{} violations", violations.len()),
                })
            }
        }
        Command::Mask { source, target, out } => {
            if source == 0 || source > target {
                return Err(usage(format!("need 1 <= source <= target, got {source} and {target}")));
            }
            let mask = build_mask(source, target)?;
            write_pgm(&mask.to_tensor(), &out)?;
            if verbose {
                eprintln!("{} of {} pixels set", mask.ones(), target * target);
            }
            Ok(())
        }
        Command::Train(a) => cmd_train(a),
        Command::Resume(a) => cmd_resume(a),
        Command::Render(a) => cmd_render(a),
        Command::Cascade(a) => cmd_cascade(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn dataset_root(flag: Option<PathBuf>) -> CliResult<PathBuf> {
    flag.or_else(|| std::env::var_os(DATASET_ENV).map(PathBuf::from))
        .ok_or_else(|| usage(format!("no dataset given; pass --dataset or set {DATASET_ENV}")))
}

fn parse_decoding(s: &str) -> CliResult<Decoding> {
    s.parse().map_err(|e: Error| usage(e.to_string()))
}

/// `20-33`, `20,24,28` or a single size.
fn parse_sizes(s: &str) -> CliResult<Vec<usize>> {
    let bad = || usage(format!("bad size list {s:?}"));
    if let Some((lo, hi)) = s.split_once('-') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

/// Reads a job file, filling in the seed from the flag when given.
fn read_job(path: &Path, seed: Option<u64>) -> CliResult<TrainJob> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::from(e)))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| usage(format!("{}: job must be a JSON object", path.display())))?;
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    }
    if !obj.contains_key("seed") {
        return Err(usage(format!(
            "{}: no seed; pass --seed or set it in the job",
            path.display()
        )));
    }
    serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn print_record(prefix: &str, r: &EpochRecord) {
    println!("{prefix}epoch={} loss={} lr={}", r.epoch, r.mean_loss, r.lr);
}

fn history_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn run_job(job: &TrainJob, ds: &Dataset, prefix: &str) -> CliResult<()> {
    let out = job.output.clone().expect("output is set before training");
    let outcome = train(job, ds, &mut |r| print_record(prefix, r))?;
    write_history_csv(&outcome.history, &history_path(&out))?;
    if outcome.skipped_steps > 0 {
        eprintln!(
            "warning: {} optimizer steps skipped on non-finite gradients",
            outcome.skipped_steps
        );
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut jobs: Vec<(String, TrainJob)> = Vec::new();
    if let Some(path) = &a.job {
        let mut job = read_job(path, a.seed)?;
        if let Some(out) = &a.out {
            job.output = Some(out.clone());
        }
        if job.output.is_none() {
            return Err(usage("no output path; pass --out or set output in the job"));
        }
        jobs.push((String::new(), job));
    } else if let Some(dir) = &a.jobs_dir {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Failure::from(Error::from(e)))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(usage(format!("no .json jobs in {}", dir.display())));
        }
        for p in paths {
            let mut job = read_job(&p, a.seed)?;
            if job.output.is_none() {
                job.output = Some(p.with_extension("ckpt"));
            }
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            jobs.push((format!("job={name} "), job));
        }
    }
    let default_root = a.dataset.clone();
    let mut loaded = Vec::with_capacity(jobs.len());
    for (prefix, mut job) in jobs {
        if let Some(e) = a.epochs {
            job.epochs = Some(e);
        }
        job.validate().map_err(|e| usage(e.to_string()))?;
        let root = match default_root.clone().or_else(|| job.dataset.clone()) {
            Some(r) => r,
            None => dataset_root(None)?,
        };
        loaded.push((prefix, job, root));
    }
    if a.workers <= 1 || loaded.len() == 1 {
        for (prefix, job, root) in &loaded {
            let ds = load_dataset(root)?;
            run_job(job, &ds, prefix)?;
        }
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| usage(e.to_string()))?;
    use rayon::prelude::*;
    let results: Vec<CliResult<()>> = pool.install(|| {
        loaded
            .par_iter()
            .map(|(prefix, job, root)| {
                let ds = load_dataset(root)?;
                run_job(job, &ds, prefix)
            })
            .collect()
    });
    results.into_iter().collect()
}

fn cmd_resume(a: ResumeArgs) -> CliResult<()> {
    let model = GlyphModel::load(&a.ckpt)?;
    let mut job = model.meta.job.clone();
    if let Some(e) = a.epochs {
        job.epochs = Some(e);
    }
    job.output = Some(a.out.clone().unwrap_or_else(|| a.ckpt.clone()));
    let root = match a.dataset.clone().or_else(|| job.dataset.clone()) {
        Some(r) => r,
        None => dataset_root(None)?,
    };
    let ds = load_dataset(&root)?;
    match resume(&job, model, &ds, &mut |r| print_record("", r))? {
        ResumeOutcome::AlreadyComplete { epochs_completed, .. } => {
            eprintln!(
                "warning: checkpoint already has {epochs_completed} epochs, job ends at {}; nothing to do",
                job.epochs()
            );
        }
        ResumeOutcome::Trained(outcome) => {
            let out = job.output.as_ref().expect("set above");
            let path = history_path(out);
            let mut history = Vec::new();
            if path.exists() {
                let mut r = csv::Reader::from_path(&path).map_err(|e| Failure::from(Error::from(e)))?;
                for rec in r.deserialize::<EpochRecord>() {
                    let rec = rec.map_err(|e| Failure::from(Error::from(e)))?;
                    if rec.epoch < outcome.history.first().map_or(u32::MAX, |h| h.epoch) {
                        history.push(rec);
                    }
                }
            }
            history.extend(outcome.history);
            write_history_csv(&history, &path)?;
        }
    }
    Ok(())
}

fn check_approach(model: &GlyphModel, approach: Option<&str>) -> CliResult<()> {
    if let Some(a) = approach {
        let want: Approach = a.parse().map_err(|e: Error| usage(e.to_string()))?;
        let have = match model.model {
            Model::Masked(_) => Approach::Masked,
            Model::Implicit(_) => Approach::Implicit,
        };
        if want != have {
            return Err(Failure::from(Error::InvalidArgument(format!(
                "checkpoint is a {} model",
                model.model.kind()
            ))));
        }
    }
    Ok(())
}

fn parse_interpolation(s: &str) -> CliResult<Interpolation> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, alpha] = parts[..] else {
        return Err(usage(format!(
            "--interpolate expects WEIGHT_A,WEIGHT_B,ALPHA, got {s:?}"
        )));
    };
    let alpha: f64 = alpha.parse().map_err(|_| usage(format!("bad alpha {alpha:?}")))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(Interpolation {
        weight_a: a.to_string(),
        weight_b: b.to_string(),
        alpha,
    })
}

fn cmd_render(a: RenderArgs) -> CliResult<()> {
    if a.approach.as_deref() == Some("masked") && a.interpolate.is_some() {
        return Err(usage("--interpolate cannot be used with --approach masked"));
    }
    let decoding = parse_decoding(&a.decoding)?;
    let interpolation = a.interpolate.as_deref().map(parse_interpolation).transpose()?;
    let model = GlyphModel::load(&a.ckpt)?;
    check_approach(&model, a.approach.as_deref())?;
    let alpha = interpolation.as_ref().map(|i| i.alpha);
    let bm = render(
        &model,
        &RenderRequest {
            size: a.size,
            weight: a.weight,
            interpolation,
            decoding,
        },
    )?;
    let path = write_bitmap(&bm, &a.out_dir, alpha)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_cascade(a: CascadeArgs) -> CliResult<()> {
    let decoding = parse_decoding(&a.decoding)?;
    let model = GlyphModel::load(&a.ckpt)?;
    let sizes = match &a.sizes {
        Some(s) => parse_sizes(s)?,
        None => model.size_range().collect(),
    };
    let cascade = render_cascade(&model, &sizes, a.weight.as_deref(), decoding)?;
    for bm in &cascade.bitmaps {
        write_bitmap(bm, &a.out_dir, None)?;
    }
    let sheet = a.out_dir.join("cascade.pgm");
    write_pgm(&cascade.sheet, &sheet)?;
    println!("{}", sheet.display());
    Ok(())
}

fn cmd_interpolate(a: InterpolateArgs) -> CliResult<()> {
    let decoding = parse_decoding(&a.decoding)?;
    if let Some(bad) = a.alpha.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(usage(format!("alpha {bad} outside [0, 1]")));
    }
    let model = GlyphModel::load(&a.ckpt)?;
    let mut coverages = Vec::with_capacity(a.alpha.len());
    for &alpha in &a.alpha {
        let bm = interpolate_weights(&model, a.size, &a.weight_a, &a.weight_b, alpha, decoding)?;
        write_bitmap(&bm, &a.out_dir, Some(alpha))?;
        let c = bm.coverage();
        println!("alpha={alpha} coverage={c}");
        coverages.push(c);
    }
    let up = coverages.windows(2).all(|w| w[0] <= w[1]);
    let down = coverages.windows(2).all(|w| w[0] >= w[1]);
    println!("monotone={}", up || down);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let decoding = parse_decoding(&a.decoding)?;
    let model = GlyphModel::load(&a.ckpt)?;
    let root = match a.dataset.clone().or_else(|| model.meta.job.dataset.clone()) {
        Some(r) => r,
        None => dataset_root(None)?,
    };
    let ds = load_dataset(&root)?;
    let sizes = match &a.sizes {
        Some(s) => parse_sizes(s)?,
        None => model.size_range().collect(),
    };
    let weights: Vec<String> = model.meta.weights.iter().map(|w| w.id.clone()).collect();
    let mut truth = Vec::new();
    for s in sizes {
        truth.extend(ds.select(&model.meta.font, &weights, model.meta.glyph, s..=s)?);
    }
    let r = ModelRasterizer {
        model: &model,
        decoding,
    };
    let report = evaluate(&r, &truth)?;
    report.write_csv(&a.out_dir)?;
    if a.per_pixel {
        let h = pixel_error_histogram(&r, &truth)?;
        write_histogram_csv(&a.out_dir.join("hist_pixels.csv"), &h, None)?;
    }
    println!("mean_error={}", report.mean_error());
    if let Ok(t) = trend_by_size(&report) {
        println!("size_trend={t}");
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let ra = ErrorReport::read_csv(&a.a)?;
    let rb = ErrorReport::read_csv(&a.b)?;
    let c = compare_reports(&ra, &rb)?;
    c.write_csv(&a.out_dir)?;
    println!("geometric_mean_ratio={}", c.geometric_mean_ratio);
    Ok(())
}
