use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use obval::conflation::{self, SearchParams};
use obval::descriptors::{dump, DescriptorParams};
use obval::evaluation::{self, metrics, plot, roc, ConfusionCounts};
use obval::pipeline;
use obval::projection::sample_segments;
use obval::scene::Scene;
use obval::svm::{KernelSpec, SvmModel, TrainParams};
use obval::synthgen::{self, ErrorInjection, LabelBudget, SceneRecipe};

/// Validate and correct road vectors against oblique aerial images.
#[derive(Parser)]
#[command(name = "obval", version)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene and label training samples.
    Synth(SynthArgs),
    /// Write raw descriptors for road samples or a labeled sample file.
    Extract(ExtractArgs),
    /// Train a classifier from descriptor dumps.
    Train(TrainArgs),
    /// Write decision values for a labeled descriptor dump.
    Score(ScoreArgs),
    /// Classify every road segment of a scene against its image.
    Validate(ValidateArgs),
    /// Search for the true road around inconsistent segments.
    Conflate(ConflateArgs),
    /// ROC curves and operating-point metrics from score files.
    Roc(RocArgs),
    /// Repeated train-and-test over random splits of labeled dumps.
    Splits(SplitsArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "OBVAL_OUT_DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DescriptorFlags {
    /// Pre-smoothing sigma in pixels.
    #[arg(long = "sigma-s", default_value_t = 2.8)]
    sigma_s: f64,
    /// Patch side in pixels.
    #[arg(long = "patch", default_value_t = 24)]
    patch: usize,
}

impl DescriptorFlags {
    fn params(&self) -> Result<DescriptorParams> {
        let p = DescriptorParams {
            sigma_s: self.sigma_s,
            patch_size: self.patch,
            ..DescriptorParams::default()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Scene recipe (JSON).
    #[arg(long)]
    recipe: PathBuf,
    /// Error injection (JSON), applied in order to the data scene.
    #[arg(long = "inject")]
    injections: Vec<PathBuf>,
    /// Overrides the recipe's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    positives: usize,
    #[arg(long, default_value_t = 200)]
    negatives: usize,
    /// Sampling interval along roads in pixels.
    #[arg(long, default_value_t = 12.0)]
    spacing: f64,
    #[command(flatten)]
    descriptor: DescriptorFlags,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Labeled samples; when absent the scene's roads are sampled unlabeled.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value_t = 12.0)]
    spacing: f64,
    #[command(flatten)]
    descriptor: DescriptorFlags,
    /// Output dump file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    RbfGaussian,
    RbfExponential,
    RbfIsotropic,
    Linear,
    Polynomial,
    Sigmoid,
}

#[derive(Args)]
struct TrainArgs {
    /// Descriptor dumps with labeled rows.
    #[arg(long = "dump", required = true)]
    dumps: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitsArgs {
    /// Descriptor dumps with labeled rows.
    #[arg(long = "dump", required = true)]
    dumps: Vec<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Rows held out per class in each split.
    #[arg(long = "test-per-class", default_value_t = 2500)]
    test_per_class: usize,
    #[arg(long, default_value_t = 80)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, value_enum, default_value = "rbf-gaussian")]
    kernel: KernelKind,
    /// RBF width.
    #[arg(long, default_value_t = 0.8)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Box constraint on the dual multipliers.
    #[arg(long = "box-c", default_value_t = 1.0)]
    box_c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Descriptor settings the dumps were extracted with.
    #[command(flatten)]
    descriptor: DescriptorFlags,
}

impl ModelFlags {
    fn kernel(&self) -> KernelSpec {
        match self.kernel {
            KernelKind::RbfGaussian => KernelSpec::RbfGaussian { sigma: self.sigma },
            KernelKind::RbfExponential => KernelSpec::RbfExponential { sigma: self.sigma },
            KernelKind::RbfIsotropic => KernelSpec::RbfIsotropic { sigma: self.sigma },
            KernelKind::Linear => KernelSpec::Linear,
            KernelKind::Polynomial => KernelSpec::Polynomial { degree: self.degree },
            KernelKind::Sigmoid => KernelSpec::Sigmoid {
                scale: self.scale,
                offset: self.offset,
            },
        }
    }

    fn train_params(&self) -> TrainParams {
        TrainParams {
            box_c: self.box_c,
            tol: self.tol,
            ..TrainParams::with_kernel(self.kernel())
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dump: PathBuf,
    /// Output score file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 12.0)]
    spacing: f64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ConflateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 12.0)]
    spacing: f64,
    /// Search distance on each side of a segment in pixels.
    #[arg(long = "half-length", default_value_t = 100.0)]
    half_length: f64,
    /// Search step in pixels.
    #[arg(long, default_value_t = 4.0)]
    step: f64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct RocArgs {
    /// Score files (`score,truth` rows).
    #[arg(long = "scores", required = true)]
    scores: Vec<PathBuf>,
    /// Operating-point threshold for the metrics table.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[command(flatten)]
    out: OutDir,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_image(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_rgb8())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut recipe = SceneRecipe::load(&a.recipe)?;
    if let Some(seed) = a.seed {
        recipe.seed = seed;
    }
    let rendered = synthgen::render(&recipe)?;
    let mut data = rendered.scene.clone();
    for path in &a.injections {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let inj: ErrorInjection =
            serde_json::from_str(&text).with_context(|| format!("parsing injection {}", path.display()))?;
        data = synthgen::inject(&data, &inj)?;
    }
    let budget = LabelBudget {
        positives: a.positives,
        negatives: a.negatives,
        spacing_px: a.spacing,
        seed: recipe.seed,
    };
    let samples = synthgen::label_samples(&rendered, &data, &a.descriptor.params()?, &budget)?;
    let dir = &a.out.out;
    create_dir(dir)?;
    rendered.image.save(dir.join("image.png"))?;
    rendered.class_image().save(dir.join("classes.png"))?;
    rendered.scene.save(dir.join("truth_scene.json"))?;
    data.save(dir.join("scene.json"))?;
    synthgen::write_samples(dir.join("samples.csv"), &samples)?;
    println!(
        "rendered {}x{} image, {} segments, {} buildings, {} samples",
        rendered.image.width(),
        rendered.image.height(),
        data.roads.segments.len(),
        rendered.scene.buildings.len(),
        samples.len()
    );
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let scene = Scene::load(&a.scene)?;
    let image = load_image(&a.image)?;
    let samples = match &a.samples {
        Some(p) => synthgen::read_samples(p)?,
        None => sample_segments(&scene, a.spacing).into_iter().filter(|s| s.visible).collect(),
    };
    let rows = pipeline::extract_rows(&image, &samples, a.descriptor.params()?)?;
    dump::write(&a.out, &rows)?;
    println!("{} of {} samples described", rows.len(), samples.len());
    Ok(())
}

fn read_dumps(paths: &[PathBuf]) -> Result<Vec<dump::DumpRow>> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(dump::read(p)?);
    }
    Ok(rows)
}

fn train(a: &TrainArgs) -> Result<()> {
    let rows = read_dumps(&a.dumps)?;
    let model = pipeline::train_from_rows(&rows, a.model.descriptor.params()?, &a.model.train_params())?;
    model.save(&a.out)?;
    println!(
        "{} support vectors of {} labeled rows, {} iterations",
        model.support_count(),
        rows.iter().filter(|r| r.label != 0).count(),
        model.iterations
    );
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let model = SvmModel::load(&a.model)?;
    let rows: Vec<_> = dump::read(&a.dump)?.into_iter().filter(|r| r.label != 0).collect();
    if rows.is_empty() {
        bail!("{} has no labeled rows", a.dump.display());
    }
    let scores = pipeline::score_rows(&model, &rows)?;
    let scored: Vec<(f64, i8)> = scores.into_iter().zip(&rows).map(|(s, r)| (s, r.label)).collect();
    evaluation::write_scores(&a.out, &scored)?;
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let scene = Scene::load(&a.scene)?;
    let image = load_image(&a.image)?;
    let model = SvmModel::load(&a.model)?;
    let v = pipeline::validate(&scene, &image, &model, a.spacing)?;
    let dir = &a.out.out;
    create_dir(dir)?;
    pipeline::write_verdicts(dir.join("verdicts.csv"), &v.segments)?;
    pipeline::annotate_validation(&image, &v).save(dir.join("validation.png"))?;
    let count = |verdict| v.segments.iter().filter(|r| r.verdict == verdict).count();
    println!(
        "{} segments: {} consistent, {} inconsistent, {} occluded, {} unsampled",
        v.segments.len(),
        count(pipeline::Verdict::Consistent),
        count(pipeline::Verdict::Inconsistent),
        count(pipeline::Verdict::Occluded),
        count(pipeline::Verdict::Unsampled)
    );
    Ok(())
}

fn conflate(a: &ConflateArgs) -> Result<()> {
    let scene = Scene::load(&a.scene)?;
    let image = load_image(&a.image)?;
    let model = SvmModel::load(&a.model)?;
    let params = SearchParams {
        half_length_px: a.half_length,
        step_px: a.step,
        ..SearchParams::default()
    };
    params.validate()?;
    let v = pipeline::validate(&scene, &image, &model, a.spacing)?;
    let results = conflation::conflate(&scene, &image, &model, &v, &params)?;
    let dir = &a.out.out;
    create_dir(dir)?;
    conflation::corrected_scene(&scene, &results).save(dir.join("corrected_scene.json"))?;
    conflation::annotate_conflation(&image, &results).save(dir.join("conflation.png"))?;
    let polylines: usize = results.iter().map(|r| r.corrected.len()).sum();
    println!("{} inconsistent segments searched, {} corrected polylines", results.len(), polylines);
    if polylines > 0 {
        println!("corrected altitudes lie on the DEM surface (source \"{}\")", conflation::CONFLATION_SOURCE);
    }
    Ok(())
}

fn splits(a: &SplitsArgs) -> Result<()> {
    let rows = read_dumps(&a.dumps)?;
    let outcomes = pipeline::evaluate_splits(
        &rows,
        a.model.descriptor.params()?,
        &a.model.train_params(),
        a.test_per_class,
        a.splits,
        a.seed,
    )?;
    let mut table = String::from("# obval-splits v1\nsplit,auc,tp,fn,tn,fp,sensitivity,specificity,accuracy\n");
    for o in &outcomes {
        let _ = writeln!(
            table,
            "{},{:.6},{},{},{},{},{},{},{}",
            o.index,
            o.auc,
            o.counts.tp,
            o.counts.fn_,
            o.counts.tn,
            o.counts.fp,
            fmt_opt(o.metrics.sensitivity),
            fmt_opt(o.metrics.specificity),
            fmt_opt(o.metrics.accuracy)
        );
    }
    let dir = &a.out.out;
    create_dir(dir)?;
    std::fs::write(dir.join("splits.csv"), &table).context("writing split table")?;
    let summary = |name: &str, values: Vec<f64>| match evaluation::mean_std(&values) {
        Some((mean, sd)) => println!("{name:<12} {mean:.4} ± {sd:.4}"),
        None => println!("{name:<12} undefined"),
    };
    println!("{} splits, {} held out per class", outcomes.len(), a.test_per_class);
    summary("auc", outcomes.iter().map(|o| o.auc).collect());
    summary("sensitivity", outcomes.iter().filter_map(|o| o.metrics.sensitivity).collect());
    summary("specificity", outcomes.iter().filter_map(|o| o.metrics.specificity).collect());
    summary("accuracy", outcomes.iter().filter_map(|o| o.metrics.accuracy).collect());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn roc_cmd(a: &RocArgs) -> Result<()> {
    let dir = &a.out.out;
    let mut curves = Vec::new();
    let mut table = String::from("# obval-metrics v1\nfile,auc,tp,fn,tn,fp,sensitivity,specificity,accuracy\n");
    for (k, path) in a.scores.iter().enumerate() {
        let scored = evaluation::read_scores(path)?;
        let curve = roc(&scored).with_context(|| format!("ROC of {}", path.display()))?;
        let c = ConfusionCounts::at_threshold(&scored, a.threshold);
        let m = metrics(c);
        let _ = writeln!(
            table,
            "{},{:.6},{},{},{},{},{},{},{}",
            path.display(),
            curve.auc,
            c.tp,
            c.fn_,
            c.tn,
            c.fp,
            fmt_opt(m.sensitivity),
            fmt_opt(m.specificity),
            fmt_opt(m.accuracy)
        );
        create_dir(dir)?;
        curve.write_csv(dir.join(format!("roc_{k}.csv")))?;
        curves.push(curve);
    }
    let refs: Vec<_> = curves.iter().collect();
    plot::write_roc_png(dir.join("roc.png"), &refs, 640)?;
    std::fs::write(dir.join("metrics.csv"), &table).context("writing metrics table")?;
    print!("{}", table.lines().skip(1).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a).context("synth"),
        Command::Extract(a) => extract(a).context("extract"),
        Command::Train(a) => train(a).context("train"),
        Command::Score(a) => score(a).context("score"),
        Command::Validate(a) => validate(a).context("validate"),
        Command::Conflate(a) => conflate(a).context("conflate"),
        Command::Roc(a) => roc_cmd(a).context("roc"),
        Command::Splits(a) => splits(a).context("splits"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
