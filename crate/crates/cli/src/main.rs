mod config;
mod manifest;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gapfill::dineof::{dineof_reconstruct, DineofConfig};
use gapfill::eval::{bench_speed, run_experiment, BenchConfig, MetricsSpace, Protocol, RegionSpec};
use gapfill::grid::{
    apply_mask, denormalize, gen_cloud_mask, inverse_log_transform, load_series, log_transform,
    normalize, save_mask, save_series, synth_series, SynthConfig,
};
use gapfill::vconstruct::{
    fit_latent_prior, load_model, reconstruct, sample_ensemble, save_model, train, TrainConfig,
    VConstructModel,
};
use gapfill::{GridRect, SceneSeries, ValueSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use manifest::{sidecar, RunManifest};
use render::Panel;

#[derive(Parser, Debug)]
#[command(
    name = "gapfill",
    version,
    about = "Gap filling for gridded ocean-colour series"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic concentration series.
    Synth(SynthArgs),
    /// Generate an artificial cloud mask.
    Mask(MaskArgs),
    /// Fill every gap of a series with DINEOF.
    Dineof(DineofArgs),
    /// Train a VConstruct model.
    Train(TrainArgs),
    /// Fill gaps with a trained model.
    Reconstruct(ReconstructArgs),
    /// Run the masked-test-day comparison.
    Eval(EvalArgs),
    /// Time model inference against DINEOF.
    Bench(BenchArgs),
    /// Draw scenes side by side as a PNG.
    Render(RenderArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 400)]
    days: usize,
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 0.02)]
    noise_std: f64,
}

#[derive(Args, Debug)]
struct MaskArgs {
    /// Series whose land mask the cloud mask follows.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    coverage: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the series with the mask applied to this day.
    #[arg(long, requires = "masked_output")]
    day: Option<usize>,
    #[arg(long, requires = "day")]
    masked_output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DineofArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Upper bound on the number of modes.
    #[arg(long)]
    max_modes: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// `desk`, `paper` or a key=value file.
    #[arg(long, default_value = "desk")]
    arch: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fit a diagonal latent prior on the training days.
    #[arg(long)]
    fit_prior: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Only fill this day; the others are copied. Without it every day is filled.
    #[arg(long)]
    day: Option<usize>,
    /// Write N samples of `--day` as an N-day series.
    #[arg(long, requires = "day")]
    ensemble: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    /// Metrics CSV; the table goes to `<output>.txt`.
    #[arg(long)]
    output: PathBuf,
    /// Lines of `name row0 col0 row1 col1`.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.4)]
    coverage: f64,
    #[arg(long, default_value_t = 5)]
    test_days: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value = "desk")]
    arch: String,
    /// `conc` or `log`.
    #[arg(long, default_value = "conc")]
    metrics_space: String,
    #[arg(long)]
    fit_prior: bool,
    #[arg(long)]
    no_climatology: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 101)]
    reconstructions: usize,
    /// Size of the timed ensemble; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    ensemble: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    day: usize,
    /// More series drawn next to the input, same day.
    #[arg(long, num_args = 1..)]
    compare: Vec<PathBuf>,
    #[arg(long)]
    gray: bool,
    #[arg(long, default_value_t = 8)]
    scale: u32,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// The synthetic plume scaled from the 32×32 default to `h`×`w`.
fn default_plume(h: usize, w: usize) -> GridRect {
    let p = SynthConfig::default().plume;
    let sr = |v: usize| (v * h).div_ceil(32).min(h);
    let sc = |v: usize| (v * w).div_ceil(32).min(w);
    GridRect::new(sr(p.row0), sc(p.col0), sr(p.row1), sc(p.col1))
}

fn load(path: &Path) -> Result<SceneSeries> {
    load_series(path).with_context(|| format!("reading {}", path.display()))
}

fn save(series: &SceneSeries, path: &Path) -> Result<()> {
    save_series(series, path).with_context(|| format!("writing {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Concentration or log10 series to its own normalized form.
fn to_normalized(series: &SceneSeries) -> Result<SceneSeries> {
    let log = match series.space() {
        ValueSpace::Concentration => log_transform(series)?,
        ValueSpace::Log10 => series.clone(),
        ValueSpace::Normalized(_) => return Ok(series.clone()),
    };
    Ok(normalize(&log)?.0)
}

/// Normalized series back to concentration.
fn to_concentration(series: &SceneSeries) -> Result<SceneSeries> {
    match series.space() {
        ValueSpace::Normalized(stats) => Ok(inverse_log_transform(&denormalize(series, &stats)?)?),
        ValueSpace::Log10 => Ok(inverse_log_transform(series)?),
        ValueSpace::Concentration => Ok(series.clone()),
    }
}

/// Normalizes with the model's statistics rather than the series' own.
fn normalize_for(series: &SceneSeries, model: &VConstructModel<f32>) -> Result<SceneSeries> {
    let norm = model.norm;
    let target = ValueSpace::Normalized(norm);
    let space = series.space();
    if space == target {
        return Ok(series.clone());
    }
    let scenes = series
        .scenes()
        .iter()
        .map(|s| s.map_observed(|v| norm.forward(space.to_log10(v))))
        .collect();
    Ok(SceneSeries::new(
        scenes,
        series.day_index().to_vec(),
        series.land().clone(),
        target,
    )?)
}

fn check_day(series: &SceneSeries, day: usize) -> Result<()> {
    if day >= series.len() {
        bail!("day {day} out of range (series has {} days)", series.len());
    }
    Ok(())
}

struct Run {
    seeds: Vec<(String, u64)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    primary: PathBuf,
}

impl Run {
    fn new(primary: &Path) -> Self {
        Self {
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: vec![primary.to_path_buf()],
            primary: primary.to_path_buf(),
        }
    }

    fn seed(mut self, name: &str, v: u64) -> Self {
        self.seeds.push((name.to_string(), v));
        self
    }

    fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<Run> {
    let cfg = SynthConfig {
        height: a.height,
        width: a.width,
        days: a.days,
        rank: a.rank,
        noise_std: a.noise_std,
        plume: default_plume(a.height, a.width),
        seed: a.seed,
        ..Default::default()
    };
    let series = synth_series(&cfg)?;
    save(&series, &a.output)?;
    println!(
        "{} days of {}x{}, plume rows {}..{} cols {}..{}",
        series.len(),
        cfg.height,
        cfg.width,
        cfg.plume.row0,
        cfg.plume.row1,
        cfg.plume.col0,
        cfg.plume.col1
    );
    Ok(Run::new(&a.output).seed("synth", a.seed))
}

fn cmd_mask(a: &MaskArgs) -> Result<Run> {
    let series = load(&a.input)?;
    let (h, w) = series.dim();
    let mask = gen_cloud_mask(h, w, series.land(), a.coverage, a.seed)?;
    save_mask(&mask, series.land(), &a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    println!(
        "coverage {:.4} ({} pixels)",
        mask.coverage(),
        mask.occluded_count()
    );
    let mut run = Run::new(&a.output).seed("mask", a.seed).input(&a.input);
    if let (Some(day), Some(out)) = (a.day, &a.masked_output) {
        check_day(&series, day)?;
        let masked = series.with_scene(day, apply_mask(series.scene(day), &mask)?)?;
        save(&masked, out)?;
        run.outputs.push(out.clone());
    }
    Ok(run)
}

fn cmd_dineof(a: &DineofArgs) -> Result<Run> {
    let series = load(&a.input)?;
    let cfg = DineofConfig {
        max_modes: a.max_modes,
        seed: a.seed,
        ..Default::default()
    };
    let (filled, _, report) = dineof_reconstruct(&to_normalized(&series)?, &cfg)?;
    save(&to_concentration(&filled)?, &a.output)?;
    let table = sidecar(&a.output, "report.tsv");
    write(&table, &report.to_table())?;
    println!("k* = {}, {:.2} s", report.k_star, report.seconds);
    let mut run = Run::new(&a.output).seed("dineof", a.seed).input(&a.input);
    run.outputs.push(table);
    Ok(run)
}

fn cmd_train(a: &TrainArgs) -> Result<Run> {
    let series = to_normalized(&load(&a.input)?)?;
    let (h, w) = series.dim();
    let arch = config::parse_arch(&a.arch, h * w)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..Default::default()
    };
    let (mut model, log) = train(&series, arch, &cfg)?;
    if a.fit_prior {
        model.prior = fit_latent_prior(&model, &series, &log.training_days)?;
    }
    save_model(&model, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    let log_path = sidecar(&a.output, "log.tsv");
    write(&log_path, &log.to_table())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "{} days, {} epochs, final loss {:.5} (recon {:.5}, kl {:.5})",
            log.training_days.len(),
            log.epochs.len(),
            last.total,
            last.recon,
            last.kl
        );
    }
    let mut run = Run::new(&a.output).seed("train", a.seed).input(&a.input);
    run.outputs.push(log_path);
    Ok(run)
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<Run> {
    let series = load(&a.input)?;
    let model = load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let space = series.space();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let out = match (a.day, a.ensemble) {
        (Some(day), Some(n)) => {
            check_day(&series, day)?;
            let members = sample_ensemble(&model, series.scene(day), space, n, &mut rng)?;
            let land = series.land().clone();
            SceneSeries::contiguous(members, land, ValueSpace::Concentration)?
        }
        (Some(day), None) => {
            check_day(&series, day)?;
            let scene = reconstruct(&model, series.scene(day), space, &mut rng)?;
            to_concentration(&series)?.with_scene(day, scene)?
        }
        (None, _) => {
            let conc = to_concentration(&series)?;
            let mut scenes = Vec::with_capacity(series.len());
            for (t, scene) in series.scenes().iter().enumerate() {
                scenes.push(if scene.cloud_count() == 0 {
                    conc.scene(t).clone()
                } else {
                    reconstruct(&model, scene, space, &mut rng)?
                });
            }
            SceneSeries::new(
                scenes,
                series.day_index().to_vec(),
                series.land().clone(),
                ValueSpace::Concentration,
            )?
        }
    };
    save(&out, &a.output)?;
    println!("{} scene(s) written", out.len());
    Ok(Run::new(&a.output)
        .seed("inference", a.seed)
        .input(&a.input)
        .input(&a.model))
}

fn protocol_for(a: &EvalArgs, h: usize, w: usize) -> Result<Protocol> {
    let Some(metrics_space) = MetricsSpace::parse(&a.metrics_space) else {
        bail!(
            "--metrics-space must be conc or log, got {:?}",
            a.metrics_space
        );
    };
    Ok(Protocol {
        n_test_days: a.test_days,
        seed: a.seed,
        coverage: a.coverage,
        train: TrainConfig {
            epochs: a.epochs,
            seed: a.seed,
            ..Default::default()
        },
        dineof: DineofConfig {
            seed: a.seed,
            ..Default::default()
        },
        arch: Some(config::parse_arch(&a.arch, h * w)?),
        metrics_space,
        fit_prior: a.fit_prior,
        climatology: !a.no_climatology,
        ..Default::default()
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<Run> {
    let series = load(&a.input)?;
    let (h, w) = series.dim();
    let regions = match &a.regions {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RegionSpec::parse_list(&text).with_context(|| format!("--regions {}", p.display()))?
        }
        None => {
            let mut r = vec![RegionSpec::full(h, w)];
            let plume = default_plume(h, w);
            if !plume.is_empty() {
                r.push(RegionSpec::new("plume", plume));
            }
            r
        }
    };
    let report = run_experiment(&series, &regions, &protocol_for(a, h, w)?)?;
    write(&a.output, &report.metrics_csv())?;
    let timing = sidecar(&a.output, "timing.csv");
    write(&timing, &report.to_csv())?;
    let table = sidecar(&a.output, "txt");
    let text = report.to_table();
    write(&table, &text)?;
    print!("{text}");
    let mut run = Run::new(&a.output).seed("protocol", a.seed).input(&a.input);
    if let Some(p) = &a.regions {
        run.inputs.push(p.clone());
    }
    run.outputs.push(timing);
    run.outputs.push(table);
    Ok(run)
}

fn cmd_bench(a: &BenchArgs) -> Result<Run> {
    let model = load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let series = normalize_for(&load(&a.input)?, &model)?;
    let cfg = BenchConfig {
        n_reconstructions: a.reconstructions,
        ensemble_size: a.ensemble,
        seed: a.seed,
    };
    let report = bench_speed(&model, &series, &DineofConfig::default(), &cfg)?;
    let text = report.to_table();
    write(&a.output, &text)?;
    print!("{text}");
    Ok(Run::new(&a.output)
        .seed("inference", a.seed)
        .input(&a.input)
        .input(&a.model))
}

fn cmd_render(a: &RenderArgs) -> Result<Run> {
    let mut all = vec![load(&a.input)?];
    for p in &a.compare {
        all.push(load(p)?);
    }
    for s in &all {
        check_day(s, a.day)?;
    }
    let panels: Vec<Panel> = all
        .iter()
        .map(|s| Panel {
            scene: s.scene(a.day),
            space: s.space(),
        })
        .collect();
    let img = render::render(&panels, a.scale, a.gray)?;
    render::save_png(&img, &a.output)?;
    let mut run = Run::new(&a.output).input(&a.input);
    run.inputs.extend(a.compare.iter().cloned());
    Ok(run)
}

fn dispatch(cmd: &Command) -> Result<(&'static str, Run)> {
    Ok(match cmd {
        Command::Synth(a) => ("synth", cmd_synth(a)?),
        Command::Mask(a) => ("mask", cmd_mask(a)?),
        Command::Dineof(a) => ("dineof", cmd_dineof(a)?),
        Command::Train(a) => ("train", cmd_train(a)?),
        Command::Reconstruct(a) => ("reconstruct", cmd_reconstruct(a)?),
        Command::Eval(a) => ("eval", cmd_eval(a)?),
        Command::Bench(a) => ("bench", cmd_bench(a)?),
        Command::Render(a) => ("render", cmd_render(a)?),
        Command::Replay(_) => unreachable!("handled in run"),
    })
}

fn set_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GAPFILL_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("GAPFILL_THREADS={v:?} is not a number"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest)
        .with_context(|| format!("reading {}", a.manifest.display()))?;
    let (cwd, argv) = manifest::parse_invocation(&text)
        .with_context(|| format!("--manifest {}", a.manifest.display()))?;
    std::env::set_current_dir(&cwd).with_context(|| format!("entering {}", cwd.display()))?;
    run(argv)
}

fn run(argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    if let Command::Replay(a) = &cli.command {
        return replay(a);
    }
    let (name, run) = dispatch(&cli.command)?;
    let manifest = RunManifest {
        command: name.to_string(),
        cwd: std::env::current_dir().context("reading the working directory")?,
        argv,
        config: format!("{:?}", cli.command),
        seeds: run.seeds,
        inputs: run.inputs,
        outputs: run.outputs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.write_next_to(&run.primary)?;
    Ok(())
}

fn main() -> ExitCode {
    let result = set_threads()
        .and_then(|()| config::expand_config(std::env::args().collect()))
        .and_then(run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gapfill: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
