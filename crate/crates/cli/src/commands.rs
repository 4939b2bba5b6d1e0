use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tactforge_core::calib::{
    predict_all, predict_depth_images, train, transfer_3dim, transfer_6dim, Dataset, Init, RunHistory, TrainConfig,
};
use tactforge_core::config::{GlobalConfig, SEED_ENV};
use tactforge_core::dataio::{
    build_dataset, build_dataset_with_rig, place_indenter, simulate_frame, split, FrameFilter, IndenterKind,
    IndenterSpec, Manifest, SensorConfig, SensorRig,
};
use tactforge_core::evalreport::{depth_errors_many, emit_report, wrench_errors, Curve, Report, RunMetadata};
use tactforge_core::gelsim::{DepthSidecar, PoseFile};
use tactforge_core::neural::{Checkpoint, Model, ModelSpec, Task};
use tactforge_core::optics::render_frame;
use tactforge_core::pattern::{self, PatternImage, PatternSidecar};
use tactforge_core::wrench::{AXIS_NAMES, FORCE_UNIT, TORQUE_UNIT};
use tactforge_core::{GrayImage, FORMAT_VERSION};

use crate::{
    BuildArgs, Cli, Command, DatasetCommand, EvalArgs, FilterArgs, ModelSize, PatternArgs, RenderArgs, Schedule,
    SimulateArgs, SplitArgs, TrainArgs, TransferArgs, TransferMode,
};

/// A command-line mistake detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Ctx {
    config: GlobalConfig,
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.version {
        print_version(cli.json)?;
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(usage("a subcommand is required (see --help)"));
    };
    let mut config = match &cli.config {
        Some(p) => GlobalConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => GlobalConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = config.resolve_seed(cli.seed, env.as_deref())?;
    let threads = cli.threads.or(config.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    // results never depend on the thread count, so it is left out of the echo
    config.seed = Some(seed);
    config.threads = None;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("starting the worker pool")?;
    let ctx = Ctx { config, seed };
    pool.install(|| dispatch(command, ctx))
}

fn dispatch(command: Command, ctx: Ctx) -> Result<()> {
    match command {
        Command::Pattern(a) => cmd_pattern(a, ctx),
        Command::Simulate(a) => cmd_simulate(a, ctx),
        Command::Render(a) => cmd_render(a, ctx),
        Command::Dataset(DatasetCommand::Build(a)) => cmd_build(a, ctx),
        Command::Dataset(DatasetCommand::Filter(a)) => cmd_filter(a, ctx),
        Command::Dataset(DatasetCommand::Split(a)) => cmd_split(a, ctx),
        Command::Train(a) => cmd_train(a, ctx),
        Command::Transfer(a) => cmd_transfer(a, ctx),
        Command::Eval(a) => cmd_eval(a, ctx),
        Command::Selftest => crate::selftest::run(),
    }
}

#[derive(Serialize)]
struct VersionInfo {
    name: &'static str,
    version: &'static str,
    format_version: u32,
    checkpoint_version: u32,
}

fn print_version(json: bool) -> Result<()> {
    let info = VersionInfo {
        name: "tactforge",
        version: env!("CARGO_PKG_VERSION"),
        format_version: FORMAT_VERSION,
        checkpoint_version: tactforge_core::neural::CHECKPOINT_VERSION,
    };
    if json {
        println!("{}", serde_json::to_string(&info)?);
    } else {
        println!("tactforge {}", info.version);
    }
    Ok(())
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    config: &'a GlobalConfig,
}

/// Writes `<command>.resolved.json` into `dir`.
fn echo_config<A: Serialize>(dir: &Path, command: &str, args: &A, config: &GlobalConfig) -> Result<()> {
    let path = dir.join(format!("{command}.resolved.json"));
    let body = serde_json::to_string_pretty(&Resolved { command, args, config })? + "\n";
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn comma_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// A pattern PNG, with its scale taken from the `.json` sidecar if present.
fn load_pattern(path: &Path, fallback_px_per_mm: f64) -> Result<PatternImage> {
    let pixels = GrayImage::read_png(path)?;
    let sidecar = path.with_extension("json");
    let px_per_mm = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
        serde_json::from_str::<PatternSidecar>(&text)
            .with_context(|| format!("parsing {}", sidecar.display()))?
            .px_per_mm
    } else {
        fallback_px_per_mm
    };
    Ok(PatternImage::from_gray(pixels, px_per_mm))
}

fn build_rig(sensor: &SensorConfig, pattern: Option<&Path>) -> Result<SensorRig> {
    Ok(match pattern {
        Some(p) => SensorRig::with_pattern(sensor, &load_pattern(p, sensor.pattern.px_per_mm)?)?,
        None => SensorRig::build(sensor)?,
    })
}

fn cmd_pattern(a: PatternArgs, mut ctx: Ctx) -> Result<()> {
    let mut pc = ctx.config.simulation.sensor.pattern.clone();
    pc.n = a.n.unwrap_or(pc.n);
    pc.domain_mm = a.domain_mm.unwrap_or(pc.domain_mm);
    pc.iterations = a.iterations.unwrap_or(pc.iterations);
    pc.px_per_mm = a.px_per_mm.unwrap_or(pc.px_per_mm);
    pc.stroke_mm = a.stroke_mm.unwrap_or(pc.stroke_mm);
    let g = pattern::generate(&pc, ctx.seed)?;
    create_dir(&parent_dir(&a.out))?;
    g.image.write_png(&a.out)?;
    write_json(&a.out.with_extension("json"), &g.sidecar())?;
    if let Some(svg) = &a.svg {
        create_dir(&parent_dir(svg))?;
        fs::write(svg, pattern::tour_svg(&g.tour, &g.points, pc.stroke_mm))
            .with_context(|| format!("writing {}", svg.display()))?;
    }
    ctx.config.simulation.sensor.pattern = pc;
    ctx.config.simulation.sensor.pattern_seed = ctx.seed;
    echo_config(&parent_dir(&a.out), "pattern", &a, &ctx.config)?;
    println!(
        "pattern: {} points, tour {:.1} mm, coverage {:.3} -> {}",
        g.points.points.len(),
        g.tour.length,
        pattern::coverage_fraction(&g.image),
        a.out.display()
    );
    Ok(())
}

fn parse_indenter(a: &SimulateArgs, seed: u64) -> Result<IndenterSpec> {
    if let Some(stl) = &a.stl {
        return Ok(IndenterSpec {
            id: "stl".into(),
            kind: IndenterKind::Stl {
                path: stl.clone(),
            },
            orientation: [1.0, 0.0, 0.0, 0.0],
        });
    }
    let name = a.indenter.as_deref().ok_or_else(|| usage("one of --indenter or --stl is required"))?;
    if let Some(r) = name.strip_prefix("sphere:") {
        let radius: f64 = r.parse().map_err(|_| usage(format!("bad sphere radius {r:?}")))?;
        return Ok(IndenterSpec {
            id: name.into(),
            kind: IndenterKind::Sphere { radius },
            orientation: [1.0, 0.0, 0.0, 0.0],
        });
    }
    tactforge_core::dataio::indenter_library(seed)
        .into_iter()
        .find(|s| s.id == name)
        .ok_or_else(|| usage(format!("unknown indenter {name:?} (library ids are r0c0..r2c6)")))
}

#[derive(Serialize)]
struct ContactRecord {
    indenter: IndenterSpec,
    pose: PoseFile,
    penetration_mm: f64,
    polar_deg: f64,
    azimuth_deg: f64,
    spin_deg: f64,
    wrench: serde_json::Map<String, serde_json::Value>,
    force_unit: &'static str,
    torque_unit: &'static str,
    saturated: bool,
    clamped: usize,
}

fn cmd_simulate(a: SimulateArgs, mut ctx: Ctx) -> Result<()> {
    let mut sensor = ctx.config.simulation.sensor.clone();
    if let Some(s) = a.image_size {
        sensor = sensor.with_image_size(s);
    }
    let spec = parse_indenter(&a, ctx.seed)?;
    let rig = build_rig(&sensor, a.pattern.as_deref())?;
    let (shape, pose, shear) = place_indenter(&spec, rig.geometry(), a.polar_deg, a.azimuth_deg, a.penetration_mm, a.spin_deg)?;
    let frame = simulate_frame(&rig, &shape, Some(shear))?;
    create_dir(&a.out)?;
    frame.image.write_png(&a.out.join("frame.png"))?;
    frame.encoded.write_png(&a.out.join("depth.png"))?;
    write_json(
        &a.out.join("depth.json"),
        &DepthSidecar {
            codec: sensor.codec,
            r_nominal: sensor.geometry.r_nominal,
            width: frame.encoded.width,
            height: frame.encoded.height,
            units: "mm".into(),
        },
    )?;
    let w = frame.wrench.to_array();
    let wrench = AXIS_NAMES.iter().zip(w).map(|(n, v)| (n.to_string(), serde_json::json!(v))).collect();
    write_json(
        &a.out.join("contact.json"),
        &ContactRecord {
            indenter: spec,
            pose: pose.into(),
            penetration_mm: a.penetration_mm,
            polar_deg: a.polar_deg,
            azimuth_deg: a.azimuth_deg,
            spin_deg: a.spin_deg,
            wrench,
            force_unit: FORCE_UNIT,
            torque_unit: TORQUE_UNIT,
            saturated: frame.saturated,
            clamped: frame.clamped,
        },
    )?;
    ctx.config.simulation.sensor = sensor;
    echo_config(&a.out, "simulate", &a, &ctx.config)?;
    println!(
        "wrench: F = ({:.4}, {:.4}, {:.4}) {FORCE_UNIT}, T = ({:.4}, {:.4}, {:.4}) {TORQUE_UNIT}",
        w[0], w[1], w[2], w[3], w[4], w[5]
    );
    if frame.saturated {
        log::warn!("the indenter engulfs the optical center; the frame is saturated");
    }
    Ok(())
}

fn cmd_render(a: RenderArgs, mut ctx: Ctx) -> Result<()> {
    let img = GrayImage::read_png(&a.depth)?;
    if img.width != img.height {
        return Err(usage(format!("depth image must be square, got {}x{}", img.width, img.height)));
    }
    let mut sensor = ctx.config.simulation.sensor.clone().with_image_size(img.width);
    let sidecar = a.depth.with_extension("json");
    if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
        let sc: DepthSidecar = serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?;
        sensor.codec = sc.codec;
        sensor.geometry.r_nominal = sc.r_nominal;
    }
    let rig = build_rig(&sensor, a.pattern.as_deref())?;
    let depth = sensor.codec.decode(&img);
    let frame = render_frame(&depth, &rig.setup)?;
    create_dir(&parent_dir(&a.out))?;
    frame.write_png(&a.out)?;
    ctx.config.simulation.sensor = sensor;
    echo_config(&parent_dir(&a.out), "render", &a, &ctx.config)?;
    Ok(())
}

fn cmd_build(a: BuildArgs, mut ctx: Ctx) -> Result<()> {
    let mut plan = ctx.config.simulation.clone();
    if let Some(s) = a.steps {
        plan.steps = s;
    }
    if let Some(n) = a.image_size {
        plan.sensor = plan.sensor.with_image_size(n);
    }
    if let Some(t) = a.threshold {
        plan.threshold = t;
    }
    if let Some(id) = &a.sensor_id {
        plan.sensor.sensor_id = id.clone();
    }
    if let Some(list) = &a.indenters {
        let wanted = comma_list(list);
        for id in &wanted {
            if !plan.indenters.iter().any(|s| &s.id == id) {
                return Err(usage(format!("unknown indenter {id:?}")));
            }
        }
        plan.indenters.retain(|s| wanted.contains(&s.id));
    }
    plan.with_depth &= !a.no_depth;
    plan.with_wrench &= !a.no_wrench;
    create_dir(&a.out)?;
    let m = match &a.pattern {
        Some(p) => {
            let rig = build_rig(&plan.sensor, Some(p))?;
            build_dataset_with_rig(&plan, &rig, ctx.seed, &a.out)?
        }
        None => build_dataset(&plan, ctx.seed, &a.out)?,
    };
    ctx.config.simulation = plan;
    echo_config(&a.out, "dataset-build", &a, &ctx.config)?;
    println!("dataset: {} frames -> {}", m.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

fn cmd_filter(a: FilterArgs, mut ctx: Ctx) -> Result<()> {
    let mut m = Manifest::read(&a.manifest)?;
    let threshold = a.threshold.unwrap_or(ctx.config.simulation.threshold);
    let mut filter = FrameFilter::new(threshold);
    let before = m.len();
    let mut kept = Vec::with_capacity(before);
    for r in &m.records {
        let img = m.load_image(r)?;
        if filter.offer(&img)? {
            kept.push(r.clone());
        }
    }
    m.records = kept;
    let root = parent_dir(&a.manifest);
    m.write(&root.join(&a.name))?;
    ctx.config.simulation.threshold = threshold;
    echo_config(&root, "dataset-filter", &a, &ctx.config)?;
    println!("filter: kept {} of {before} frames", m.len());
    Ok(())
}

fn cmd_split(a: SplitArgs, ctx: Ctx) -> Result<()> {
    let m = Manifest::read(&a.manifest)?;
    let held = comma_list(&a.hold_out);
    if held.is_empty() {
        return Err(usage("--hold-out needs at least one indenter id"));
    }
    let (tr, te) = split(&m, &held)?;
    let root = parent_dir(&a.manifest);
    tr.write(&root.join(format!("{}train.jsonl", a.prefix)))?;
    te.write(&root.join(format!("{}test.jsonl", a.prefix)))?;
    echo_config(&root, "dataset-split", &a, &ctx.config)?;
    println!("split: {} train, {} test", tr.len(), te.len());
    Ok(())
}

/// Training and validation manifests from the schedule flags.
fn resolve_val(m: &Manifest, s: &Schedule) -> Result<(Manifest, Manifest)> {
    if let Some(v) = &s.val {
        return Ok((m.clone(), Manifest::read(v)?));
    }
    if let Some(h) = &s.hold_out {
        return Ok(split(m, &comma_list(h))?);
    }
    log::warn!("no validation set given; validating on the training set");
    Ok((m.clone(), m.clone()))
}

fn apply_schedule(cfg: &mut TrainConfig, s: &Schedule, seed: u64) {
    cfg.seed = seed;
    if let Some(e) = s.epochs {
        cfg.epochs = e;
    }
    if s.max_steps.is_some() {
        cfg.max_steps = s.max_steps;
    }
    if let Some(b) = s.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = s.lr {
        cfg.lr = lr;
    }
}

fn load_sets(m: &Manifest, s: &Schedule, task: Task, with_reference: bool, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tm, vm) = resolve_val(m, s)?;
    let mut train_set = Dataset::from_manifest(&tm, task, with_reference)?;
    if let Some(f) = s.fraction {
        train_set = train_set.sample(f, seed)?;
    }
    let val_set = Dataset::from_manifest_with_ranges(&vm, task, with_reference, train_set.ranges)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(usage("training and validation sets must both be non-empty"));
    }
    Ok((train_set, val_set))
}

fn write_run(out: &Path, model: Model, history: &RunHistory) -> Result<String> {
    create_dir(out)?;
    let ckpt = Checkpoint::new(model, None);
    let hash = ckpt.save(&out.join("model.tfck"))?;
    write_json(&out.join("history.json"), &history.deterministic_part())?;
    write_json(&out.join("timing.json"), &serde_json::json!({ "wall_clock_s": history.wall_clock_s }))?;
    let last = history.evals.last();
    println!(
        "trained {} steps, final val loss {:.6}, val mae {:.6}, best step {:?}, convergence {:?}",
        history.train_loss.len(),
        last.map_or(f64::NAN, |e| e.val_loss),
        last.map_or(f64::NAN, |e| e.val_mae),
        history.best_step,
        history.convergence_step
    );
    Ok(hash)
}

fn cmd_train(a: TrainArgs, mut ctx: Ctx) -> Result<()> {
    let task: Task = a.task.into();
    let m = Manifest::read(&a.manifest)?;
    let mut spec = match a.model {
        ModelSize::Desk => ModelSpec::desk(task),
        ModelSize::Tiny => ModelSpec::tiny(task),
        ModelSize::Config => ctx.config.model(task).clone(),
    };
    spec.input_size = m.header.image_size[0];
    let (train_set, val_set) = load_sets(&m, &a.schedule, task, false, ctx.seed)?;
    let mut cfg = ctx.config.training(task).clone();
    apply_schedule(&mut cfg, &a.schedule, ctx.seed);
    let (model, history) = train(Init::Fresh(&spec), &train_set, &val_set, &cfg)?;
    write_run(&a.out, model, &history)?;
    match task {
        Task::Depth => {
            ctx.config.depth_model = spec;
            ctx.config.depth_training = cfg;
        }
        Task::Wrench => {
            ctx.config.wrench_model = spec;
            ctx.config.wrench_training = cfg;
        }
    }
    echo_config(&a.out, "train", &a, &ctx.config)
}

fn cmd_transfer(a: TransferArgs, mut ctx: Ctx) -> Result<()> {
    let pretrained = Checkpoint::load(&a.pretrained)?.model;
    let task = pretrained.spec.task;
    let six = a.mode == TransferMode::SixDim;
    let m = Manifest::read(&a.manifest)?;
    let (train_set, val_set) = load_sets(&m, &a.schedule, task, six, ctx.seed)?;
    let mut cfg = ctx.config.training(task).clone();
    apply_schedule(&mut cfg, &a.schedule, ctx.seed);
    cfg.freeze_encoder |= a.freeze_encoder;
    let (model, history) = if six {
        transfer_6dim(&pretrained, &train_set, &val_set, &cfg)?
    } else {
        transfer_3dim(&pretrained, &train_set, &val_set, &cfg)?
    };
    write_run(&a.out, model, &history)?;
    match task {
        Task::Depth => ctx.config.depth_training = cfg,
        Task::Wrench => ctx.config.wrench_training = cfg,
    }
    echo_config(&a.out, "transfer", &a, &ctx.config)
}

fn history_curves(path: &Path) -> Result<Vec<Curve>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let h: RunHistory = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(vec![
        Curve {
            name: "train_loss".into(),
            points: h.train_loss.iter().map(|&(s, l)| [s as f64, l]).collect(),
        },
        Curve {
            name: "val_loss".into(),
            points: h.evals.iter().map(|e| [e.step as f64, e.val_loss]).collect(),
        },
    ])
}

fn cmd_eval(a: EvalArgs, ctx: Ctx) -> Result<()> {
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be positive"));
    }
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let hash = ckpt.sha256()?;
    let model = ckpt.model;
    let task = model.spec.task;
    let m = Manifest::read(&a.manifest)?;
    let data = Dataset::from_manifest(&m, task, model.spec.input_channels == 6)?;
    let meta = RunMetadata {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_sha256: Some(hash),
        manifest: Some(a.manifest.display().to_string()),
        seed: Some(ctx.seed),
        task: Some(format!("{task:?}").to_lowercase()),
        notes: Vec::new(),
    };
    let mut report = Report::new(meta);
    match task {
        Task::Depth => {
            let preds = predict_depth_images(&model, &data, a.batch_size)?;
            let gts: Vec<GrayImage> = (0..data.len())
                .map(|i| GrayImage {
                    width: data.size,
                    height: data.size,
                    data: data.depth_pixels(i).to_vec(),
                })
                .collect();
            let pairs: Vec<(&GrayImage, &GrayImage)> = preds.iter().zip(&gts).collect();
            let stats = depth_errors_many(&pairs, &data.codec)?;
            println!(
                "depth: mean L1 {:.4} mm, RMS {:.4} mm over {} frames",
                stats.mean_l1_mm.unwrap_or(f64::NAN),
                stats.rms_mm.unwrap_or(f64::NAN),
                stats.frames
            );
            report = report.with_depth(stats)?;
        }
        Task::Wrench => {
            let preds = predict_all(&model, &data, a.batch_size)?;
            let mut norm_abs = 0.0;
            let mut phys_p = Vec::with_capacity(preds.len());
            let mut phys_t = Vec::with_capacity(preds.len());
            for (i, p) in preds.iter().enumerate() {
                let p: [f64; 6] = p.as_slice().try_into().context("wrench output must have 6 values")?;
                let t = data.wrench_target(i);
                norm_abs += p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>();
                phys_p.push(data.ranges.denormalize(&p).to_array());
                phys_t.push(data.ranges.denormalize(&t).to_array());
            }
            let nmae = (!preds.is_empty()).then(|| norm_abs / (6 * preds.len()) as f64);
            let stats = wrench_errors(&phys_p, &phys_t)?;
            if let Some(g) = &stats.groups {
                println!(
                    "wrench: normalized MAE {:.4}; F_xy {:.4} {FORCE_UNIT}, F_z {:.4} {FORCE_UNIT}, T_xy {:.4} {TORQUE_UNIT}, T_z {:.4} {TORQUE_UNIT}",
                    nmae.unwrap_or(f64::NAN),
                    g.f_xy,
                    g.f_z,
                    g.t_xy,
                    g.t_z
                );
            }
            report = report.with_wrench(stats, nmae)?;
        }
    }
    report.curves = history_curves(&parent_dir(&a.ckpt).join("history.json"))?;
    let files = emit_report(&report, &a.out)?;
    echo_config(&a.out, "eval", &a, &ctx.config)?;
    println!("report: {} files in {}", files.len(), a.out.display());
    Ok(())
}
