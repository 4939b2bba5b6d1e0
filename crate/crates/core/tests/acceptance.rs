//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `TACTFORGE_ACCEPT=1,5,9` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use sha2::{Digest, Sha256};
use tactforge_core::calib::{predict_depth_images, train, transfer_3dim, Dataset, Init, RunHistory, TrainConfig};
use tactforge_core::dataio::{
    build_dataset_with_rig, filter_stream, indenter_library, place_indenter, similarity, split, Manifest,
    SensorConfig, SensorRig, SimulationPlan, RING_CAPACITY,
};
use tactforge_core::evalreport::{depth_errors_many, emit_report, wrench_errors, Report, RunMetadata};
use tactforge_core::gelsim::mesh::TriMesh;
use tactforge_core::gelsim::{
    analytic_sphere_indent, bulge_field, enclosed_volume, raycast_indent, undeformed, MeshIndenter,
};
use tactforge_core::math::{Pose, Quat};
use tactforge_core::neural::{grad_check, silog_loss, wrench_loss, Checkpoint, Model, ModelSpec, Task, Tensor, GRAD_EPS};
use tactforge_core::pattern::{self, generate, PatternConfig};
use tactforge_core::wrench::{compute_wrench, FoundationParams};
use tactforge_core::{DepthCodec, GrayImage, IndenterShape, SensorGeometry, Vec3};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_codec() -> Outcome {
    let c = DepthCodec::default();
    let bad = (0..=255u8).filter(|&p| c.encode_value(c.decode_value(p)).0 != p).count();
    let nominal = c.encode_value(15.5).0;
    Ok((
        bad == 0 && nominal == 180 && c.step == 0.0182,
        format!("{bad}/256 mismatches, encode(15.5 mm) = {nominal}, step = {} mm", c.step),
    ))
}

fn c2_pattern() -> Outcome {
    let g = generate(&PatternConfig::default(), 0).map_err(err)?;
    let n = g.points.points.len();
    let mut seen = vec![false; n];
    let perm = g.tour.order.len() == n && g.tour.order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
    let cov = pattern::coverage_fraction(&g.image);
    let ac = pattern::max_offpeak_autocorrelation(&g.image.pixels, 2.0);
    let ok = n == 8192 && perm && g.tour.length <= g.nearest_neighbor_length && (0.2..=0.6).contains(&cov) && ac < 0.5;
    Ok((
        ok,
        format!(
            "{n} points, permutation {perm}, 2-opt {:.1} mm <= NN {:.1} mm, coverage {cov:.3}, off-peak autocorrelation {ac:.3}",
            g.tour.length, g.nearest_neighbor_length
        ),
    ))
}

fn c3_geometry() -> Outcome {
    let geom = SensorGeometry::with_grid(64);
    let (radius, pen) = (5.0, 2.0);
    let center = Vec3::new(1.0, -0.5, geom.r_nominal - pen + radius);
    let exact = analytic_sphere_indent(&geom, center, radius).map_err(err)?;
    let mut errs = Vec::new();
    for level in 1..=4 {
        let shape = IndenterShape::Mesh {
            indenter: Arc::new(MeshIndenter::new(TriMesh::icosphere(radius, level))),
            pose: Pose::new(Quat::default(), center),
        };
        errs.push(raycast_indent(&geom, &shape).map_err(err)?.depth.max_abs_diff(&exact));
    }
    let halving = errs.windows(2).all(|w| w[1] <= 0.5 * w[0]);
    Ok((
        errs[3] <= 0.05 && halving,
        format!("max error by level {:?} mm", errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>()),
    ))
}

fn c4_bulge() -> Outcome {
    use rand::{Rng, SeedableRng};
    let geom = SensorGeometry::with_grid(64);
    let lib = indenter_library(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let v0 = enclosed_volume(&undeformed(&geom), &geom);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 50 {
        let spec = &lib[rng.random_range(0..lib.len())];
        let (polar, azimuth) = (rng.random_range(0.0..60.0), rng.random_range(0.0..360.0));
        let (pen, spin) = (rng.random_range(0.3..2.5), rng.random_range(0.0..360.0));
        let (shape, _, _) = place_indenter(spec, &geom, polar, azimuth, pen, spin).map_err(err)?;
        let contact = raycast_indent(&geom, &shape).map_err(err)?.depth;
        let b = bulge_field(&contact, &geom, 20.0).map_err(err)?;
        if b.displaced_volume == 0.0 {
            continue;
        }
        worst = worst.max((enclosed_volume(&b.depth, &geom) - v0).abs() / b.displaced_volume);
        checked += 1;
    }
    Ok((worst <= 0.005, format!("worst |dV|/V over {checked} indentations = {worst:.2e}")))
}

fn c5_wrench() -> Outcome {
    let geom = SensorGeometry::with_grid(64);
    let press = |x: f64, k: f64| -> Result<[f64; 6], String> {
        let (r, p) = (5.0, 2.0);
        let center = Vec3::new(x, 0.0, geom.r_nominal - p + r);
        let d = raycast_indent(&geom, &IndenterShape::Sphere { center, radius: r }).map_err(err)?.depth;
        let params = FoundationParams { k, ..FoundationParams::default() };
        Ok(compute_wrench(&d, &geom, &params).map_err(err)?.to_array())
    };
    let k = FoundationParams::default().k;
    let w = press(0.0, k)?;
    let fz = w[2].abs();
    let off = [w[0], w[1], w[3], w[4], w[5]].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (right, left) = (press(2.0, k)?, press(-2.0, k)?);
    let doubled = press(2.0, 2.0 * k)?;
    let linear = right.iter().zip(&doubled).all(|(a, b)| 2.0 * a == *b);
    let ok = fz > 0.0 && off <= 1e-9 * fz && right[0] == -left[0] && right[0] != 0.0 && linear;
    Ok((
        ok,
        format!(
            "off-axis {off:.1e} vs |Fz| {fz:.3} N; Fx {:.6} / {:.6}; linear in k {linear}",
            right[0], left[0]
        ),
    ))
}

fn c6_losses() -> Outcome {
    let gt = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|i| 0.2 + 0.05 * i as f64).collect());
    let pred = Tensor::new(gt.shape.clone(), gt.data.iter().map(|g| g * std::f64::consts::E).collect());
    let s = silog_loss(&pred, &gt, 0.85).map_err(err)?;
    let a = Tensor::new(gt.shape.clone(), (0..16).map(|i| 0.3 + ((i * 7) % 5) as f64 * 0.1).collect());
    let scaled = Tensor::new(gt.shape.clone(), a.data.iter().map(|v| v * 3.7).collect());
    let inv = (silog_loss(&a, &gt, 1.0).map_err(err)? - silog_loss(&scaled, &gt, 1.0).map_err(err)?).abs();
    let cases = [
        (wrench_loss(&[0.0; 6], &[0.0; 6]), 0.0),
        (wrench_loss(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 6]), 1.0 / 6.0),
        (wrench_loss(&[1.0; 6], &[-1.0; 6]), 4.0),
        (wrench_loss(&[0.5, -0.5, 0.25, 0.0, 1.0, 0.0], &[0.0; 6]), 1.5625 / 6.0),
    ];
    let exact = cases.iter().all(|(got, want)| got == want);
    let ok = (s - 0.15f64.sqrt()).abs() <= 1e-9 && inv <= 1e-12 && exact;
    Ok((ok, format!("silog(e*gt) - sqrt(0.15) = {:.1e}, lambda=1 scale gap {inv:.1e}, MSE cases exact {exact}", s - 0.15f64.sqrt())))
}

fn c7_gradients() -> Outcome {
    let d = grad_check(&ModelSpec::tiny(Task::Depth), 1, GRAD_EPS).map_err(err)?;
    let w = grad_check(&ModelSpec::tiny(Task::Wrench), 1, GRAD_EPS).map_err(err)?;
    let worst = d.max_rel_error.max(w.max_rel_error);
    Ok((
        worst <= 1e-4,
        format!(
            "max relative error depth {:.2e} ({} params), wrench {:.2e} ({} params)",
            d.max_rel_error, d.checked, w.max_rel_error, w.checked
        ),
    ))
}

fn c8_filter() -> Outcome {
    let flat = |v: u8| GrayImage { width: 8, height: 8, data: vec![v; 64] };
    let repeated = filter_stream(&vec![flat(90); 30], 0.9).map_err(err)?.len();
    let same = similarity(&flat(7), &flat(7)).map_err(err)?;
    let zero = similarity(&flat(0), &flat(255)).map_err(err)?;
    let distinct: Vec<GrayImage> = (0..=RING_CAPACITY as u8).map(|i| flat(i * 40)).collect();
    let mut inside = distinct[..RING_CAPACITY].to_vec();
    inside.push(distinct[0].clone());
    let mut past = distinct.clone();
    past.push(distinct[0].clone());
    let caught = filter_stream(&inside, 0.9).map_err(err)?.len() == RING_CAPACITY;
    let evicted = filter_stream(&past, 0.9).map_err(err)?.len() == RING_CAPACITY + 2;
    let ok = repeated == 1 && same == 1.0 && zero == 0.0 && caught && evicted && RING_CAPACITY == 5;
    Ok((
        ok,
        format!("repeated stream keeps {repeated}; similarity {same} / {zero}; depth-{RING_CAPACITY} buffer catch {caught}, evict {evicted}"),
    ))
}

const TRAIN_COLS: [usize; 5] = [0, 1, 2, 3, 4];
const VAL_COL: usize = 5;
const TEST_COL: usize = 6;
const FRAMES: usize = 2000;
const SEED: u64 = 2024;

struct Splits {
    manifest: Manifest,
    train: Manifest,
    val: Manifest,
    test: Manifest,
}

fn ids(col: usize) -> Vec<String> {
    (0..3).map(|r| format!("r{r}c{col}")).collect()
}

fn split_three(m: &Manifest) -> Result<Splits, String> {
    let (rest, test) = split(m, &ids(TEST_COL)).map_err(err)?;
    let (train, val) = split(&rest, &ids(VAL_COL)).map_err(err)?;
    debug_assert!(TRAIN_COLS.iter().all(|&c| train.indenter_counts().contains_key(&format!("r0c{c}"))));
    Ok(Splits { manifest: m.clone(), train, val, test })
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temp dir")).path()
}

fn rig_for(sensor: &SensorConfig) -> Result<SensorRig, String> {
    SensorRig::build(sensor).map_err(err)
}

/// Simulates until at least `frames` frames survive the filter.
fn simulate(sensor: SensorConfig, frames: usize, seed: u64, dir: &Path, ranges: Option<tactforge_core::WrenchRanges>) -> Result<Manifest, String> {
    let rig = rig_for(&sensor)?;
    let lib = indenter_library(0);
    let mut steps = frames.div_ceil(lib.len());
    loop {
        let plan = SimulationPlan { sensor: sensor.clone(), indenters: lib.clone(), steps, wrench_ranges: ranges, ..SimulationPlan::default() };
        let _ = fs::remove_dir_all(dir);
        let m = build_dataset_with_rig(&plan, &rig, seed, dir).map_err(err)?;
        if m.len() >= frames {
            return Ok(m);
        }
        steps = (steps * frames).div_ceil(m.len().max(1)) + 1;
    }
}

fn source() -> Result<&'static Splits, String> {
    static S: OnceLock<Result<Splits, String>> = OnceLock::new();
    S.get_or_init(|| {
        let sensor = SensorConfig::default().with_image_size(64);
        let m = simulate(sensor, FRAMES, SEED, &workdir().join("source"), None)?;
        split_three(&m)
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn datasets(s: &Splits, task: Task) -> Result<(Dataset, Dataset, Dataset), String> {
    let load = |m: &Manifest| Dataset::from_manifest(m, task, false).map_err(err);
    Ok((load(&s.train)?, load(&s.val)?, load(&s.test)?))
}

fn depth_config() -> TrainConfig {
    TrainConfig { epochs: 6, lr: 1e-3, lr_decay: 0.7, seed: SEED, ..TrainConfig::depth() }
}

fn wrench_config() -> TrainConfig {
    TrainConfig { epochs: 30, lr: 3e-4, lr_decay: 0.9, seed: SEED, ..TrainConfig::wrench() }
}

fn c9_depth() -> Outcome {
    let s = source()?;
    let (tr, va, te) = datasets(s, Task::Depth)?;
    let (model, h) = train(Init::Fresh(&ModelSpec::desk(Task::Depth)), &tr, &va, &depth_config()).map_err(err)?;
    let preds = predict_depth_images(&model, &te, 8).map_err(err)?;
    let gts: Vec<GrayImage> =
        (0..te.len()).map(|i| GrayImage { width: te.size, height: te.size, data: te.depth_pixels(i).to_vec() }).collect();
    let pairs: Vec<(&GrayImage, &GrayImage)> = preds.iter().zip(&gts).collect();
    let mae = depth_errors_many(&pairs, &te.codec).map_err(err)?.mean_l1_mm.unwrap_or(f64::INFINITY);
    let flat = GrayImage { width: te.size, height: te.size, data: vec![te.codec.encode_value(15.5).0; te.size * te.size] };
    let base: Vec<(&GrayImage, &GrayImage)> = gts.iter().map(|g| (&flat, g)).collect();
    let baseline = depth_errors_many(&base, &te.codec).map_err(err)?.mean_l1_mm.unwrap_or(f64::NAN);
    // error restricted to pixels the indenter or bulge moved
    let (mut sum, mut count) = (0u64, 0usize);
    for (p, g) in preds.iter().zip(&gts) {
        for ((a, b), f) in p.data.iter().zip(&g.data).zip(&flat.data) {
            if b != f {
                sum += (*a as i64 - *b as i64).unsigned_abs();
                count += 1;
            }
        }
    }
    let contact = te.codec.step * sum as f64 / count.max(1) as f64;
    Ok((
        mae <= 0.5 && mae < baseline,
        format!(
            "{} frames ({} train / {} val / {} unseen-indenter test), held-out MAE {mae:.4} mm (undeformed baseline {baseline:.4} mm, deformed pixels only {contact:.4} mm), {} steps in {:.0} s",
            s.manifest.len(),
            tr.len(),
            va.len(),
            te.len(),
            h.train_loss.len(),
            h.wall_clock_s
        ),
    ))
}

fn wrench_model() -> Result<&'static (Model, RunHistory), String> {
    static M: OnceLock<Result<(Model, RunHistory), String>> = OnceLock::new();
    M.get_or_init(|| {
        let (tr, va, _) = datasets(source()?, Task::Wrench)?;
        train(Init::Fresh(&ModelSpec::desk(Task::Wrench)), &tr, &va, &wrench_config()).map_err(err)
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn normalized_mae(model: &Model, data: &Dataset) -> Result<f64, String> {
    let preds = tactforge_core::calib::predict_all(model, data, 16).map_err(err)?;
    let preds: Vec<[f64; 6]> = preds.iter().map(|p| std::array::from_fn(|a| p[a])).collect();
    let gts: Vec<[f64; 6]> = (0..data.len()).map(|i| data.wrench_target(i)).collect();
    let stats = wrench_errors(&preds, &gts).map_err(err)?;
    Ok(stats.per_axis_mae.iter().sum::<f64>() / 6.0)
}

fn c10_wrench() -> Outcome {
    let s = source()?;
    let (_, _, te) = datasets(s, Task::Wrench)?;
    let (model, h) = wrench_model()?;
    let mae = normalized_mae(model, &te)?;
    let mean_target: Vec<f64> = (0..6).map(|a| (0..te.len()).map(|i| te.wrench_target(i)[a]).sum::<f64>() / te.len() as f64).collect();
    let base = (0..te.len())
        .map(|i| (0..6).map(|a| (te.wrench_target(i)[a] - mean_target[a]).abs()).sum::<f64>() / 6.0)
        .sum::<f64>()
        / te.len() as f64;
    Ok((
        mae <= 0.08 && mae < base,
        format!(
            "held-out normalized MAE {mae:.4} over {} unseen-indenter frames (test-mean baseline {base:.4}), {} steps in {:.0} s",
            te.len(),
            h.train_loss.len(),
            h.wall_clock_s
        ),
    ))
}

/// A second sensor: different pattern, lighting and exposure.
fn new_sensor() -> SensorConfig {
    let mut s = SensorConfig::default().with_image_size(64);
    s.sensor_id = "sensor-1".into();
    s.pattern_seed = 1;
    s.ring.phase_deg = 7.0;
    s.ring.intensity = 0.9;
    s.ring.tint = [1.0, 0.95, 1.05];
    s.tone.exposure = 1.5;
    s
}

fn c11_transfer() -> Outcome {
    let src = source()?;
    let (pre, _) = wrench_model()?;
    let target_frames = (0.12 * FRAMES as f64).round() as usize;
    // enough frames to draw the 12% training sets from the training indenters
    let m = simulate(new_sensor(), 2 * target_frames, SEED + 1, &workdir().join("target"), Some(src.manifest.header.wrench_ranges))?;
    let t = split_three(&m)?;
    let (pool, va, _) = datasets(&t, Task::Wrench)?;
    let cfg = TrainConfig { epochs: 15, eval_every: 0, ..wrench_config() };
    let (mut tl, mut sl) = (Vec::new(), Vec::new());
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let idx: Vec<usize> = {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut v = rand::seq::index::sample(&mut rng, pool.len(), target_frames.min(pool.len())).into_vec();
            v.sort_unstable();
            v
        };
        let small = pool.select(&idx).map_err(err)?;
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let (_, ht) = transfer_3dim(pre, &small, &va, &cfg).map_err(err)?;
        let (_, hs) = train(Init::Fresh(&ModelSpec::desk(Task::Wrench)), &small, &va, &cfg).map_err(err)?;
        let (a, b) = (ht.final_val_loss().unwrap_or(f64::NAN), hs.final_val_loss().unwrap_or(f64::NAN));
        lines.push(format!(
            "seed {seed}: transfer {a:.5} (converged at {:?}) vs scratch {b:.5} (converged at {:?})",
            ht.convergence_step, hs.convergence_step
        ));
        tl.push(a);
        sl.push(b);
    }
    let mt = tl.iter().sum::<f64>() / 3.0;
    let ms = sl.iter().sum::<f64>() / 3.0;
    Ok((mt <= ms, format!("{target_frames}-frame sets, mean final val loss transfer {mt:.5} vs scratch {ms:.5}; {}", lines.join("; "))))
}

fn hash_tree(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
        let mut entries: Vec<_> = fs::read_dir(dir).expect("read dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let bytes = fs::read(&p).expect("read file");
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), hex::encode(Sha256::digest(bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Build, train, checkpoint and report under one thread count.
fn pipeline(dir: &Path, threads: usize) -> Result<BTreeMap<PathBuf, String>, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
    pool.install(|| {
        let mut sensor = SensorConfig::default().with_image_size(32);
        sensor.pattern = PatternConfig { n: 1500, domain_mm: 20.0, iterations: 10, ..PatternConfig::default() };
        let mut plan = SimulationPlan { sensor, steps: 6, threshold: 0.99, ..SimulationPlan::default() };
        plan.indenters.retain(|s| s.id.ends_with("c0") || s.id.ends_with("c1"));
        let rig = rig_for(&plan.sensor)?;
        let m = build_dataset_with_rig(&plan, &rig, 5, &dir.join("data")).map_err(err)?;
        let last = m.records.last().ok_or("empty dataset")?.indenter_id.clone();
        let (tr, te) = split(&m, &[last]).map_err(err)?;
        let spec = ModelSpec { input_size: 32, ..ModelSpec::tiny(Task::Wrench) };
        let (a, b) = (Dataset::from_manifest(&tr, Task::Wrench, false).map_err(err)?, Dataset::from_manifest(&te, Task::Wrench, false).map_err(err)?);
        let cfg = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, seed: 5, ..TrainConfig::wrench() };
        let (model, h) = train(Init::Fresh(&spec), &a, &b, &cfg).map_err(err)?;
        fs::write(dir.join("history.json"), serde_json::to_string(&h.deterministic_part()).map_err(err)?).map_err(err)?;
        let sha = Checkpoint::new(model.clone(), None).save(&dir.join("model.tfck")).map_err(err)?;
        let preds = tactforge_core::calib::predict_all(&model, &b, 4).map_err(err)?;
        let preds: Vec<[f64; 6]> = preds.iter().map(|p| std::array::from_fn(|i| p[i])).collect();
        let gts: Vec<[f64; 6]> = (0..b.len()).map(|i| b.wrench_target(i)).collect();
        let meta = RunMetadata { checkpoint_sha256: Some(sha), seed: Some(5), ..RunMetadata::default() };
        let report = Report::new(meta).with_wrench(wrench_errors(&preds, &gts).map_err(err)?, None).map_err(err)?;
        emit_report(&report, &dir.join("report")).map_err(err)?;
        Ok(hash_tree(dir))
    })
}

fn c12_determinism() -> Outcome {
    let a = pipeline(&workdir().join("det1"), 1)?;
    let b = pipeline(&workdir().join("det8"), 8)?;
    let differing: Vec<_> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    let ok = a.len() == b.len() && differing.is_empty() && a.len() > 5;
    Ok((ok, format!("{} artifacts hashed under 1 and 8 threads, {} differ {:?}", a.len(), differing.len(), differing)))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 12] = [
        (1, "codec exactness", c1_codec),
        (2, "pattern validity", c2_pattern),
        (3, "geometry oracle", c3_geometry),
        (4, "bulge conservation", c4_bulge),
        (5, "wrench symmetry", c5_wrench),
        (6, "loss closed forms", c6_losses),
        (7, "gradient check", c7_gradients),
        (8, "filter behavior", c8_filter),
        (9, "end-to-end depth", c9_depth),
        (10, "end-to-end wrench", c10_wrench),
        (11, "transfer with 12% data", c11_transfer),
        (12, "determinism across threads", c12_determinism),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("TACTFORGE_ACCEPT").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} {id:>2} {name} ({secs:.1} s): {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
