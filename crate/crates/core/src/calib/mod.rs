//! Training orchestration: seeded mini-batch loops with periodic validation,
//! multi-sensor pretraining and the 3-/6-channel transfer workflows.

mod dataset;

pub use dataset::Dataset;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::neural::{mse, recip_ssim, silog, Adam, AdamState, Graph, Mode, Model, ModelSpec, SsimConfig, Task, Var, SILOG_SHIFT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    RecipSsim,
    Silog,
    Mse,
}

/// Depth values are lifted by this floor before the reciprocal SSIM.
pub const RECIP_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Validate every this many steps; 0 validates once per epoch.
    pub eval_every: usize,
    pub bn_momentum: f64,
    /// Train only the adapter and head, keeping stem and encoder fixed.
    pub freeze_encoder: bool,
    pub ssim: SsimConfig,
    pub silog_lambda: f64,
    /// Hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    /// Moving-average window for convergence, in validation points.
    pub convergence_window: usize,
    pub convergence_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::depth()
    }
}

impl TrainConfig {
    pub fn depth() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs: 10,
            lr: 1e-4,
            lr_decay: 1.0,
            seed: 0,
            loss: LossKind::RecipSsim,
            eval_every: 0,
            bn_momentum: 0.1,
            freeze_encoder: false,
            ssim: SsimConfig::default(),
            silog_lambda: 0.85,
            max_steps: None,
            convergence_window: 3,
            convergence_epsilon: 0.02,
        }
    }

    pub fn wrench() -> TrainConfig {
        TrainConfig {
            lr: 2e-5,
            loss: LossKind::Mse,
            ..TrainConfig::depth()
        }
    }

    pub fn for_task(task: Task) -> TrainConfig {
        match task {
            Task::Depth => TrainConfig::depth(),
            Task::Wrench => TrainConfig::wrench(),
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::invalid("batch size, learning rate and decay must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.convergence_window == 0 {
            return Err(Error::invalid("invalid momentum or convergence window"));
        }
        let ok = matches!(
            (task, self.loss),
            (Task::Depth, LossKind::RecipSsim) | (Task::Depth, LossKind::Silog) | (Task::Wrench, LossKind::Mse)
        );
        if !ok {
            return Err(Error::invalid(format!("loss {:?} does not fit the {:?} task", self.loss, task)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub val_loss: f64,
    /// Depth: mean absolute error in mm. Wrench: normalized MAE.
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub config: TrainConfig,
    pub task: Task,
    pub sensor_ids: Vec<String>,
    /// `(step, loss)` per optimizer step, steps counted from 1.
    pub train_loss: Vec<(usize, f64)>,
    pub evals: Vec<EvalPoint>,
    pub best_step: Option<usize>,
    pub convergence_step: Option<usize>,
    /// Excluded from determinism comparisons.
    pub wall_clock_s: f64,
}

impl RunHistory {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.evals.last().map(|e| e.val_loss)
    }

    /// The history without wall-clock time.
    pub fn deterministic_part(&self) -> RunHistory {
        RunHistory {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// Scalar training loss of a batch.
fn batch_loss(g: &mut Graph, task: Task, cfg: &TrainConfig, out: Var, target: Var) -> Result<Var> {
    match (task, cfg.loss) {
        (Task::Depth, LossKind::RecipSsim) => {
            let lift = |g: &mut Graph, v: Var| {
                let s = g.scale(v, 1.0 - RECIP_FLOOR);
                g.add_scalar(s, RECIP_FLOOR)
            };
            let p = lift(g, out);
            let t = lift(g, target);
            recip_ssim(g, p, t, &cfg.ssim)
        }
        (Task::Depth, LossKind::Silog) => {
            let p = g.add_scalar(out, SILOG_SHIFT);
            let t = g.add_scalar(target, SILOG_SHIFT);
            silog(g, p, t, cfg.silog_lambda)
        }
        (_, _) => mse(g, out, target),
    }
}

/// Validation loss and MAE, averaged per sample, in eval mode.
pub fn evaluate(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<EvalPoint> {
    if data.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let mut loss_sum = 0.0;
    let mut mae_sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let mut g = Graph::new();
        let x = g.input(data.inputs(chunk));
        let f = model.forward(&mut g, x, Mode::Eval)?;
        let target = data.targets(chunk);
        let t = g.input(target.clone());
        let l = batch_loss(&mut g, data.task, cfg, f.output, t)?;
        loss_sum += g.scalar_value(l) * chunk.len() as f64;
        let pred = g.value(f.output);
        let per = pred.len() / chunk.len();
        let abs: f64 = pred.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum();
        let scale = match data.task {
            Task::Depth => 255.0 * data.codec.step,
            Task::Wrench => 1.0,
        };
        mae_sum += scale * abs / per as f64;
    }
    let n = data.len() as f64;
    Ok(EvalPoint {
        step: 0,
        val_loss: loss_sum / n,
        val_mae: mae_sum / n,
    })
}

/// Eval-mode outputs per sample, in dataset order.
pub fn predict_all(model: &Model, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let y = model.predict(&data.inputs(chunk))?;
        let per = y.len() / chunk.len();
        out.extend(y.data.chunks_exact(per).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Depth predictions quantized back to codec pixels.
pub fn predict_depth_images(model: &Model, data: &Dataset, batch_size: usize) -> Result<Vec<GrayImage>> {
    if data.task != Task::Depth {
        return Err(Error::invalid("depth predictions need a depth dataset"));
    }
    Ok(predict_all(model, data, batch_size)?
        .into_iter()
        .map(|v| GrayImage {
            width: data.size,
            height: data.size,
            data: v.iter().map(|&y| (255.0 * y).round().clamp(0.0, 255.0) as u8).collect(),
        })
        .collect())
}

/// Starting point of a training run.
pub enum Init<'a> {
    Fresh(&'a ModelSpec),
    From(Model),
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("stem.") || name.starts_with("enc.")
}

/// Mini-batch training with seeded per-epoch shuffles; returns the
/// best-validation model.
pub fn train(init: Init, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Model, RunHistory)> {
    let mut model = match init {
        Init::Fresh(spec) => Model::new(spec.clone(), cfg.seed)?,
        Init::From(m) => m,
    };
    let task = model.spec.task;
    cfg.validate(task)?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for d in [train_set, val_set] {
        if d.task != task {
            return Err(Error::invalid("dataset task does not match the model"));
        }
        if d.size != model.spec.input_size || d.channels != model.spec.input_channels {
            return Err(Error::invalid(format!(
                "dataset frames are {}x{}x{}, the model expects {}x{}x{}",
                d.channels, d.size, d.size, model.spec.input_channels, model.spec.input_size, model.spec.input_size
            )));
        }
    }
    let start = Instant::now();
    let opt = Adam::default();
    let mut state = AdamState::new(&model);
    let freeze = cfg.freeze_encoder;
    let frozen = move |name: &str| freeze && is_encoder_param(name);
    let mut history = RunHistory {
        config: cfg.clone(),
        task,
        sensor_ids: train_set.sensor_id.split('+').map(str::to_string).collect(),
        train_loss: Vec::new(),
        evals: Vec::new(),
        best_step: None,
        convergence_step: None,
        wall_clock_s: 0.0,
    };
    let mut best: Option<(f64, Model)> = None;
    let mut record_eval = |model: &Model, step: usize, history: &mut RunHistory| -> Result<()> {
        let mut e = evaluate(model, val_set, cfg)?;
        e.step = step;
        if best.as_ref().is_none_or(|(b, _)| e.val_loss < *b) {
            best = Some((e.val_loss, model.clone()));
            history.best_step = Some(step);
        }
        history.evals.push(e);
        Ok(())
    };
    record_eval(&model, 0, &mut history)?;
    let mut step = 0usize;
    let mut lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    'epochs: for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let mut g = Graph::new();
            let x = g.input(train_set.inputs(batch));
            let f = model.forward(&mut g, x, Mode::Train)?;
            let t = g.input(train_set.targets(batch));
            let l = batch_loss(&mut g, task, cfg, f.output, t)?;
            let loss = g.scalar_value(l);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at step {}", step + 1)));
            }
            g.backward(l);
            let grads = g.param_grads();
            opt.step(&mut model, &mut state, &grads, lr, &frozen);
            drop(g);
            model.update_running(&f.bn_stats, cfg.bn_momentum);
            step += 1;
            history.train_loss.push((step, loss));
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                record_eval(&model, step, &mut history)?;
            }
        }
        if cfg.eval_every == 0 {
            record_eval(&model, step, &mut history)?;
        }
        lr *= cfg.lr_decay;
    }
    if history.evals.last().is_none_or(|e| e.step != step) {
        record_eval(&model, step, &mut history)?;
    }
    history.convergence_step = detect_convergence(&history, cfg.convergence_window, cfg.convergence_epsilon);
    history.wall_clock_s = start.elapsed().as_secs_f64();
    let best = best.map(|b| b.1).unwrap_or(model);
    Ok((best, history))
}

/// Training on the union of several sensors' sets.
pub fn pretrain_multi(spec: &ModelSpec, train_sets: &[&Dataset], val_sets: &[&Dataset], cfg: &TrainConfig) -> Result<(Model, RunHistory)> {
    if train_sets.len() < 2 {
        return Err(Error::invalid("multi-sensor pretraining needs at least two datasets"));
    }
    let train_all = Dataset::concat(train_sets)?;
    let val_all = Dataset::concat(val_sets)?;
    if val_all.ranges != train_all.ranges {
        return Err(Error::invalid("validation and training ranges differ"));
    }
    let (m, mut h) = train(Init::Fresh(spec), &train_all, &val_all, cfg)?;
    let mut ids: Vec<String> = train_sets.iter().map(|d| d.sensor_id.clone()).collect();
    ids.dedup();
    h.sensor_ids = ids;
    Ok((m, h))
}

/// Fine-tune every weight of a 3-channel model on a new sensor's set.
pub fn transfer_3dim(pretrained: &Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Model, RunHistory)> {
    if pretrained.spec.input_channels != 3 {
        return Err(Error::invalid("3-dim transfer needs a 3-channel pretrained model"));
    }
    if train_set.channels != 3 {
        return Err(Error::invalid("3-dim transfer uses the deflected frame only"));
    }
    if pretrained.spec.task != train_set.task {
        return Err(Error::invalid("pretrained task does not match the dataset"));
    }
    train(Init::From(pretrained.clone()), train_set, val_set, cfg)
}

/// Spec of the 6-channel model derived from a pretrained 3-channel one.
pub fn six_channel_spec(pretrained: &ModelSpec) -> ModelSpec {
    pretrained.clone().with_input_channels(6)
}

/// Fresh 6→4→3 adapter in front of the pretrained encoder and head.
pub fn transfer_6dim_init(pretrained: &Model, seed: u64) -> Result<Model> {
    if pretrained.spec.input_channels != 3 {
        return Err(Error::invalid("6-dim transfer starts from a 3-channel pretrained model"));
    }
    let mut m = Model::new(six_channel_spec(&pretrained.spec), seed)?;
    let copied = m.load_matching(pretrained);
    if copied != pretrained.params.len() {
        return Err(Error::invalid("pretrained parameters do not fit the 6-channel model"));
    }
    Ok(m)
}

/// Fine-tune with the undeflected reference concatenated to every frame.
pub fn transfer_6dim(pretrained: &Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Model, RunHistory)> {
    if train_set.channels != 6 || val_set.channels != 6 {
        return Err(Error::invalid("6-dim transfer needs datasets with the reference frame"));
    }
    if pretrained.spec.task != train_set.task {
        return Err(Error::invalid("pretrained task does not match the dataset"));
    }
    let init = transfer_6dim_init(pretrained, cfg.seed)?;
    train(Init::From(init), train_set, val_set, cfg)
}

/// Earliest validation step where the forward moving average over `window`
/// points is within `epsilon` (relative) of the run minimum and stays there
/// for the next `window` averages.
pub fn detect_convergence(history: &RunHistory, window: usize, epsilon: f64) -> Option<usize> {
    let losses: Vec<f64> = history.evals.iter().map(|e| e.val_loss).collect();
    let steps: Vec<usize> = history.evals.iter().map(|e| e.step).collect();
    convergence_index(&losses, window, epsilon).map(|i| steps[i])
}

pub fn convergence_index(losses: &[f64], window: usize, epsilon: f64) -> Option<usize> {
    if losses.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(losses.len());
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = min + epsilon * min.abs();
    let ma: Vec<f64> = losses.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect();
    let ok: Vec<bool> = ma.iter().map(|&m| m <= bound).collect();
    (0..ma.len()).find(|&i| ok[i..(i + w).min(ma.len())].iter().all(|&b| b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_index(&[2.0; 8], 3, 0.02), Some(0));
        let dec = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(convergence_index(&dec, 3, 0.02), Some(4));
        let osc: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { 1.25 }).collect();
        assert_eq!(convergence_index(&osc, 2, 0.02), None);
        assert_eq!(convergence_index(&[], 3, 0.02), None);
    }

    #[test]
    fn steps_per_epoch_arithmetic() {
        let c = TrainConfig::depth();
        assert_eq!(c.steps_per_epoch(80), 10);
        assert_eq!(c.steps_per_epoch(81), 11);
        assert_eq!(c.steps_per_epoch(200), 25);
    }

    #[test]
    fn loss_must_fit_task() {
        let mut c = TrainConfig::depth();
        c.loss = LossKind::Mse;
        assert!(c.validate(Task::Depth).is_err());
        assert!(TrainConfig::wrench().validate(Task::Wrench).is_ok());
    }
}
