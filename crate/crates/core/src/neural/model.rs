use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{BnStats, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Depth,
    Wrench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub layers: usize,
    pub growth: usize,
}

/// Dense encoder with either a skip-connected depth decoder or a fully
/// connected wrench head. Six-channel inputs pass through a 6→4→3 adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: Task,
    pub input_channels: usize,
    pub input_size: usize,
    pub kernel: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    pub compression: f64,
    /// Decoder widths, index 0 at full resolution. One per encoder stage.
    pub decoder_channels: Vec<usize>,
    /// Fully connected widths after global pooling; last must be 6.
    pub head: Vec<usize>,
    pub zero_init_output: bool,
}

pub const ADAPTER_CHANNELS: [usize; 3] = [6, 4, 3];

impl ModelSpec {
    /// 64x64, four stages with growth 12.
    pub fn desk(task: Task) -> ModelSpec {
        ModelSpec {
            task,
            input_channels: 3,
            input_size: 64,
            kernel: 3,
            stem_channels: 16,
            stages: vec![StageSpec { layers: 2, growth: 12 }; 4],
            compression: 0.5,
            decoder_channels: vec![8, 16, 24, 32],
            head: vec![1000, 500, 6],
            zero_init_output: true,
        }
    }

    /// A few thousand parameters on 8x8 inputs, for gradient checks.
    pub fn tiny(task: Task) -> ModelSpec {
        ModelSpec {
            task,
            input_channels: 3,
            input_size: 8,
            kernel: 3,
            stem_channels: 4,
            stages: vec![StageSpec { layers: 1, growth: 3 }; 2],
            compression: 0.5,
            decoder_channels: vec![3, 4],
            head: vec![12, 6],
            zero_init_output: false,
        }
    }

    pub fn with_input_channels(mut self, c: usize) -> ModelSpec {
        self.input_channels = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 3 && self.input_channels != 6 {
            return Err(Error::invalid("input channels must be 3 or 6"));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid("encoder needs at least one stage"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        let down = 1usize << self.stages.len();
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::invalid(format!("input size must be a multiple of {down}")));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::invalid("compression must lie in (0, 1]"));
        }
        if self.stages.iter().any(|s| s.layers == 0 || s.growth == 0) || self.stem_channels == 0 {
            return Err(Error::invalid("stage layers, growth and stem width must be positive"));
        }
        match self.task {
            Task::Depth => {
                if self.decoder_channels.len() != self.stages.len() {
                    return Err(Error::invalid("decoder stage count must equal encoder stage count"));
                }
                if self.decoder_channels.contains(&0) {
                    return Err(Error::invalid("decoder widths must be positive"));
                }
            }
            Task::Wrench => {
                if self.head.last() != Some(&6) || self.head.contains(&0) {
                    return Err(Error::invalid("wrench head must end in 6 outputs"));
                }
            }
        }
        Ok(())
    }

    /// Channel counts: stage outputs (skips) and the final encoder width.
    fn encoder_channels(&self) -> (Vec<usize>, usize) {
        let mut c = self.stem_channels;
        let mut skips = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            c += s.layers * s.growth;
            skips.push(c);
            if i + 1 < self.stages.len() {
                c = transition_width(c, self.compression);
            }
        }
        (skips, c)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let k = self.kernel;
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let bn = |c: usize| 2 * c;
        let lin = |i: usize, o: usize| o * i + o;
        let mut total = 0;
        if self.input_channels == 6 {
            total += adapter_param_count(k);
        }
        total += conv(3, self.stem_channels, k) + bn(self.stem_channels);
        let mut c = self.stem_channels;
        for (i, s) in self.stages.iter().enumerate() {
            for _ in 0..s.layers {
                total += bn(c) + conv(c, s.growth, k);
                c += s.growth;
            }
            if i + 1 < self.stages.len() {
                let t = transition_width(c, self.compression);
                total += bn(c) + conv(c, t, 1);
                c = t;
            }
        }
        total += bn(c);
        match self.task {
            Task::Depth => {
                let (skips, _) = self.encoder_channels();
                let s = self.stages.len();
                let mut prev = c;
                for j in (1..s).rev() {
                    let d = self.decoder_channels[j];
                    total += conv(prev + skips[j - 1], d, k) + bn(d);
                    prev = d;
                }
                let d0 = self.decoder_channels[0];
                total += conv(prev, d0, k) + bn(d0) + conv(d0, 1, k);
            }
            Task::Wrench => {
                let mut prev = c;
                for &w in &self.head {
                    total += lin(prev, w);
                    prev = w;
                }
            }
        }
        total
    }
}

/// Parameters of the 6→4→3 adapter (convolutions with bias, batch-norm
/// scale and shift).
pub fn adapter_param_count(kernel: usize) -> usize {
    let kk = kernel * kernel;
    (6 * 4 * kk + 4) + 2 * 4 + (4 * 3 * kk + 3) + 2 * 3
}

fn transition_width(c: usize, compression: f64) -> usize {
    ((c as f64 * compression).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics.
    Eval,
}

/// Output of a forward pass plus the batch-norm statistics it observed.
pub struct Forward {
    pub output: Var,
    pub bn_stats: Vec<(String, BnStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<NamedTensor>,
    /// Batch-norm running means and variances.
    pub buffers: Vec<NamedTensor>,
    index: HashMap<String, usize>,
    buffer_index: HashMap<String, usize>,
}

#[derive(Clone, Copy)]
enum Init {
    Kaiming(usize),
    Zero,
    One,
}

struct Layout {
    params: Vec<(String, Vec<usize>, Init)>,
    buffers: Vec<(String, usize)>,
}

impl Layout {
    fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize, zero: bool) {
        let init = if zero { Init::Zero } else { Init::Kaiming(ci * k * k) };
        self.params.push((format!("{name}.w"), vec![co, ci, k, k], init));
        self.params.push((format!("{name}.b"), vec![co], Init::Zero));
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.params.push((format!("{name}.gamma"), vec![c], Init::One));
        self.params.push((format!("{name}.beta"), vec![c], Init::Zero));
        self.buffers.push((name.to_string(), c));
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) {
        self.params.push((format!("{name}.w"), vec![o, i], Init::Kaiming(i)));
        self.params.push((format!("{name}.b"), vec![o], Init::Zero));
    }
}

fn layout(spec: &ModelSpec) -> Layout {
    let mut l = Layout {
        params: Vec::new(),
        buffers: Vec::new(),
    };
    let k = spec.kernel;
    if spec.input_channels == 6 {
        l.conv("adapter.0.conv", 6, 4, k, false);
        l.bn("adapter.0.bn", 4);
        l.conv("adapter.1.conv", 4, 3, k, false);
        l.bn("adapter.1.bn", 3);
    }
    l.conv("stem.conv", 3, spec.stem_channels, k, false);
    l.bn("stem.bn", spec.stem_channels);
    let mut c = spec.stem_channels;
    for (i, s) in spec.stages.iter().enumerate() {
        for j in 0..s.layers {
            l.bn(&format!("enc.{i}.{j}.bn"), c);
            l.conv(&format!("enc.{i}.{j}.conv"), c, s.growth, k, false);
            c += s.growth;
        }
        if i + 1 < spec.stages.len() {
            let t = transition_width(c, spec.compression);
            l.bn(&format!("enc.{i}.trans.bn"), c);
            l.conv(&format!("enc.{i}.trans.conv"), c, t, 1, false);
            c = t;
        }
    }
    l.bn("enc.norm", c);
    match spec.task {
        Task::Depth => {
            let (skips, _) = spec.encoder_channels();
            let mut prev = c;
            for j in (1..spec.stages.len()).rev() {
                let d = spec.decoder_channels[j];
                l.conv(&format!("dec.{j}.conv"), prev + skips[j - 1], d, k, false);
                l.bn(&format!("dec.{j}.bn"), d);
                prev = d;
            }
            let d0 = spec.decoder_channels[0];
            l.conv("dec.0.conv", prev, d0, k, false);
            l.bn("dec.0.bn", d0);
            l.conv("dec.out", d0, 1, k, spec.zero_init_output);
        }
        Task::Wrench => {
            let mut prev = c;
            for (j, &w) in spec.head.iter().enumerate() {
                l.linear(&format!("head.{j}"), prev, w);
                prev = w;
            }
        }
    }
    l
}

struct Ctx<'a> {
    model: &'a Model,
    g: &'a mut Graph,
    mode: Mode,
    stats: Vec<(String, BnStats)>,
}

impl Ctx<'_> {
    fn p(&mut self, name: &str) -> Var {
        let id = self.model.index[name];
        self.g.param(id, &self.model.params[id].tensor)
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        let k = self.g.value(w).shape[2];
        self.g.conv2d(x, w, Some(b), stride, k / 2)
    }

    fn bn(&mut self, name: &str, x: Var) -> Var {
        let gamma = self.p(&format!("{name}.gamma"));
        let beta = self.p(&format!("{name}.beta"));
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.g.batch_norm(x, gamma, beta, None);
                self.stats.push((name.to_string(), stats.expect("batch statistics")));
                y
            }
            Mode::Eval => {
                let b = &self.model.buffers[self.model.buffer_index[name]].tensor.data;
                let c = b.len() / 2;
                let (y, _) = self.g.batch_norm(x, gamma, beta, Some((&b[..c], &b[c..])));
                y
            }
        }
    }

    fn bn_relu(&mut self, name: &str, x: Var) -> Var {
        let y = self.bn(name, x);
        self.g.relu(y)
    }

    fn linear(&mut self, name: &str, x: Var) -> Var {
        let w = self.p(&format!("{name}.w"));
        let b = self.p(&format!("{name}.b"));
        self.g.linear(x, w, b)
    }
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let l = layout(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<NamedTensor> = l
            .params
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Zero => vec![0.0; n],
                    Init::One => vec![1.0; n],
                    Init::Kaiming(fan_in) => {
                        let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                };
                NamedTensor {
                    name,
                    tensor: Tensor::new(shape, data),
                }
            })
            .collect();
        // running mean (zeros) followed by running variance (ones)
        let buffers = l
            .buffers
            .into_iter()
            .map(|(name, c)| {
                let mut data = vec![0.0; c];
                data.extend(std::iter::repeat_n(1.0, c));
                NamedTensor {
                    name,
                    tensor: Tensor::new(vec![2, c], data),
                }
            })
            .collect();
        Ok(Model::from_parts(spec, params, buffers))
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<NamedTensor>, buffers: Vec<NamedTensor>) -> Model {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        let buffer_index = buffers.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Model {
            spec,
            params,
            buffers,
            index,
            buffer_index,
        }
    }

    /// Checks that stored tensors match the layout of `self.spec`.
    pub fn check_layout(&self) -> Result<()> {
        let l = layout(&self.spec);
        if l.params.len() != self.params.len() || l.buffers.len() != self.buffers.len() {
            return Err(Error::Format("parameter table does not match the model spec".into()));
        }
        for ((name, shape, _), p) in l.params.iter().zip(&self.params) {
            if *name != p.name || *shape != p.tensor.shape {
                return Err(Error::Format(format!("parameter {} does not match the model spec", p.name)));
            }
        }
        for ((name, c), b) in l.buffers.iter().zip(&self.buffers) {
            if *name != b.name || b.tensor.shape != vec![2, *c] {
                return Err(Error::Format(format!("buffer {} does not match the model spec", b.name)));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.spec.input_channels, self.spec.input_size, self.spec.input_size]
    }

    /// Builds the forward graph for an `[n, c, s, s]` input.
    pub fn forward(&self, g: &mut Graph, input: Var, mode: Mode) -> Result<Forward> {
        let shape = &g.value(input).shape;
        if shape.len() != 4 || shape[1..] != self.input_shape(1)[1..] {
            return Err(Error::invalid(format!(
                "input shape {:?} does not match the model ({} x {} x {})",
                shape, self.spec.input_channels, self.spec.input_size, self.spec.input_size
            )));
        }
        if shape[0] == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let spec = &self.spec;
        let mut cx = Ctx {
            model: self,
            g,
            mode,
            stats: Vec::new(),
        };
        let mut x = input;
        if spec.input_channels == 6 {
            for a in 0..2 {
                x = cx.conv(&format!("adapter.{a}.conv"), x, 1);
                x = cx.bn_relu(&format!("adapter.{a}.bn"), x);
            }
        }
        x = cx.conv("stem.conv", x, 2);
        x = cx.bn_relu("stem.bn", x);
        let mut skips = Vec::new();
        for (i, s) in spec.stages.iter().enumerate() {
            for j in 0..s.layers {
                let h = cx.bn_relu(&format!("enc.{i}.{j}.bn"), x);
                let h = cx.conv(&format!("enc.{i}.{j}.conv"), h, 1);
                x = cx.g.concat(x, h);
            }
            skips.push(x);
            if i + 1 < spec.stages.len() {
                let h = cx.bn_relu(&format!("enc.{i}.trans.bn"), x);
                let h = cx.conv(&format!("enc.{i}.trans.conv"), h, 1);
                x = cx.g.avg_pool2(h);
            }
        }
        x = cx.bn_relu("enc.norm", x);
        let output = match spec.task {
            Task::Depth => {
                for j in (1..spec.stages.len()).rev() {
                    let skip = skips[j - 1];
                    let (_, _, h, w) = cx.g.value(skip).dims4();
                    let up = cx.g.upsample(x, h, w);
                    let cat = cx.g.concat(up, skip);
                    let y = cx.conv(&format!("dec.{j}.conv"), cat, 1);
                    x = cx.bn_relu(&format!("dec.{j}.bn"), y);
                }
                let s = spec.input_size;
                let up = cx.g.upsample(x, s, s);
                let y = cx.conv("dec.0.conv", up, 1);
                let y = cx.bn_relu("dec.0.bn", y);
                let y = cx.conv("dec.out", y, 1);
                cx.g.sigmoid(y)
            }
            Task::Wrench => {
                let mut h = cx.g.global_avg_pool(x);
                for j in 0..spec.head.len() {
                    h = cx.linear(&format!("head.{j}"), h);
                    if j + 1 < spec.head.len() {
                        h = cx.g.relu(h);
                    }
                }
                h
            }
        };
        Ok(Forward {
            output,
            bn_stats: cx.stats,
        })
    }

    /// Inference with running statistics.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let f = self.forward(&mut g, x, Mode::Eval)?;
        Ok(g.value(f.output).clone())
    }

    /// Exponential update of running statistics.
    pub fn update_running(&mut self, stats: &[(String, BnStats)], momentum: f64) {
        for (name, s) in stats {
            let Some(&i) = self.buffer_index.get(name) else { continue };
            let buf = &mut self.buffers[i].tensor.data;
            let c = s.mean.len();
            for ch in 0..c {
                buf[ch] = (1.0 - momentum) * buf[ch] + momentum * s.mean[ch];
                buf[c + ch] = (1.0 - momentum) * buf[c + ch] + momentum * s.var[ch];
            }
        }
    }

    /// Copy every same-named, same-shaped tensor from `other`; returns the
    /// number of parameters copied.
    pub fn load_matching(&mut self, other: &Model) -> usize {
        let mut copied = 0;
        for p in &other.params {
            if let Some(&i) = self.index.get(&p.name) {
                if self.params[i].tensor.shape == p.tensor.shape {
                    self.params[i].tensor = p.tensor.clone();
                    copied += 1;
                }
            }
        }
        for b in &other.buffers {
            if let Some(&i) = self.buffer_index.get(&b.name) {
                if self.buffers[i].tensor.shape == b.tensor.shape {
                    self.buffers[i].tensor = b.tensor.clone();
                }
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_param_count_by_hand() {
        // stem conv 3->4 (k3) + bn; stage0: bn4 + conv 4->3; trans bn7 + conv1x1 7->3;
        // stage1: bn3 + conv 3->3; norm bn6; head 6->12->6
        let hand = (4 * 3 * 9 + 4) + 8 + 8 + (3 * 4 * 9 + 3) + 14 + (3 * 7 + 3) + 6 + (3 * 3 * 9 + 3) + 12 + (12 * 6 + 12) + (6 * 12 + 6);
        let spec = ModelSpec::tiny(Task::Wrench);
        assert_eq!(spec.param_count(), hand);
        assert_eq!(Model::new(spec, 0).unwrap().param_count(), hand);
    }

    #[test]
    fn formula_matches_built_models() {
        for task in [Task::Depth, Task::Wrench] {
            for c in [3, 6] {
                for spec in [ModelSpec::tiny(task), ModelSpec::desk(task)] {
                    let spec = spec.with_input_channels(c);
                    let m = Model::new(spec.clone(), 1).unwrap();
                    assert_eq!(m.param_count(), spec.param_count());
                    m.check_layout().unwrap();
                }
            }
        }
    }

    #[test]
    fn adapter_closed_form() {
        assert_eq!(adapter_param_count(3), 6 * 4 * 9 + 4 + 4 * 3 * 9 + 3 + 2 * (4 + 3));
        let base = ModelSpec::tiny(Task::Depth);
        assert_eq!(
            base.clone().with_input_channels(6).param_count(),
            base.param_count() + adapter_param_count(3)
        );
    }

    #[test]
    fn output_shapes() {
        let d = Model::new(ModelSpec::desk(Task::Depth), 0).unwrap();
        let x = Tensor::filled(d.input_shape(1), 0.3);
        let y = d.predict(&x).unwrap();
        assert_eq!(y.shape, vec![1, 1, 64, 64]);
        // zero-initialized output layer gives sigmoid(0)
        assert!(y.data.iter().all(|&v| v == 0.5));
        let w = Model::new(ModelSpec::tiny(Task::Wrench), 0).unwrap();
        let y = w.predict(&Tensor::filled(w.input_shape(3), 0.1)).unwrap();
        assert_eq!(y.shape, vec![3, 6]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let m = Model::new(ModelSpec::tiny(Task::Depth), 0).unwrap();
        assert!(m.predict(&Tensor::zeros(vec![1, 6, 8, 8])).is_err());
        assert!(m.predict(&Tensor::zeros(vec![1, 3, 16, 16])).is_err());
        let mut bad = ModelSpec::tiny(Task::Depth);
        bad.decoder_channels.pop();
        assert!(bad.validate().is_err());
        let mut bad = ModelSpec::tiny(Task::Wrench);
        bad.head = vec![10, 5];
        assert!(bad.validate().is_err());
    }
}
