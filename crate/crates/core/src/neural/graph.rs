//! Reverse-mode tape. Every op stores what its backward pass needs; the
//! backward sweep visits nodes in reverse creation order.

use std::collections::HashMap;

use rayon::prelude::*;

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    AvgPool2(Var),
    Upsample(Var),
    Concat(Var, Var),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Recip(Var),
    Mean(Var),
    Center(Var),
    Blur { x: Var, kernel: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

pub const BN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for parameter `id`; repeated requests share one node.
    pub fn param(&mut self, id: usize, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(t.clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let geom = ConvGeom { stride, pad };
        let xv = self.value(x);
        let wv = self.value(w);
        let bias = b.map(|b| self.value(b).data.as_slice());
        let out = conv_forward(xv, wv, bias, geom);
        self.push(out, Op::Conv { x, w, b, geom })
    }

    /// Per-channel normalization. With `running = None` batch statistics are
    /// used and returned; otherwise the given `(mean, var)` are applied.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: Option<(&[f64], &[f64])>) -> (Var, Option<BnStats>) {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let m = (n * hw) as f64;
        let (mean, var_b, stats) = match running {
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += xv.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for i in 0..n {
                        q += xv.data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                let unbiased = var.iter().map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v }).collect();
                let stats = BnStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            Some((rm, rv)) => (rm.to_vec(), rv.to_vec(), None),
        };
        let inv_std: Vec<f64> = var_b.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = &self.value(gamma).data;
        let be = &self.value(beta).data;
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for k in base..base + hw {
                    let xh = (xv.data[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    out[k] = g[ch] * xh + be[ch];
                }
            }
        }
        let shape = xv.shape.clone();
        let batch_stats = stats.is_some();
        let v = self.push(
            Tensor::new(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        );
        (v, stats)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape.clone(), xv.data.iter().map(|&v| f(v)).collect());
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.map(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, |v| v + s, Op::AddScalar(x))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape, bv.shape, "elementwise shape mismatch");
        let out = Tensor::new(av.shape.clone(), av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect());
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data.iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// `x - mean(x)`.
    pub fn center(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data.iter().sum::<f64>() / xv.len() as f64;
        let out = Tensor::new(xv.shape.clone(), xv.data.iter().map(|v| v - m).collect());
        self.push(out, Op::Center(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv.data[p * h * w..(p + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let s = src[2 * i * w + 2 * j]
                        + src[2 * i * w + 2 * j + 1]
                        + src[(2 * i + 1) * w + 2 * j]
                        + src[(2 * i + 1) * w + 2 * j + 1];
                    out[p * ho * wo + i * wo + j] = 0.25 * s;
                }
            }
        }
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::AvgPool2(x))
    }

    /// Bilinear resize (half-pixel centers) to `ho x wo`.
    pub fn upsample(&mut self, x: Var, ho: usize, wo: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let ry = resample_taps(h, ho);
        let rx = resample_taps(w, wo);
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv.data[p * h * w..(p + 1) * h * w];
            for (i, &(y0, y1, fy)) in ry.iter().enumerate() {
                for (j, &(x0, x1, fx)) in rx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    out[p * ho * wo + i * wo + j] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::Upsample(x))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca, h, w) = av.dims4();
        let (nb, cb, hb, wb) = bv.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&av.data[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv.data[i * cb * hw..(i + 1) * cb * hw]);
        }
        self.push(Tensor::new(vec![n, ca + cb, h, w], out), Op::Concat(a, b))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let hw = h * w;
        let out = (0..n * c)
            .map(|p| xv.data[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::new(vec![n, c], out), Op::GlobalAvgPool(x))
    }

    /// `x [n, i] -> x W^T + b` with `W [o, i]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, i) = (xv.shape[0], xv.shape[1]);
        let o = wv.shape[0];
        assert_eq!(wv.shape[1], i, "linear input width mismatch");
        let bv = &self.value(b).data;
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            out[r * o..(r + 1) * o].copy_from_slice(bv);
        }
        gemm(n, i, o, &xv.data, false, &wv.data, true, &mut out, 1.0);
        self.push(Tensor::new(vec![n, o], out), Op::Linear { x, w, b })
    }

    /// Separable "valid" filtering of every channel with a 1-D kernel.
    pub fn blur(&mut self, x: Var, kernel: &[f64]) -> Var {
        let xv = self.value(x);
        let out = blur_forward(xv, kernel);
        self.push(
            out,
            Op::Blur {
                x,
                kernel: kernel.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = self.grads[idx].take() else { continue };
            let contributions = self.node_backward(idx, &gy);
            // only leaves keep their gradient; intermediates are released
            if matches!(self.nodes[idx].op, Op::Leaf | Op::Param) {
                self.grads[idx] = Some(gy);
            }
            for (v, g) in contributions {
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }
    }

    /// Sign pattern of every rectifier and absolute-value input.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) | Op::Abs(x) = n.op {
                out.extend(self.value(x).data.iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter leaf, keyed by parameter id.
    pub fn param_grads(&self) -> Vec<(usize, &[f64])> {
        let mut out: Vec<(usize, &[f64])> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|p| p.0);
        out
    }

    fn node_backward(&self, idx: usize, gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = &node.value.data;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = conv_backward(val(*x), val(*w), gy, *geom);
                let mut out = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    out.push((*b, db));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = val(*x).dims4();
                let hw = h * w;
                let g = &val(*gamma).data;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; gy.len()];
                for ch in 0..c {
                    let mut sd = 0.0;
                    let mut sdx = 0.0;
                    for i in 0..n {
                        let base = (i * c + ch) * hw;
                        for k in base..base + hw {
                            sd += gy[k];
                            sdx += gy[k] * xhat[k];
                        }
                    }
                    dgamma[ch] = sdx;
                    dbeta[ch] = sd;
                    let m = (n * hw) as f64;
                    for i in 0..n {
                        let base = (i * c + ch) * hw;
                        for k in base..base + hw {
                            dx[k] = if *batch_stats {
                                g[ch] * inv_std[ch] * (gy[k] - sd / m - xhat[k] * sdx / m)
                            } else {
                                g[ch] * inv_std[ch] * gy[k]
                            };
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu(x) => {
                let xv = &val(*x).data;
                vec![(*x, gy.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Sigmoid(x) => vec![(*x, gy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())],
            Op::Ln(x) => vec![(*x, gy.iter().zip(&val(*x).data).map(|(g, v)| g / v).collect())],
            Op::Sqrt(x) => vec![(
                *x,
                gy.iter().zip(y).map(|(g, s)| if *s > 0.0 { 0.5 * g / s } else { 0.0 }).collect(),
            )],
            Op::Abs(x) => vec![(
                *x,
                gy.iter().zip(&val(*x).data).map(|(g, v)| g * sign(*v)).collect(),
            )],
            Op::Recip(x) => vec![(*x, gy.iter().zip(y).map(|(g, r)| -g * r * r).collect())],
            Op::Scale(x, s) => vec![(*x, gy.iter().map(|g| g * s).collect())],
            Op::AddScalar(x) => vec![(*x, gy.to_vec())],
            Op::Add(a, b) => vec![(*a, gy.to_vec()), (*b, gy.to_vec())],
            Op::Sub(a, b) => vec![(*a, gy.to_vec()), (*b, gy.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                vec![
                    (*a, gy.iter().zip(bv).map(|(g, v)| g * v).collect()),
                    (*b, gy.iter().zip(av).map(|(g, v)| g * v).collect()),
                ]
            }
            Op::Div(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                vec![
                    (*a, gy.iter().zip(bv).map(|(g, v)| g / v).collect()),
                    (
                        *b,
                        gy.iter().zip(av.iter().zip(bv)).map(|(g, (x, v))| -g * x / (v * v)).collect(),
                    ),
                ]
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                vec![(*x, vec![gy[0] / n as f64; n])]
            }
            Op::Center(x) => {
                let m = gy.iter().sum::<f64>() / gy.len() as f64;
                vec![(*x, gy.iter().map(|g| g - m).collect())]
            }
            Op::AvgPool2(x) => {
                let (n, c, h, w) = val(*x).dims4();
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let g = 0.25 * gy[p * ho * wo + i * wo + j];
                            let base = p * h * w;
                            dx[base + 2 * i * w + 2 * j] += g;
                            dx[base + 2 * i * w + 2 * j + 1] += g;
                            dx[base + (2 * i + 1) * w + 2 * j] += g;
                            dx[base + (2 * i + 1) * w + 2 * j + 1] += g;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Upsample(x) => {
                let (n, c, h, w) = val(*x).dims4();
                let (_, _, ho, wo) = node.value.dims4();
                let ry = resample_taps(h, ho);
                let rx = resample_taps(w, wo);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for (i, &(y0, y1, fy)) in ry.iter().enumerate() {
                        for (j, &(x0, x1, fx)) in rx.iter().enumerate() {
                            let g = gy[p * ho * wo + i * wo + j];
                            d[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                            d[y0 * w + x1] += g * (1.0 - fy) * fx;
                            d[y1 * w + x0] += g * fy * (1.0 - fx);
                            d[y1 * w + x1] += g * fy * fx;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = val(*a).dims4();
                let cb = val(*b).shape[1];
                let hw = h * w;
                let mut da = Vec::with_capacity(n * ca * hw);
                let mut db = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    da.extend_from_slice(&gy[base..base + ca * hw]);
                    db.extend_from_slice(&gy[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = val(*x).dims4();
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for p in 0..n * c {
                    let g = gy[p] / hw as f64;
                    dx[p * hw..(p + 1) * hw].iter_mut().for_each(|d| *d = g);
                }
                vec![(*x, dx)]
            }
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, i) = (xv.shape[0], xv.shape[1]);
                let o = wv.shape[0];
                let mut dx = vec![0.0; n * i];
                gemm(n, o, i, gy, false, &wv.data, false, &mut dx, 0.0);
                let mut dw = vec![0.0; o * i];
                gemm(o, n, i, gy, true, &xv.data, false, &mut dw, 0.0);
                let mut db = vec![0.0; o];
                for r in 0..n {
                    for k in 0..o {
                        db[k] += gy[r * o + k];
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Blur { x, kernel } => vec![(*x, blur_backward(val(*x), kernel, gy))],
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Source taps `(i0, i1, frac)` for each output index of a bilinear resize.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn conv_out(h: usize, k: usize, g: ConvGeom) -> usize {
    (h + 2 * g.pad - k) / g.stride + 1
}

fn is_pointwise(k: usize, g: ConvGeom) -> bool {
    k == 1 && g.stride == 1 && g.pad == 0
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * k * k * ho * wo];
    let hw_o = ho * wo;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * hw_o..(row + 1) * hw_o];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &x[(ch * h + ih as usize) * w..(ch * h + ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[oh * wo + ow] = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, g: ConvGeom, ho: usize, wo: usize) -> Vec<f64> {
    let mut x = vec![0.0; c * h * w];
    let hw_o = ho * wo;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * hw_o..(row + 1) * hw_o];
                for oh in 0..ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ch * h + ih as usize) * w..(ch * h + ih as usize + 1) * w];
                    for ow in 0..wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward(x: &Tensor, w: &Tensor, bias: Option<&[f64]>, g: ConvGeom) -> Tensor {
    let (n, c, h, wd) = x.dims4();
    let (o, ci, k, k2) = w.dims4();
    assert_eq!((ci, k), (c, k2), "conv weight {:?} does not fit input {:?}", w.shape, x.shape);
    let (ho, wo) = (conv_out(h, k, g), conv_out(wd, k, g));
    let per_in = c * h * wd;
    let per_out = o * ho * wo;
    let ckk = c * k * k;
    let samples: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xs = &x.data[i * per_in..(i + 1) * per_in];
            let mut out = vec![0.0; per_out];
            if let Some(b) = bias {
                for (oc, bv) in b.iter().enumerate() {
                    out[oc * ho * wo..(oc + 1) * ho * wo].iter_mut().for_each(|v| *v = *bv);
                }
            }
            if is_pointwise(k, g) {
                gemm(o, ckk, ho * wo, &w.data, false, xs, false, &mut out, 1.0);
            } else {
                let cols = im2col(xs, c, h, wd, k, g, ho, wo);
                gemm(o, ckk, ho * wo, &w.data, false, &cols, false, &mut out, 1.0);
            }
            out
        })
        .collect();
    Tensor::new(vec![n, o, ho, wo], samples.concat())
}

fn conv_backward(x: &Tensor, w: &Tensor, gy: &[f64], g: ConvGeom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let (ho, wo) = (conv_out(h, k, g), conv_out(wd, k, g));
    let per_in = c * h * wd;
    let per_out = o * ho * wo;
    let ckk = c * k * k;
    let hw_o = ho * wo;
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xs = &x.data[i * per_in..(i + 1) * per_in];
            let gs = &gy[i * per_out..(i + 1) * per_out];
            let mut dw = vec![0.0; o * ckk];
            let mut dcols = vec![0.0; ckk * hw_o];
            gemm(ckk, o, hw_o, &w.data, true, gs, false, &mut dcols, 0.0);
            let dx = if is_pointwise(k, g) {
                gemm(o, hw_o, ckk, gs, false, xs, true, &mut dw, 0.0);
                dcols
            } else {
                let cols = im2col(xs, c, h, wd, k, g, ho, wo);
                gemm(o, hw_o, ckk, gs, false, &cols, true, &mut dw, 0.0);
                col2im(&dcols, c, h, wd, k, g, ho, wo)
            };
            let db = (0..o).map(|oc| gs[oc * hw_o..(oc + 1) * hw_o].iter().sum()).collect();
            (dx, dw, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(n * per_in);
    let mut dw = vec![0.0; o * ckk];
    let mut db = vec![0.0; o];
    // fixed sample order keeps the reduction schedule independent
    for (pdx, pdw, pdb) in parts {
        dx.extend_from_slice(&pdx);
        dw.iter_mut().zip(&pdw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&pdb).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

fn blur_forward(x: &Tensor, kernel: &[f64]) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let k = kernel.len();
    assert!(h >= k && w >= k, "image smaller than blur window");
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; n * c * ho * wo];
    let mut tmp = vec![0.0; h * wo];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for j in 0..wo {
                tmp[r * wo + j] = (0..k).map(|t| kernel[t] * src[r * w + j + t]).sum();
            }
        }
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                dst[i * wo + j] = (0..k).map(|t| kernel[t] * tmp[(i + t) * wo + j]).sum();
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

fn blur_backward(x: &Tensor, kernel: &[f64], gy: &[f64]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4();
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut dx = vec![0.0; n * c * h * w];
    let mut tmp = vec![0.0; h * wo];
    for p in 0..n * c {
        tmp.iter_mut().for_each(|v| *v = 0.0);
        let g = &gy[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                for t in 0..k {
                    tmp[(i + t) * wo + j] += kernel[t] * g[i * wo + j];
                }
            }
        }
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for j in 0..wo {
                for t in 0..k {
                    d[r * w + j + t] += kernel[t] * tmp[r * wo + j];
                }
            }
        }
    }
    dx
}
