use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::loss::{mse, silog};
use super::model::{Mode, Model, ModelSpec, Task};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients below this magnitude are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;
/// Central-difference step used by the checks.
pub const GRAD_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Perturbations that flipped a rectifier and were excluded.
    pub kink_skips: usize,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Central-difference check of `loss(params)` against the tape.
///
/// `build` maps parameter leaves to a scalar loss and the activation pattern
/// of every rectifier; perturbations that change the pattern are skipped.
pub fn grad_check_fn<F>(params: &mut [Tensor], eps: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> (Var, Vec<bool>),
{
    let eval = |params: &[Tensor]| -> (f64, Vec<bool>, Graph, Vec<Var>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, t)| g.param(i, t)).collect();
        let (loss, pattern) = build(&mut g, &vars);
        let v = g.scalar_value(loss);
        g.backward(loss);
        (v, pattern, g, vars)
    };
    let (_, base_pattern, g, vars) = eval(params);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(v, t)| g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(g);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        kink_skips: 0,
    };
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = params[p].data[k];
            params[p].data[k] = orig + eps;
            let (lp, pp, _, _) = eval(params);
            params[p].data[k] = orig - eps;
            let (lm, pm, _, _) = eval(params);
            params[p].data[k] = orig;
            if pp != base_pattern || pm != base_pattern {
                report.kink_skips += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            report.max_rel_error = report.max_rel_error.max(rel_error(analytic[p][k], numeric));
            report.checked += 1;
        }
    }
    report
}

/// Check a model spec (meant for tiny ones) with silog (depth) or MSE
/// (wrench) on a seeded batch of two.
pub fn grad_check(spec: &ModelSpec, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let model = Model::new(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let shape = model.input_shape(2);
    let n: usize = shape.iter().product();
    let input = Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect());
    let target = match spec.task {
        Task::Depth => {
            let s = spec.input_size;
            Tensor::new(vec![2, 1, s, s], (0..2 * s * s).map(|_| rng.random_range(0.05..0.95)).collect())
        }
        Task::Wrench => Tensor::new(vec![2, 6], (0..12).map(|_| rng.random_range(0.0..1.0)).collect()),
    };
    let mut params: Vec<Tensor> = model.params.iter().map(|p| p.tensor.clone()).collect();
    let task = spec.task;
    let report = grad_check_fn(&mut params, eps, |g, vars| {
        debug_assert_eq!(vars.len(), model.params.len());
        let x = g.input(input.clone());
        // parameter leaves are keyed by index, so the model binds to `vars`
        let f = model.forward(g, x, Mode::Train).expect("valid tiny model");
        let t = g.input(target.clone());
        let loss = match task {
            Task::Depth => silog(g, f.output, t, 0.85).expect("positive sigmoid output"),
            Task::Wrench => mse(g, f.output, t).expect("matching shapes"),
        };
        (loss, g.relu_pattern())
    });
    Ok(report)
}
