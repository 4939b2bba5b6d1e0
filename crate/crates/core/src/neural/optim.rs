use serde::{Deserialize, Serialize};

use super::model::Model;

/// Adaptive-moment optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model) -> AdamState {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, model: &Model) -> bool {
        self.m.len() == model.params.len()
            && self.v.len() == model.params.len()
            && self.m.iter().zip(&model.params).all(|(m, p)| m.len() == p.tensor.len())
            && self.v.iter().zip(&model.params).all(|(v, p)| v.len() == p.tensor.len())
    }
}

impl Adam {
    /// One update of every trainable parameter. `grads` pairs parameter
    /// indices with gradients; missing parameters see a zero gradient.
    pub fn step(&self, model: &mut Model, state: &mut AdamState, grads: &[(usize, &[f64])], lr: f64, frozen: &dyn Fn(&str) -> bool) {
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut by_index: Vec<Option<&[f64]>> = vec![None; model.params.len()];
        for &(i, g) in grads {
            by_index[i] = Some(g);
        }
        for (i, p) in model.params.iter_mut().enumerate() {
            if frozen(&p.name) {
                continue;
            }
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            let g = by_index[i];
            for k in 0..p.tensor.data.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.tensor.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
