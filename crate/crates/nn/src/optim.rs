use crate::tensor::{ParameterTree, Tensor};

/// `θ ← θ - lr·∇θ` for every parameter.
pub fn sgd_step(tree: &mut ParameterTree, lr: f64) {
    for (_, p) in tree.iter_mut() {
        p.value.scaled_add(-lr, &p.grad);
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(tree: &mut ParameterTree, max_norm: f64) -> f64 {
    let norm = tree
        .iter()
        .map(|(_, p)| p.grad.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, p) in tree.iter_mut() {
            p.grad *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates. Moment buffers are created
/// lazily on the first step and follow the tree's entry order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, tree: &mut ParameterTree) {
        if self.m.len() != tree.len() {
            self.m = tree.iter().map(|(_, p)| Tensor::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((_, p), (m, v)) in tree.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}
