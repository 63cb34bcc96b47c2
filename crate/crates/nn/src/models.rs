//! Ready-made networks built from the layers in this crate. Each owns a
//! [`ParameterTree`] and exposes an inference `forward`, a training
//! `forward_train` returning a cache, and a `backward` that accumulates
//! parameter gradients into the tree.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Ix1};
use rand::Rng;

use crate::error::{check_shape, Result};
use crate::init;
use crate::layers::{self, ConvCache, ConvShape, PoolCache};
use crate::recurrent::{GruCache, GruLayer, LstmCache, LstmLayer};
use crate::tensor::{Model, ParameterTree};

fn bias<'a>(tree: &'a ParameterTree, name: &str) -> ndarray::ArrayView1<'a, f64> {
    tree.value(name)
        .view()
        .into_dimensionality::<Ix1>()
        .expect("bias is 1-D")
}

fn insert_dense<R: Rng + ?Sized>(tree: &mut ParameterTree, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    tree.insert(format!("{prefix}.w"), init::glorot_uniform(rng, &[fan_in, fan_out], fan_in, fan_out));
    tree.insert(format!("{prefix}.b"), init::zeros(&[fan_out]));
}

fn dense_fwd(tree: &ParameterTree, prefix: &str, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    layers::dense(x, tree.value2(&format!("{prefix}.w")), bias(tree, &format!("{prefix}.b")))
}

fn dense_bwd(tree: &mut ParameterTree, prefix: &str, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Result<Array2<f64>> {
    let wk = format!("{prefix}.w");
    let g = layers::dense_backward(x, tree.value2(&wk), dy)?;
    tree.add_grad(&wk, &g.dw);
    tree.add_grad(&format!("{prefix}.b"), &g.db);
    Ok(g.dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => layers::relu(x),
            Activation::Tanh => x.mapv(f64::tanh),
        }
    }

    fn backward(self, out: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => layers::relu_backward(out, dy),
            Activation::Tanh => dy * &out.mapv(|v| 1.0 - v * v),
        }
    }
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    tree: ParameterTree,
}

pub struct MlpCache {
    /// Input to each layer; `acts[i]` feeds layer `i`.
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let mut tree = ParameterTree::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            insert_dense(&mut tree, &format!("l{i}"), pair[0], pair[1], rng);
        }
        Self { sizes: sizes.to_vec(), activation, tree }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        let mut acts = vec![x.to_owned()];
        let mut h = x.to_owned();
        for i in 0..self.layers() {
            h = dense_fwd(&self.tree, &format!("l{i}"), h.view())?;
            if i + 1 < self.layers() {
                h = self.activation.apply(&h);
                acts.push(h.clone());
            }
        }
        Ok((h, MlpCache { acts }))
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut grad = dy.to_owned();
        for i in (0..self.layers()).rev() {
            grad = dense_bwd(&mut self.tree, &format!("l{i}"), cache.acts[i].view(), grad.view())?;
            if i > 0 {
                grad = self.activation.backward(&cache.acts[i], &grad);
            }
        }
        Ok(grad)
    }
}

impl Model for Mlp {
    fn params(&self) -> &ParameterTree {
        &self.tree
    }
    fn params_mut(&mut self) -> &mut ParameterTree {
        &mut self.tree
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvNetConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        Self { height: 21, width: 21, channels: 3, filters: 64, kernel: 2, hidden: 128, classes: 2 }
    }
}

impl ConvNetConfig {
    fn conv(&self, cin: usize) -> ConvShape {
        ConvShape { kh: self.kernel, kw: self.kernel, cin, cout: self.filters }
    }

    fn flat(&self) -> usize {
        self.height.div_ceil(2) * self.width.div_ceil(2) * self.filters
    }
}

/// conv → ReLU → conv → ReLU → 2×2 max-pool → dense → ReLU → dense (logits).
#[derive(Debug, Clone)]
pub struct ConvNet {
    pub config: ConvNetConfig,
    tree: ParameterTree,
}

pub struct ConvNetCache {
    c1: ConvCache,
    a1: Array4<f64>,
    c2: ConvCache,
    a2: Array4<f64>,
    pool: PoolCache,
    flat: Array2<f64>,
    h: Array2<f64>,
}

impl ConvNet {
    pub fn new<R: Rng + ?Sized>(config: ConvNetConfig, rng: &mut R) -> Self {
        let mut tree = ParameterTree::new();
        let k2 = config.kernel * config.kernel;
        let f = config.filters;
        for (name, cin) in [("conv1", config.channels), ("conv2", f)] {
            let fan_in = k2 * cin;
            tree.insert(format!("{name}.k"), init::glorot_uniform(rng, &[fan_in, f], fan_in, k2 * f));
            tree.insert(format!("{name}.b"), init::zeros(&[f]));
        }
        insert_dense(&mut tree, "fc1", config.flat(), config.hidden, rng);
        insert_dense(&mut tree, "fc2", config.hidden, config.classes, rng);
        Self { config, tree }
    }

    /// Logits, one row per image.
    pub fn forward(&self, x: ArrayView4<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn predict_proba(&self, x: ArrayView4<f64>) -> Result<Array2<f64>> {
        Ok(layers::softmax(self.forward(x)?.view()))
    }

    pub fn forward_train(&self, x: ArrayView4<f64>) -> Result<(Array2<f64>, ConvNetCache)> {
        let cfg = self.config;
        let (b, h, w, c) = x.dim();
        check_shape("convnet input", &[cfg.height, cfg.width, cfg.channels], &[h, w, c])?;
        let t = &self.tree;
        let (z1, c1) = layers::conv2d(x, t.value2("conv1.k"), bias(t, "conv1.b"), cfg.conv(cfg.channels))?;
        let a1 = layers::relu(&z1);
        let (z2, c2) = layers::conv2d(a1.view(), t.value2("conv2.k"), bias(t, "conv2.b"), cfg.conv(cfg.filters))?;
        let a2 = layers::relu(&z2);
        let (p, pool) = layers::maxpool2x2(a2.view());
        let flat = p
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, cfg.flat()))
            .expect("flatten pooled features");
        let hid = layers::relu(&dense_fwd(t, "fc1", flat.view())?);
        let logits = dense_fwd(t, "fc2", hid.view())?;
        Ok((logits, ConvNetCache { c1, a1, c2, a2, pool, flat, h: hid }))
    }

    pub fn backward(&mut self, cache: &ConvNetCache, dlogits: ArrayView2<f64>) -> Result<Array4<f64>> {
        let cfg = self.config;
        let t = &mut self.tree;
        let dh = dense_bwd(t, "fc2", cache.h.view(), dlogits)?;
        let dh = layers::relu_backward(&cache.h, &dh);
        let dflat = dense_bwd(t, "fc1", cache.flat.view(), dh.view())?;
        let b = dflat.nrows();
        let dp = dflat
            .into_shape_with_order((b, cfg.height.div_ceil(2), cfg.width.div_ceil(2), cfg.filters))
            .expect("unflatten pooled gradient");
        let da2 = layers::maxpool2x2_backward(&cache.pool, dp.view());
        let dz2 = layers::relu_backward(&cache.a2, &da2);
        let g2 = layers::conv2d_backward(&cache.c2, t.value2("conv2.k"), dz2.view(), cfg.conv(cfg.filters))?;
        t.add_grad("conv2.k", &g2.dkernel);
        t.add_grad("conv2.b", &g2.dbias);
        let dz1 = layers::relu_backward(&cache.a1, &g2.dx);
        let g1 = layers::conv2d_backward(&cache.c1, t.value2("conv1.k"), dz1.view(), cfg.conv(cfg.channels))?;
        t.add_grad("conv1.k", &g1.dkernel);
        t.add_grad("conv1.b", &g1.dbias);
        Ok(g1.dx)
    }
}

impl Model for ConvNet {
    fn params(&self) -> &ParameterTree {
        &self.tree
    }
    fn params_mut(&mut self) -> &mut ParameterTree {
        &mut self.tree
    }
}

/// GRU over a window followed by a linear read-out of the last hidden state.
#[derive(Debug, Clone)]
pub struct GruRegressor {
    gru: GruLayer,
    outputs: usize,
    tree: ParameterTree,
}

pub struct GruRegressorCache {
    gru: GruCache,
    h_last: Array2<f64>,
}

impl GruRegressor {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let gru = GruLayer::new("gru", inputs, hidden);
        let mut tree = ParameterTree::new();
        gru.init(&mut tree, rng);
        insert_dense(&mut tree, "out", hidden, outputs, rng);
        Self { gru, outputs, tree }
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// `xs[t]` is `batch×inputs`; returns `batch×outputs`.
    pub fn forward(&self, xs: &[Array2<f64>]) -> Result<Array2<f64>> {
        Ok(self.forward_train(xs)?.0)
    }

    pub fn forward_train(&self, xs: &[Array2<f64>]) -> Result<(Array2<f64>, GruRegressorCache)> {
        let batch = xs.first().map_or(0, |x| x.nrows());
        for x in xs {
            check_shape("gru input", &[batch, self.gru.input], x.shape())?;
        }
        let h0 = Array2::zeros((batch, self.gru.hidden));
        let (hs, cache) = self.gru.forward(&self.tree, xs, &h0);
        let h_last = hs.last().cloned().unwrap_or(h0);
        let y = dense_fwd(&self.tree, "out", h_last.view())?;
        Ok((y, GruRegressorCache { gru: cache, h_last }))
    }

    pub fn backward(&mut self, cache: &GruRegressorCache, dy: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let dh = dense_bwd(&mut self.tree, "out", cache.h_last.view(), dy)?;
        Ok(self.gru.backward(&mut self.tree, &cache.gru, &dh))
    }
}

impl Model for GruRegressor {
    fn params(&self) -> &ParameterTree {
        &self.tree
    }
    fn params_mut(&mut self) -> &mut ParameterTree {
        &mut self.tree
    }
}

/// LSTM over a window followed by a linear layer producing class logits.
#[derive(Debug, Clone)]
pub struct LstmClassifier {
    lstm: LstmLayer,
    classes: usize,
    tree: ParameterTree,
}

pub struct LstmClassifierCache {
    lstm: LstmCache,
    h_last: Array2<f64>,
}

impl LstmClassifier {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let lstm = LstmLayer::new("lstm", inputs, hidden);
        let mut tree = ParameterTree::new();
        lstm.init(&mut tree, rng);
        insert_dense(&mut tree, "out", hidden, classes, rng);
        Self { lstm, classes, tree }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward(&self, xs: &[Array2<f64>]) -> Result<Array2<f64>> {
        Ok(self.forward_train(xs)?.0)
    }

    pub fn predict_proba(&self, xs: &[Array2<f64>]) -> Result<Array2<f64>> {
        Ok(layers::softmax(self.forward(xs)?.view()))
    }

    pub fn forward_train(&self, xs: &[Array2<f64>]) -> Result<(Array2<f64>, LstmClassifierCache)> {
        let batch = xs.first().map_or(0, |x| x.nrows());
        for x in xs {
            check_shape("lstm input", &[batch, self.lstm.input], x.shape())?;
        }
        let zero = Array2::zeros((batch, self.lstm.hidden));
        let (hs, _, cache) = self.lstm.forward(&self.tree, xs, &zero, &zero);
        let h_last = hs.last().cloned().unwrap_or(zero);
        let logits = dense_fwd(&self.tree, "out", h_last.view())?;
        Ok((logits, LstmClassifierCache { lstm: cache, h_last }))
    }

    pub fn backward(&mut self, cache: &LstmClassifierCache, dlogits: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let dh = dense_bwd(&mut self.tree, "out", cache.h_last.view(), dlogits)?;
        Ok(self.lstm.backward(&mut self.tree, &cache.lstm, &dh))
    }
}

impl Model for LstmClassifier {
    fn params(&self) -> &ParameterTree {
        &self.tree
    }
    fn params_mut(&mut self) -> &mut ParameterTree {
        &mut self.tree
    }
}
