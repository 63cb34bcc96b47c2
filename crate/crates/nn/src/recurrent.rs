//! GRU and LSTM layers unrolled over a window, with exact backpropagation
//! through time.
//!
//! Sequences are slices of `batch×features` matrices, one per time step.
//! Gate weights are packed column-wise so each step is two matrix products.
//!
//! GRU (gates `z`, `r`, candidate `n`):
//!
//! ```text
//! z = σ(x·Wz + h·Uz + bz)      r = σ(x·Wr + h·Ur + br)
//! n = tanh(x·Wn + (r⊙h)·Un + bn)
//! h' = (1 - z)⊙n + z⊙h
//! ```
//!
//! LSTM (gates `i`, `f`, `g`, `o`): `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::init;
use crate::layers::sigmoid;
use crate::tensor::ParameterTree;

#[derive(Debug, Clone)]
pub struct GruLayer {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

struct GruStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    rh: Array2<f64>,
}

pub struct GruCache {
    steps: Vec<GruStep>,
}

impl GruLayer {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self { prefix: prefix.into(), input, hidden }
    }

    fn key(&self, what: &str) -> String {
        format!("{}.{}", self.prefix, what)
    }

    pub fn init<R: Rng + ?Sized>(&self, tree: &mut ParameterTree, rng: &mut R) {
        let h = self.hidden;
        let limit = 1.0 / (h as f64).sqrt();
        tree.insert(self.key("wx"), init::uniform(rng, &[self.input, 3 * h], limit));
        tree.insert(self.key("uzr"), init::uniform(rng, &[h, 2 * h], limit));
        tree.insert(self.key("un"), init::uniform(rng, &[h, h], limit));
        tree.insert(self.key("b"), init::zeros(&[3 * h]));
    }

    fn step(&self, tree: &ParameterTree, x: &Array2<f64>, h: &Array2<f64>) -> GruStep {
        let hd = self.hidden;
        let wx = tree.value2(&self.key("wx"));
        let uzr = tree.value2(&self.key("uzr"));
        let un = tree.value2(&self.key("un"));
        let b = tree.value(&self.key("b"));
        let b = b.view().into_dimensionality::<ndarray::Ix1>().expect("bias is 1-D");
        let a = x.dot(&wx) + b;
        let mut zr = a.slice(s![.., ..2 * hd]).to_owned() + h.dot(&uzr);
        zr.mapv_inplace(sigmoid);
        let z = zr.slice(s![.., ..hd]).to_owned();
        let r = zr.slice(s![.., hd..]).to_owned();
        let rh = &r * h;
        let n = (a.slice(s![.., 2 * hd..]).to_owned() + rh.dot(&un)).mapv(f64::tanh);
        GruStep { x: x.clone(), h_prev: h.clone(), z, r, n, rh }
    }

    /// Runs the sequence from `h0` and returns every hidden state
    /// (`hs[t]` is the state after consuming `xs[t]`).
    pub fn forward(&self, tree: &ParameterTree, xs: &[Array2<f64>], h0: &Array2<f64>) -> (Vec<Array2<f64>>, GruCache) {
        let mut h = h0.clone();
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let st = self.step(tree, x, &h);
            h = (1.0 - &st.z) * &st.n + &st.z * &st.h_prev;
            hs.push(h.clone());
            steps.push(st);
        }
        (hs, GruCache { steps })
    }

    /// Backpropagates `dh_last` (gradient w.r.t. the final hidden state)
    /// through the whole window. Parameter gradients are accumulated into
    /// `tree`; input gradients are returned per step.
    pub fn backward(&self, tree: &mut ParameterTree, cache: &GruCache, dh_last: &Array2<f64>) -> Vec<Array2<f64>> {
        let hd = self.hidden;
        let wx = tree.value2(&self.key("wx")).to_owned();
        let uzr = tree.value2(&self.key("uzr")).to_owned();
        let un = tree.value2(&self.key("un")).to_owned();
        let batch = dh_last.nrows();
        let mut d_wx = Array2::<f64>::zeros(wx.raw_dim());
        let mut d_uzr = Array2::<f64>::zeros(uzr.raw_dim());
        let mut d_un = Array2::<f64>::zeros(un.raw_dim());
        let mut d_b = Array1::<f64>::zeros(3 * hd);
        let mut dxs = vec![Array2::<f64>::zeros((batch, self.input)); cache.steps.len()];
        let mut dh = dh_last.clone();
        for (t, st) in cache.steps.iter().enumerate().rev() {
            let dn = &dh * &(1.0 - &st.z);
            let dz = &dh * &(&st.h_prev - &st.n);
            let mut dh_prev = &dh * &st.z;
            let dan = dn * &st.n.mapv(|v| 1.0 - v * v);
            let drh = dan.dot(&un.t());
            d_un += &st.rh.t().dot(&dan);
            let dr = &drh * &st.h_prev;
            dh_prev += &(&drh * &st.r);
            let daz = dz * &st.z.mapv(|v| v * (1.0 - v));
            let dar = dr * &st.r.mapv(|v| v * (1.0 - v));
            let mut da = Array2::<f64>::zeros((batch, 3 * hd));
            da.slice_mut(s![.., ..hd]).assign(&daz);
            da.slice_mut(s![.., hd..2 * hd]).assign(&dar);
            da.slice_mut(s![.., 2 * hd..]).assign(&dan);
            let dzr = da.slice(s![.., ..2 * hd]);
            d_uzr += &st.h_prev.t().dot(&dzr);
            dh_prev += &dzr.dot(&uzr.t());
            d_wx += &st.x.t().dot(&da);
            d_b += &da.sum_axis(Axis(0));
            dxs[t] = da.dot(&wx.t());
            dh = dh_prev;
        }
        tree.add_grad(&self.key("wx"), &d_wx);
        tree.add_grad(&self.key("uzr"), &d_uzr);
        tree.add_grad(&self.key("un"), &d_un);
        tree.add_grad(&self.key("b"), &d_b);
        dxs
    }
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

struct LstmStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

pub struct LstmCache {
    steps: Vec<LstmStep>,
}

impl LstmLayer {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self { prefix: prefix.into(), input, hidden }
    }

    fn key(&self, what: &str) -> String {
        format!("{}.{}", self.prefix, what)
    }

    /// Forget-gate bias starts at 1.
    pub fn init<R: Rng + ?Sized>(&self, tree: &mut ParameterTree, rng: &mut R) {
        let h = self.hidden;
        let limit = 1.0 / (h as f64).sqrt();
        tree.insert(self.key("w"), init::uniform(rng, &[self.input, 4 * h], limit));
        tree.insert(self.key("u"), init::uniform(rng, &[h, 4 * h], limit));
        let mut b = init::zeros(&[4 * h]);
        b.slice_mut(s![h..2 * h]).fill(1.0);
        tree.insert(self.key("b"), b);
    }

    fn step(&self, tree: &ParameterTree, x: &Array2<f64>, h: &Array2<f64>, c: &Array2<f64>) -> (Array2<f64>, Array2<f64>, LstmStep) {
        let hd = self.hidden;
        let w = tree.value2(&self.key("w"));
        let u = tree.value2(&self.key("u"));
        let b = tree.value(&self.key("b"));
        let b = b.view().into_dimensionality::<ndarray::Ix1>().expect("bias is 1-D");
        let a = x.dot(&w) + h.dot(&u) + b;
        let i = a.slice(s![.., ..hd]).mapv(sigmoid);
        let f = a.slice(s![.., hd..2 * hd]).mapv(sigmoid);
        let g = a.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
        let o = a.slice(s![.., 3 * hd..]).mapv(sigmoid);
        let c_new = &f * c + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        let st = LstmStep { x: x.clone(), h_prev: h.clone(), c_prev: c.clone(), i, f, g, o, tanh_c };
        (h_new, c_new, st)
    }

    /// Returns all hidden states and the final cell state.
    pub fn forward(
        &self,
        tree: &ParameterTree,
        xs: &[Array2<f64>],
        h0: &Array2<f64>,
        c0: &Array2<f64>,
    ) -> (Vec<Array2<f64>>, Array2<f64>, LstmCache) {
        let (mut h, mut c) = (h0.clone(), c0.clone());
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (hn, cn, st) = self.step(tree, x, &h, &c);
            h = hn;
            c = cn;
            hs.push(h.clone());
            steps.push(st);
        }
        (hs, c, LstmCache { steps })
    }

    pub fn backward(&self, tree: &mut ParameterTree, cache: &LstmCache, dh_last: &Array2<f64>) -> Vec<Array2<f64>> {
        let hd = self.hidden;
        let w = tree.value2(&self.key("w")).to_owned();
        let u = tree.value2(&self.key("u")).to_owned();
        let batch = dh_last.nrows();
        let mut d_w = Array2::<f64>::zeros(w.raw_dim());
        let mut d_u = Array2::<f64>::zeros(u.raw_dim());
        let mut d_b = Array1::<f64>::zeros(4 * hd);
        let mut dxs = vec![Array2::<f64>::zeros((batch, self.input)); cache.steps.len()];
        let mut dh = dh_last.clone();
        let mut dc = Array2::<f64>::zeros((batch, hd));
        for (t, st) in cache.steps.iter().enumerate().rev() {
            let d_o = &dh * &st.tanh_c;
            dc = dc + &dh * &st.o * &st.tanh_c.mapv(|v| 1.0 - v * v);
            let di = &dc * &st.g;
            let dg = &dc * &st.i;
            let df = &dc * &st.c_prev;
            let dc_prev = &dc * &st.f;
            let mut da = Array2::<f64>::zeros((batch, 4 * hd));
            da.slice_mut(s![.., ..hd]).assign(&(di * &st.i.mapv(|v| v * (1.0 - v))));
            da.slice_mut(s![.., hd..2 * hd]).assign(&(df * &st.f.mapv(|v| v * (1.0 - v))));
            da.slice_mut(s![.., 2 * hd..3 * hd]).assign(&(dg * &st.g.mapv(|v| 1.0 - v * v)));
            da.slice_mut(s![.., 3 * hd..]).assign(&(d_o * &st.o.mapv(|v| v * (1.0 - v))));
            d_w += &st.x.t().dot(&da);
            d_u += &st.h_prev.t().dot(&da);
            d_b += &da.sum_axis(Axis(0));
            dxs[t] = da.dot(&w.t());
            dh = da.dot(&u.t());
            dc = dc_prev;
        }
        tree.add_grad(&self.key("w"), &d_w);
        tree.add_grad(&self.key("u"), &d_u);
        tree.add_grad(&self.key("b"), &d_b);
        dxs
    }
}

/// Splits a `batch×window×features` style input given as per-sample rows of
/// `window·features` values into the per-step layout used above.
pub fn to_steps(samples: ArrayView2<f64>, window: usize, features: usize) -> Vec<Array2<f64>> {
    assert_eq!(samples.ncols(), window * features, "sample width must be window·features");
    (0..window)
        .map(|t| samples.slice(s![.., t * features..(t + 1) * features]).to_owned())
        .collect()
}
