//! Central finite-difference verification of analytic gradients.

use crate::tensor::Model;

/// Perturbation used for the central differences.
pub const FD_STEP: f64 = 1e-6;

/// Relative errors are computed against `max(|analytic|, |numeric|, ABS_FLOOR)`
/// so that entries whose true gradient is numerically zero are judged on an
/// absolute scale instead of amplifying round-off.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} entries, max rel err {:.3e} at {}[{}], tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.checked,
            self.max_rel_error,
            self.worst_param,
            self.worst_index,
            self.tol
        )
    }
}

/// Compares the gradient produced by `loss_and_grad` against central finite
/// differences of the same loss.
///
/// `loss_and_grad` must run a forward and backward pass on the model,
/// accumulate parameter gradients into its tree and return the scalar loss.
/// Gradients are zeroed before every call. At most `max_per_param` entries of
/// each parameter are probed, evenly strided, which keeps large layers cheap.
pub fn grad_check<M, F>(model: &mut M, mut loss_and_grad: F, tol: f64, max_per_param: usize) -> GradCheckReport
where
    M: Model,
    F: FnMut(&mut M) -> f64,
{
    model.params_mut().zero_grad();
    loss_and_grad(model);
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.iter().copied().collect()))
        .collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        tol,
    };
    for (name, grads) in &analytic {
        let stride = grads.len().div_ceil(max_per_param.max(1)).max(1);
        for idx in (0..grads.len()).step_by(stride) {
            let original = nth_value(model, name, idx);
            set_value(model, name, idx, original + FD_STEP);
            model.params_mut().zero_grad();
            let plus = loss_and_grad(model);
            set_value(model, name, idx, original - FD_STEP);
            model.params_mut().zero_grad();
            let minus = loss_and_grad(model);
            set_value(model, name, idx, original);

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grads[idx];
            let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    model.params_mut().zero_grad();
    report
}

fn nth_value<M: Model>(model: &M, name: &str, idx: usize) -> f64 {
    *model
        .params()
        .value(name)
        .iter()
        .nth(idx)
        .expect("index within parameter")
}

fn set_value<M: Model>(model: &mut M, name: &str, idx: usize, v: f64) {
    let p = model.params_mut().get_mut(name).expect("parameter exists");
    *p.value.iter_mut().nth(idx).expect("index within parameter") = v;
}

/// Checks every model family the toolkit ships (tanh and ReLU MLPs, the
/// conv-pool-dense network, the GRU regressor and the LSTM classifier) on
/// small random instances. Returns one labelled report per model.
pub fn standard_suite<R: rand::Rng + ?Sized>(rng: &mut R, tol: f64) -> Vec<(&'static str, GradCheckReport)> {
    use crate::loss::{mse, softmax_cross_entropy};
    use crate::models::{Activation, ConvNet, ConvNetConfig, GruRegressor, LstmClassifier, Mlp};
    use ndarray::{Array2, Array4};

    let rand2 = |rng: &mut R, r: usize, c: usize| -> Array2<f64> {
        crate::init::uniform(rng, &[r, c], 1.0).into_dimensionality().expect("rank 2")
    };
    let mut out = Vec::new();

    let mut mlp = Mlp::new(&[4, 6, 5, 3], Activation::Tanh, rng);
    let (x, target) = (rand2(rng, 5, 4), rand2(rng, 5, 3));
    out.push((
        "dense/tanh",
        grad_check(
            &mut mlp,
            |m| {
                let (y, cache) = m.forward_train(x.view()).expect("shapes");
                let (l, dy) = mse(y.view(), target.view()).expect("shapes");
                m.backward(&cache, dy.view()).expect("shapes");
                l
            },
            tol,
            usize::MAX,
        ),
    ));

    let mut relu = Mlp::new(&[3, 8, 2], Activation::Relu, rng);
    let x = rand2(rng, 6, 3);
    out.push((
        "dense/relu",
        grad_check(
            &mut relu,
            |m| {
                let (y, cache) = m.forward_train(x.view()).expect("shapes");
                let (l, dy, _) = softmax_cross_entropy(y.view(), &[0, 1, 1, 0, 1, 0]).expect("shapes");
                m.backward(&cache, dy.view()).expect("shapes");
                l
            },
            tol,
            usize::MAX,
        ),
    ));

    let cfg = ConvNetConfig { height: 5, width: 5, channels: 2, filters: 3, kernel: 2, hidden: 4, classes: 2 };
    let mut conv = ConvNet::new(cfg, rng);
    // keep pre-activations off the ReLU kink
    for (name, p) in conv.params_mut().iter_mut() {
        if name.ends_with(".b") {
            p.value.fill(0.05);
        }
    }
    let x: Array4<f64> = crate::init::uniform(rng, &[2, 5, 5, 2], 1.0).into_dimensionality().expect("rank 4");
    out.push((
        "conv+pool+dense",
        grad_check(
            &mut conv,
            |m| {
                let (y, cache) = m.forward_train(x.view()).expect("shapes");
                let (l, dy, _) = softmax_cross_entropy(y.view(), &[1, 0]).expect("shapes");
                m.backward(&cache, dy.view()).expect("shapes");
                l
            },
            tol,
            usize::MAX,
        ),
    ));

    let mut gru = GruRegressor::new(3, 4, 2, rng);
    let xs: Vec<Array2<f64>> = (0..5).map(|_| rand2(rng, 2, 3)).collect();
    let w = rand2(rng, 2, 2);
    out.push((
        "gru (5-step bptt)",
        grad_check(
            &mut gru,
            |m| {
                let (y, cache) = m.forward_train(&xs).expect("shapes");
                m.backward(&cache, w.view()).expect("shapes");
                (&y * &w).sum()
            },
            tol,
            usize::MAX,
        ),
    ));

    let mut lstm = LstmClassifier::new(4, 5, 4, rng);
    let xs: Vec<Array2<f64>> = (0..5).map(|_| rand2(rng, 3, 4)).collect();
    out.push((
        "lstm (5-step bptt)",
        grad_check(
            &mut lstm,
            |m| {
                let (y, cache) = m.forward_train(&xs).expect("shapes");
                let (l, dy, _) = softmax_cross_entropy(y.view(), &[0, 3, 2]).expect("shapes");
                m.backward(&cache, dy.view()).expect("shapes");
                l
            },
            tol,
            usize::MAX,
        ),
    ));
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    #[test]
    fn standard_suite_passes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let reports = super::standard_suite(&mut rng, 1e-4);
        assert_eq!(reports.len(), 5);
        for (name, r) in reports {
            assert!(r.passed(), "{name}: {r}");
        }
    }
}
