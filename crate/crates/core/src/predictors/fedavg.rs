use thzvr_nn::{ParameterTree, Tensor};

use crate::error::{CoreError, Result};

/// A client's local model and how many samples it has trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct FedClientState {
    pub tree: ParameterTree,
    pub samples: usize,
}

/// Sample-weighted elementwise mean `Σ (n_k/n)·θ_k`.
pub fn fedavg_aggregate(clients: &[FedClientState]) -> Result<ParameterTree> {
    let first = clients.first().ok_or_else(|| CoreError::Domain("no clients to aggregate".into()))?;
    if let Some(bad) = clients.iter().position(|c| !c.tree.same_layout(&first.tree)) {
        return Err(CoreError::Domain(format!("client {bad} has a different parameter layout")));
    }
    let total: usize = clients.iter().map(|c| c.samples).sum();
    if total == 0 {
        return Err(CoreError::Domain("all clients report zero samples".into()));
    }
    let mut out = ParameterTree::new();
    for (name, p) in first.tree.iter() {
        let mut acc = Tensor::zeros(p.value.raw_dim());
        for c in clients.iter().filter(|c| c.samples > 0) {
            let w = c.samples as f64 / total as f64;
            acc.scaled_add(w, &c.tree.value(name).view());
        }
        out.insert(name, acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn client(v: f64, n: usize) -> FedClientState {
        let mut tree = ParameterTree::new();
        tree.insert("w", arr1(&[v]).into_dyn());
        FedClientState { tree, samples: n }
    }

    fn value(t: &ParameterTree) -> f64 {
        t.value("w")[[0]]
    }

    #[test]
    fn weighted_means() {
        assert!((value(&fedavg_aggregate(&[client(0.2, 5), client(0.4, 5)]).unwrap()) - 0.3).abs() < 1e-15);
        assert_eq!(value(&fedavg_aggregate(&[client(0.0, 1), client(4.0, 3)]).unwrap()), 3.0);
        assert_eq!(value(&fedavg_aggregate(&[client(1.7, 2)]).unwrap()), 1.7);
    }

    #[test]
    fn identical_trees_are_a_fixed_point() {
        let c = client(0.123456789, 3);
        let out = fedavg_aggregate(&[c.clone(), FedClientState { samples: 7, ..c.clone() }]).unwrap();
        assert!((value(&out) - 0.123456789).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fedavg_aggregate(&[client(1.0, 0), client(2.0, 0)]).is_err());
        let mut other = ParameterTree::new();
        other.insert("w", arr1(&[1.0, 2.0]).into_dyn());
        assert!(fedavg_aggregate(&[client(1.0, 1), FedClientState { tree: other, samples: 1 }]).is_err());
        assert!(fedavg_aggregate(&[]).is_err());
    }
}
