//! Named parameter storage shared by every model in the crate.
//!
//! A [`ParameterTree`] is an ordered map from parameter name to a value
//! tensor and a gradient tensor of identical shape. Models read their weights
//! out of the tree during the forward pass and accumulate into the gradient
//! slots during the backward pass, so optimizers, federated averaging,
//! checkpointing and gradient checking all work on the same structure.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic  "THZP"            4 bytes
//! version u32              currently 1
//! count   u32              number of entries
//! entry*  name_len u32, name utf-8, ndim u32, dims u64 * ndim, values f64 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, Ix2, IxDyn};

use crate::error::{NnError, Result};

/// Row-major n-dimensional array of `f64`.
pub type Tensor = ArrayD<f64>;

const MAGIC: &[u8; 4] = b"THZP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Self { value, grad }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterTree {
    entries: IndexMap<String, Param>,
}

impl ParameterTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), Param::new(value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.param(name).value
    }

    /// Two-dimensional view of a weight matrix. Panics if the parameter does
    /// not exist or is not 2-D; models only ask for names they created.
    pub fn value2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.param(name)
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("parameter is not a matrix")
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.param_mut(name).grad
    }

    pub fn grad2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        self.param_mut(name)
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("parameter is not a matrix")
    }

    /// Adds `delta` (any dimensionality with the parameter's element count
    /// and shape) to the gradient of `name`.
    pub fn add_grad<D: ndarray::Dimension>(&mut self, name: &str, delta: &ndarray::Array<f64, D>) {
        let g = &mut self.param_mut(name).grad;
        let d = delta.view().into_dyn();
        assert_eq!(g.shape(), d.shape(), "gradient shape for `{name}`");
        *g += &d;
    }

    fn param(&self, name: &str) -> &Param {
        match self.entries.get(name) {
            Some(p) => p,
            None => panic!("model asked for unknown parameter `{name}`"),
        }
    }

    fn param_mut(&mut self, name: &str) -> &mut Param {
        match self.entries.get_mut(name) {
            Some(p) => p,
            None => panic!("model asked for unknown parameter `{name}`"),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// True when both trees hold the same names, in the same order, with the
    /// same shapes.
    pub fn same_layout(&self, other: &ParameterTree) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.value.shape() == b.value.shape())
    }

    /// Copies values (not gradients) from `other`.
    pub fn copy_values_from(&mut self, other: &ParameterTree) -> Result<()> {
        if !self.same_layout(other) {
            return Err(NnError::TreeMismatch("cannot copy between different layouts".into()));
        }
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(other.entries.iter()) {
            dst.value.assign(&src.value);
        }
        Ok(())
    }

    /// Flattens all values in entry order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    /// Human-readable manifest: one `name<TAB>shape<TAB>count` line per entry.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (name, p) in &self.entries {
            let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{}\t{}\t{}\n", name, shape.join("x"), p.value.len()));
        }
        out
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, p) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(p.value.ndim() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tree = ParameterTree::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(read_u64(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let value = Tensor::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| NnError::Format(e.to_string()))?;
            tree.insert(name, value);
        }
        Ok(tree)
    }

    /// Writes `path` (binary) and `path.manifest` (text).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w)?;
        w.flush()?;
        std::fs::write(manifest_path(path), self.manifest())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    s.into()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Models own a tree and expose it to optimizers and aggregation.
pub trait Model {
    fn params(&self) -> &ParameterTree;
    fn params_mut(&mut self) -> &mut ParameterTree;
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn sample_tree() -> ParameterTree {
        let mut t = ParameterTree::new();
        t.insert("a.w", arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        t.insert("a.b", ndarray::arr1(&[0.5, -0.5]).into_dyn());
        t
    }

    #[test]
    fn manifest_lists_every_entry() {
        let m = sample_tree().manifest();
        assert_eq!(m, "a.w\t2x2\t4\na.b\t2\t2\n");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = ParameterTree::read_binary(&b"NOPE\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, NnError::Format(_)));
    }

    #[test]
    fn copy_requires_matching_layout() {
        let mut a = sample_tree();
        let mut b = ParameterTree::new();
        b.insert("x", Tensor::zeros(IxDyn(&[3])));
        assert!(a.copy_values_from(&b).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut t = ParameterTree::new();
            t.insert("first", Tensor::from_shape_vec(IxDyn(&[split]), values[..split].to_vec()).unwrap());
            t.insert("second", Tensor::from_shape_vec(IxDyn(&[1, values.len() - split]), values[split..].to_vec()).unwrap());
            let mut buf = Vec::new();
            t.write_binary(&mut buf).unwrap();
            let back = ParameterTree::read_binary(&buf[..]).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
