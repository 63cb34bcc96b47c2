//! CNN LoS/NLoS classification of rasterized scenes.

use std::path::Path;

use ndarray::{s, Array1, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use thzvr_nn::{loss, Adam, AdamConfig, ConvNet, ConvNetConfig, Model, ParameterTree};

use super::raster::{grid_size, rasterize_scene};
use crate::error::{CoreError, Result};
use crate::geometry::{los_status, LinkState, MobilityArea, Position3, SceneLayout};

/// Label of the NLoS class; LoS is 0.
pub const NLOS: usize = 1;

/// Images (`n×H×W×3`) with one LoS/NLoS label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LosDataset {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
}

impl LosDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn nlos_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == NLOS).count() as f64 / self.len().max(1) as f64
    }

    pub fn to_tree(&self) -> ParameterTree {
        let mut t = ParameterTree::new();
        t.insert("images", self.images.clone().into_dyn());
        t.insert("labels", Array1::from_iter(self.labels.iter().map(|&l| l as f64)).into_dyn());
        t
    }

    pub fn from_tree(tree: &ParameterTree) -> Result<Self> {
        let bad = |why: &str| CoreError::Domain(format!("not a LoS dataset: {why}"));
        let images = tree
            .get("images")
            .map_err(|_| bad("missing images"))?
            .value
            .clone()
            .into_dimensionality()
            .map_err(|_| bad("images are not 4-D"))?;
        let labels: Vec<usize> = tree.get("labels").map_err(|_| bad("missing labels"))?.value.iter().map(|&v| v as usize).collect();
        let ds = Self { images, labels };
        if ds.images.dim().0 != ds.labels.len() {
            return Err(bad("image and label counts differ"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_tree().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tree(&ParameterTree::load(path)?)
    }
}

/// Draws `scenes` random scenes of `users` users on distinct free cells with
/// heights uniform in `h_range`; each scene yields one image per user with
/// that user highlighted and labelled by the geometric blockage test.
pub fn generate_los_dataset<R: Rng + ?Sized>(
    layout: &SceneLayout,
    area: &MobilityArea,
    users: usize,
    scenes: usize,
    h_range: (f64, f64),
    rng: &mut R,
) -> Result<LosDataset> {
    let cells = area.free_cells();
    if users > cells.len() {
        return Err(CoreError::config("scene.users", "more users than free cells"));
    }
    let n = grid_size(layout);
    let mut images = Array4::zeros((scenes * users, n, n, 3));
    let mut labels = Vec::with_capacity(scenes * users);
    for s in 0..scenes {
        let picks = rand::seq::index::sample(rng, cells.len(), users);
        let pos: Vec<Position3> = picks
            .iter()
            .map(|i| {
                let (x, y) = cells[i];
                Position3::new(x as f64, y as f64, rng.random_range(h_range.0..=h_range.1))
            })
            .collect();
        let flags = los_status(layout, &pos);
        for k in 0..users {
            images.slice_mut(s![s * users + k, .., .., ..]).assign(&rasterize_scene(layout, &pos, Some(k), h_range));
            labels.push(usize::from(!flags[k].is_los()));
        }
    }
    Ok(LosDataset { images, labels })
}

#[derive(Debug, Clone)]
pub struct LosClassifier {
    net: ConvNet,
    adam: Adam,
}

impl LosClassifier {
    pub fn new<R: Rng + ?Sized>(config: ConvNetConfig, lr: f64, rng: &mut R) -> Self {
        Self { net: ConvNet::new(config, rng), adam: Adam::new(AdamConfig::with_lr(lr)) }
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn config(&self) -> ConvNetConfig {
        self.net.config
    }

    /// NLoS probability of each image.
    pub fn nlos_proba(&self, images: &Array4<f64>) -> Result<Vec<f64>> {
        let p = self.net.predict_proba(images.view())?;
        Ok(p.column(NLOS).to_vec())
    }

    pub fn classify(&self, images: &Array4<f64>) -> Result<Vec<LinkState>> {
        Ok(self.nlos_proba(images)?.into_iter().map(|p| LinkState::from_blocked(p > 0.5)).collect())
    }

    /// Predicted flag of every user, one highlighted image per user.
    pub fn classify_scene(&self, layout: &SceneLayout, users: &[Position3], h_range: (f64, f64)) -> Result<Vec<LinkState>> {
        if users.is_empty() {
            return Ok(Vec::new());
        }
        let n = grid_size(layout);
        let mut images = Array4::zeros((users.len(), n, n, 3));
        for k in 0..users.len() {
            images.slice_mut(s![k, .., .., ..]).assign(&rasterize_scene(layout, users, Some(k), h_range));
        }
        self.classify(&images)
    }

    /// One Adam pass over `data` in shuffled minibatches; returns the mean
    /// cross-entropy.
    pub fn train_epoch<R: Rng + ?Sized>(&mut self, data: &LosDataset, batch: usize, rng: &mut R) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch.max(1)) {
            let x = data.images.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            self.net.params_mut().zero_grad();
            let (logits, cache) = self.net.forward_train(x.view())?;
            let (l, d, _) = loss::softmax_cross_entropy(logits.view(), &labels)?;
            self.net.backward(&cache, d.view())?;
            self.adam.step(self.net.params_mut());
            total += l * chunk.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    /// Mean cross-entropy and accuracy on `data`, evaluated in chunks.
    pub fn evaluate(&self, data: &LosDataset) -> Result<(f64, f64)> {
        let mut ce = 0.0;
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(128) {
            let x = data.images.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let p = self.net.predict_proba(x.view())?;
            ce += loss::cross_entropy(p.view(), &labels)? * chunk.len() as f64;
            correct += labels.iter().enumerate().filter(|(r, &l)| usize::from(p[[*r, NLOS]] > 0.5) == l).count();
        }
        let n = data.len().max(1) as f64;
        Ok((ce / n, correct as f64 / n))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.net.params().save(path)?)
    }

    /// Loads weights saved by [`LosClassifier::save`] into a network of the
    /// given shape.
    pub fn load(path: &Path, config: ConvNetConfig, lr: f64) -> Result<Self> {
        let tree = ParameterTree::load(path)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut c = Self::new(config, lr, &mut rng);
        c.net.params_mut().copy_values_from(&tree)?;
        Ok(c)
    }
}
