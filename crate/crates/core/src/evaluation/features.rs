//! Small convolutional classifier over the joint (domain, class) labels. Its
//! penultimate activations are the embedding used by FID and precision/recall,
//! and its domain marginal serves as the held-out domain classifier.

use std::path::Path;

use cycledm_tensor::nn::{grads_of, Conv2d, Linear, ParamStore};
use cycledm_tensor::optim::Adam;
use cycledm_tensor::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{Domain, ImageBatch, NUM_CLASSES};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::rng::{stream_for, Seeds};

pub const EXTRACTOR_KIND: &str = "feature-extractor";
pub const JOINT_LABELS: usize = 2 * NUM_CLASSES;
const CHUNK: usize = 256;

/// Row-major `N x d` embeddings with a description of where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    data: Vec<f64>,
    n: usize,
    dim: usize,
    pub source: String,
}

impl FeatureSet {
    pub fn new(data: Vec<f64>, dim: usize, source: impl Into<String>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of width {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature set".into()));
        }
        Ok(Self { n: data.len() / dim, data, dim, source: source.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows differ in length".into()));
        }
        Self::new(rows.concat(), dim, source)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn joint_label(domain: Domain, class: u8) -> usize {
    domain.index() * NUM_CLASSES + class as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorArch {
    pub resolution: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl ExtractorArch {
    pub fn new(resolution: usize) -> Self {
        Self { resolution, channels: 8, embed_dim: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 8 != 0 {
            return Err(Error::InvalidArgument(format!("extractor resolution {} must be a multiple of 8", self.resolution)));
        }
        if self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument("extractor widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        Self { steps: 600, batch_size: 64, lr: 2e-3 }
    }
}

#[derive(Clone, Debug)]
struct Layers {
    convs: [Conv2d; 3],
    embed: Linear,
    head: Linear,
}

impl Layers {
    fn new(a: &ExtractorArch, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let c = a.channels;
        let side = a.resolution / 8;
        Self {
            convs: [
                Conv2d::new(store, "conv1", 1, c, 3, 1, 1, rng),
                Conv2d::new(store, "conv2", c, 2 * c, 3, 1, 1, rng),
                Conv2d::new(store, "conv3", 2 * c, 4 * c, 3, 1, 1, rng),
            ],
            embed: Linear::new(store, "embed", 4 * c * side * side, a.embed_dim, rng),
            head: Linear::new(store, "head", a.embed_dim, JOINT_LABELS, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    arch: ExtractorArch,
    layers: Layers,
    store: ParamStore,
    training: serde_json::Value,
}

/// Mean cross-entropy of `logits [N, K]` against integer labels.
fn cross_entropy(logits: &Var, labels: &[usize]) -> Var {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let v = logits.value().data();
    let maxes: Vec<f32> = (0..n).map(|i| v[i * k..(i + 1) * k].iter().fold(f32::MIN, |a, &b| a.max(b))).collect();
    let shift = Var::constant(Tensor::new(vec![n, 1], maxes));
    let z = logits.sub(&shift);
    let lse = z.exp().sum_to(&[n, 1]).log();
    let mut onehot = Tensor::zeros(vec![n, k]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * k + l] = 1.0;
    }
    let picked = z.mul(&Var::constant(onehot)).sum_to(&[n, 1]);
    lse.sub(&picked).mean()
}

impl FeatureExtractor {
    pub fn init(arch: &ExtractorArch, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let layers = Layers::new(arch, &mut store, rng);
        Ok(Self { arch: arch.clone(), layers, store, training: serde_json::Value::Null })
    }

    pub fn arch(&self) -> &ExtractorArch {
        &self.arch
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn training_meta(&self) -> &serde_json::Value {
        &self.training
    }

    pub fn fingerprint(&self) -> String {
        crate::rng::sha256_hex(&self.store.to_le_bytes())
    }

    fn forward(&self, trainable: bool, x: &Tensor) -> (Var, Var, cycledm_tensor::nn::Bound) {
        let p = self.store.bind(trainable);
        let mut h = Var::constant(x.clone());
        for conv in &self.layers.convs {
            h = conv.forward(&p, &h).relu().avgpool2();
        }
        let n = x.shape()[0];
        let flat = h.reshape(&[n, h.value().numel() / n]);
        let emb = self.layers.embed.forward(&p, &flat).relu();
        let logits = self.layers.head.forward(&p, &emb);
        (emb, logits, p)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let r = self.arch.resolution;
        if s.len() != 4 || s[1] != 1 || s[2] != r || s[3] != r {
            return Err(Error::Shape(format!("extractor expects [N,1,{r},{r}], got {s:?}")));
        }
        Ok(())
    }

    fn chunks(&self, x: &Tensor, mut f: impl FnMut(&Tensor)) -> Result<()> {
        self.check_input(x)?;
        let (n, per) = (x.shape()[0], self.arch.resolution * self.arch.resolution);
        for start in (0..n).step_by(CHUNK) {
            let len = CHUNK.min(n - start);
            let part = Tensor::new(vec![len, 1, self.arch.resolution, self.arch.resolution], x.data()[start * per..(start + len) * per].to_vec());
            f(&part);
        }
        Ok(())
    }

    /// Penultimate-layer embeddings.
    pub fn embed(&self, x: &Tensor, source: impl Into<String>) -> Result<FeatureSet> {
        let mut out = Vec::with_capacity(x.shape().first().copied().unwrap_or(0) * self.arch.embed_dim);
        self.chunks(x, |part| {
            let (emb, _, _) = self.forward(false, part);
            out.extend(emb.value().data().iter().map(|&v| v as f64));
        })?;
        FeatureSet::new(out, self.arch.embed_dim, source)
    }

    /// Joint-label logits `[N, 52]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Vec::new();
        self.chunks(x, |part| {
            let (_, logits, _) = self.forward(false, part);
            out.extend_from_slice(logits.value().data());
        })?;
        Ok(Tensor::new(vec![out.len() / JOINT_LABELS, JOINT_LABELS], out))
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        Ok(l.data()
            .chunks(JOINT_LABELS)
            .map(|row| row.iter().enumerate().fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
            .collect())
    }

    /// Softmax mass on each image's `domain` labels.
    pub fn domain_probability(&self, x: &Tensor, domain: Domain) -> Result<Vec<f64>> {
        let l = self.logits(x)?;
        let lo = domain.index() * NUM_CLASSES;
        Ok(l.data()
            .chunks(JOINT_LABELS)
            .map(|row| {
                let m = row.iter().fold(f32::MIN, |a, &b| a.max(b)) as f64;
                let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
                e[lo..lo + NUM_CLASSES].iter().sum::<f64>() / e.iter().sum::<f64>()
            })
            .collect())
    }

    /// Fraction of images whose domain marginal favours `domain`.
    pub fn domain_rate(&self, batch: &ImageBatch, domain: Domain) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Data("no images to classify".into()));
        }
        let p = self.domain_probability(batch.pixels(), domain)?;
        Ok(p.iter().filter(|&&v| v > 0.5).count() as f64 / p.len() as f64)
    }

    /// Joint-label accuracy over labelled batches.
    pub fn accuracy(&self, batches: &[&ImageBatch]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for b in batches {
            let pred = self.predict(b.pixels())?;
            for (p, &c) in pred.iter().zip(b.classes()) {
                hit += (*p == joint_label(b.domain(), c)) as usize;
            }
            total += b.len();
        }
        if total == 0 {
            return Err(Error::Data("no images to classify".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({ "arch": self.arch, "training": self.training });
        Container::new(EXTRACTOR_KIND, meta).with_blob("params", self.store.to_le_bytes())
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(EXTRACTOR_KIND)?;
        let arch: ExtractorArch = serde_json::from_value(c.meta["arch"].clone())
            .map_err(|e| Error::format("extractor checkpoint", e.to_string()))?;
        let mut model = Self::init(&arch, &mut stream_for(0, "extractor-shell"))?;
        model.store.load_le_bytes(c.blob("params")?).map_err(|e| Error::format("extractor checkpoint", e))?;
        model.training = c.meta["training"].clone();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorReport {
    pub losses: Vec<f64>,
    pub held_out_accuracy: Option<f64>,
}

/// Trains the joint-label classifier on `train` (any mix of domains) and,
/// when `held_out` is non-empty, reports its accuracy there.
pub fn train_feature_extractor(
    train: &[&ImageBatch],
    held_out: &[&ImageBatch],
    arch: &ExtractorArch,
    params: &ExtractorParams,
    seed: u64,
) -> Result<(FeatureExtractor, ExtractorReport)> {
    if params.steps == 0 || params.batch_size == 0 || !(params.lr > 0.0) {
        return Err(Error::InvalidArgument("extractor steps, batch_size and lr must be positive".into()));
    }
    let pool: Vec<(usize, usize)> =
        train.iter().enumerate().flat_map(|(b, batch)| (0..batch.len()).map(move |i| (b, i))).collect();
    if pool.is_empty() {
        return Err(Error::Data("no images to train the feature extractor".into()));
    }
    let seeds = Seeds::new(seed);
    let mut model = FeatureExtractor::init(arch, &mut seeds.stream("extractor.init"))?;
    for b in train {
        model.check_input(b.pixels())?;
    }
    let mut data_rng = seeds.stream("extractor.data");
    let mut opt = Adam::new(params.lr);
    let per = arch.resolution * arch.resolution;
    let mut losses = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let mut px = Vec::with_capacity(params.batch_size * per);
        let mut labels = Vec::with_capacity(params.batch_size);
        for _ in 0..params.batch_size {
            let (b, i) = pool[data_rng.gen_range(0..pool.len())];
            px.extend_from_slice(train[b].image(i));
            labels.push(joint_label(train[b].domain(), train[b].classes()[i]));
        }
        let x = Tensor::new(vec![params.batch_size, 1, arch.resolution, arch.resolution], px);
        let (grads, value) = {
            let (_, logits, p) = model.forward(true, &x);
            let loss = cross_entropy(&logits, &labels);
            (grads_of(&loss, &[&p]).remove(0), loss.item() as f64)
        };
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("extractor loss at step {step}")));
        }
        opt.step(&mut model.store, &grads);
        losses.push(value);
    }
    let held_out_accuracy = if held_out.iter().any(|b| !b.is_empty()) { Some(model.accuracy(held_out)?) } else { None };
    if let Some(a) = held_out_accuracy {
        log::info!("feature extractor held-out joint accuracy {a:.3}");
    }
    model.training = serde_json::json!({ "seed": seed, "params": params, "held_out_accuracy": held_out_accuracy });
    Ok((model, ExtractorReport { losses, held_out_accuracy }))
}
