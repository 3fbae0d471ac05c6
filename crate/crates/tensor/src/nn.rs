//! Parameter storage and the handful of layers the CycleDM networks use.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Little-endian bytes of every parameter, in declaration order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.num_scalars() * 4);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Overwrites parameter values from [`ParamStore::to_le_bytes`] output.
    pub fn load_le_bytes(&mut self, bytes: &[u8]) -> Result<(), String> {
        if bytes.len() != self.num_scalars() * 4 {
            return Err(format!(
                "parameter blob has {} bytes, architecture needs {}",
                bytes.len(),
                self.num_scalars() * 4
            ));
        }
        let mut chunks = bytes.chunks_exact(4);
        for t in &mut self.tensors {
            for v in t.data_mut() {
                let c = chunks.next().expect("length checked");
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        Ok(())
    }

    /// Wraps every parameter in a [`Var`] for one forward pass.
    pub fn bind(&self, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { Var::param(t.clone()) } else { Var::constant(t.clone()) })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] bound into the graph for one step.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of `loss` for every bound parameter, in store order.
    pub fn grads(&self, loss: &Var) -> Vec<Tensor> {
        let refs: Vec<&Var> = self.vars.iter().collect();
        crate::grad(loss, &refs, false).into_iter().map(|g| g.value().clone()).collect()
    }
}

/// Gradients of `loss` for several parameter sets from a single backward pass.
pub fn grads_of(loss: &Var, sets: &[&Bound]) -> Vec<Vec<Tensor>> {
    let refs: Vec<&Var> = sets.iter().flat_map(|b| b.vars.iter()).collect();
    let mut flat = crate::grad(loss, &refs, false).into_iter().map(|g| g.value().clone());
    sets.iter().map(|b| flat.by_ref().take(b.vars.len()).collect()).collect()
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f32) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, vec![fan_in, fan_out], bound));
        let b = store.add(format!("{name}.bias"), uniform(rng, vec![fan_out], bound));
        Self { w, b }
    }

    /// `x [N, in] -> [N, out]`
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        x.matmul(p.get(self.w)).add(p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    out_ch: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f32).sqrt();
        let w = store.add(format!("{name}.weight"), uniform(rng, vec![out_ch, in_ch, kernel, kernel], bound));
        let b = store.add(format!("{name}.bias"), uniform(rng, vec![out_ch], bound));
        Self { w, b, out_ch, stride, pad }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let bias = p.get(self.b).reshape(&[1, self.out_ch, 1, 1]);
        x.conv2d(p.get(self.w), self.stride, self.pad).add(&bias)
    }
}

/// Group normalisation with a learned per-channel affine.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
    channels: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, groups: usize, channels: usize) -> Self {
        assert_eq!(channels % groups, 0, "{channels} channels not divisible into {groups} groups");
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Self { gamma, beta, groups, channels }
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let normed = x.group_norm(self.groups, 1e-5);
        let gamma = p.get(self.gamma).reshape(&[1, self.channels, 1, 1]);
        let beta = p.get(self.beta).reshape(&[1, self.channels, 1, 1]);
        normed.mul(&gamma).add(&beta)
    }
}

/// Lookup table realised as a one-hot matrix product so it stays differentiable.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let data = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
        let table = store.add(format!("{name}.table"), Tensor::new(vec![rows, dim], data));
        Self { table, rows }
    }

    pub fn forward(&self, p: &Bound, idx: &[usize]) -> Var {
        let mut onehot = Tensor::zeros(vec![idx.len(), self.rows]);
        for (i, &k) in idx.iter().enumerate() {
            assert!(k < self.rows, "embedding index {k} out of {}", self.rows);
            onehot.data_mut()[i * self.rows + k] = 1.0;
        }
        Var::constant(onehot).matmul(p.get(self.table))
    }
}

/// Transformer-style sinusoidal features of integer timesteps, `[N, dim]`.
pub fn sinusoidal_embedding(steps: &[usize], dim: usize) -> Tensor {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut out = vec![0.0f32; steps.len() * dim];
    for (i, &t) in steps.iter().enumerate() {
        for k in 0..half {
            let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out[i * dim + k] = arg.sin() as f32;
            out[i * dim + half + k] = arg.cos() as f32;
        }
    }
    Tensor::new(vec![steps.len(), dim], out)
}
