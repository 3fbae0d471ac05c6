//! Conversion networks and class-conditional discriminators.

use cycledm_tensor::nn::{Bound, Conv2d, Embedding, GroupNorm, Linear, ParamStore};
use cycledm_tensor::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::ClassToken;
use crate::error::{Error, Result};

/// Maps a noisy batch (with per-item class tokens) to a batch of the same shape.
pub trait Converter {
    fn convert(&self, x: &Var, classes: &[ClassToken]) -> Var;
}

/// Returns one real-valued logit per image, shape `[N]`.
pub trait Critic {
    fn score(&self, x: &Var, classes: &[ClassToken]) -> Var;
}

impl<F: Fn(&Var, &[ClassToken]) -> Var> Converter for F {
    fn convert(&self, x: &Var, classes: &[ClassToken]) -> Var {
        self(x, classes)
    }
}

/// Wraps a closure as a [`Critic`].
pub struct FnCritic<F>(pub F);

impl<F: Fn(&Var, &[ClassToken]) -> Var> Critic for FnCritic<F> {
    fn score(&self, x: &Var, classes: &[ClassToken]) -> Var {
        (self.0)(x, classes)
    }
}

/// The identity map, used for the SDEdit reduction.
pub struct IdentityConverter;

impl Converter for IdentityConverter {
    fn convert(&self, x: &Var, _: &[ClassToken]) -> Var {
        x.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionArch {
    pub resolution: usize,
    pub base_channels: usize,
    pub res_blocks: usize,
    pub groups: usize,
    pub disc_channels: usize,
}

impl ConversionArch {
    pub fn new(resolution: usize) -> Self {
        Self { resolution, base_channels: 8, res_blocks: 2, groups: 4, disc_channels: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "conversion resolution must be a multiple of 8, got {}",
                self.resolution
            )));
        }
        if self.base_channels == 0 || self.base_channels % self.groups != 0 || self.disc_channels == 0 {
            return Err(Error::InvalidArgument("conversion channel counts must be positive multiples of groups".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct NormConv {
    conv: Conv2d,
    norm: GroupNorm,
}

impl NormConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, k, stride, k / 2, rng),
            norm: GroupNorm::new(store, &format!("{name}.norm"), groups, cout),
        }
    }

    fn forward(&self, p: &Bound, x: &Var) -> Var {
        self.norm.forward(p, &self.conv.forward(p, x))
    }
}

/// Encoder, residual bottleneck, decoder; the class embedding is added at
/// the bottleneck and the network predicts a residual on its input.
#[derive(Clone, Debug)]
pub struct ConversionNet {
    arch: ConversionArch,
    stem: NormConv,
    down1: NormConv,
    down2: NormConv,
    class_emb: Embedding,
    blocks: Vec<(NormConv, NormConv)>,
    up1: NormConv,
    up2: NormConv,
    head: Conv2d,
}

impl ConversionNet {
    pub fn new(arch: &ConversionArch, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let c = arch.base_channels;
        let g = arch.groups;
        let blocks = (0..arch.res_blocks)
            .map(|i| {
                (
                    NormConv::new(store, &format!("res{i}.a"), 4 * c, 4 * c, 3, 1, g, rng),
                    NormConv::new(store, &format!("res{i}.b"), 4 * c, 4 * c, 3, 1, g, rng),
                )
            })
            .collect();
        let stem = NormConv::new(store, "stem", 1, c, 7, 1, g, rng);
        let down1 = NormConv::new(store, "down1", c, 2 * c, 3, 2, g, rng);
        let down2 = NormConv::new(store, "down2", 2 * c, 4 * c, 3, 2, g, rng);
        let class_emb = Embedding::new(store, "class_emb", ClassToken::VOCAB, 4 * c, rng);
        let up1 = NormConv::new(store, "up1", 4 * c, 2 * c, 3, 1, g, rng);
        let up2 = NormConv::new(store, "up2", 2 * c, c, 3, 1, g, rng);
        let head = Conv2d::new(store, "head", c, 1, 7, 1, 3, rng);
        Ok(Self { arch: arch.clone(), stem, down1, down2, class_emb, blocks, up1, up2, head })
    }

    pub fn arch(&self) -> &ConversionArch {
        &self.arch
    }

    pub fn forward(&self, p: &Bound, x: &Var, classes: &[ClassToken]) -> Var {
        let n = x.shape()[0];
        let c4 = 4 * self.arch.base_channels;
        let h = self.stem.forward(p, x).relu();
        let h = self.down1.forward(p, &h).relu();
        let h = self.down2.forward(p, &h).relu();
        let emb = self.class_emb.forward(p, &ClassToken::indices(classes)).reshape(&[n, c4, 1, 1]);
        let mut h = h.add(&emb);
        for (a, b) in &self.blocks {
            let r = b.forward(p, &a.forward(p, &h).relu());
            h = h.add(&r);
        }
        let h = self.up1.forward(p, &h.upsample2()).relu();
        let h = self.up2.forward(p, &h.upsample2()).relu();
        x.add(&self.head.forward(p, &h))
    }
}

/// Three strided 4x4 convolutions, global average pooling, and a linear score
/// plus a projection term against a learned class embedding.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    out: Linear,
    class_emb: Embedding,
    feat: usize,
}

impl Discriminator {
    pub fn new(arch: &ConversionArch, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let c = arch.disc_channels;
        let convs = vec![
            Conv2d::new(store, "d.conv0", 1, c, 4, 2, 1, rng),
            Conv2d::new(store, "d.conv1", c, 2 * c, 4, 2, 1, rng),
            Conv2d::new(store, "d.conv2", 2 * c, 4 * c, 4, 2, 1, rng),
        ];
        Ok(Self {
            convs,
            out: Linear::new(store, "d.out", 4 * c, 1, rng),
            class_emb: Embedding::new(store, "d.class_emb", ClassToken::VOCAB, 4 * c, rng),
            feat: 4 * c,
        })
    }

    pub fn forward(&self, p: &Bound, x: &Var, classes: &[ClassToken]) -> Var {
        let n = x.shape()[0];
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(p, &h).leaky_relu(0.2);
        }
        let s = h.shape().to_vec();
        let pooled = h.sum_to(&[n, self.feat, 1, 1]).scale(1.0 / (s[2] * s[3]) as f32).reshape(&[n, self.feat]);
        let emb = self.class_emb.forward(p, &ClassToken::indices(classes));
        let proj = pooled.mul(&emb).sum_to(&[n, 1]);
        self.out.forward(p, &pooled).add(&proj).reshape(&[n])
    }
}

/// A conversion network with bound parameters.
pub struct BoundConverter<'a> {
    pub(crate) net: &'a ConversionNet,
    pub(crate) params: Bound,
}

impl Converter for BoundConverter<'_> {
    fn convert(&self, x: &Var, classes: &[ClassToken]) -> Var {
        self.net.forward(&self.params, x, classes)
    }
}

pub struct BoundCritic<'a> {
    pub(crate) net: &'a Discriminator,
    pub(crate) params: Bound,
}

impl Critic for BoundCritic<'_> {
    fn score(&self, x: &Var, classes: &[ClassToken]) -> Var {
        self.net.forward(&self.params, x, classes)
    }
}
