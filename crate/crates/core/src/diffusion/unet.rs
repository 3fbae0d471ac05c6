//! Reference noise predictor: a three-level U-Net with additive conditioning.

use cycledm_tensor::nn::{sinusoidal_embedding, Bound, Conv2d, Embedding, GroupNorm, Linear, ParamStore};
use cycledm_tensor::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{ClassToken, Domain};
use crate::error::{Error, Result};

/// Architecture descriptor stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub resolution: usize,
    /// Channels at full resolution; the two lower levels use 2x and 4x.
    pub base_channels: usize,
    pub time_dim: usize,
    pub groups: usize,
}

impl UNetConfig {
    pub fn new(resolution: usize, base_channels: usize) -> Self {
        Self { resolution, base_channels, time_dim: 32, groups: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 || self.resolution % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "U-Net resolution must be a positive multiple of 4, got {}",
                self.resolution
            )));
        }
        if self.base_channels == 0 || self.base_channels % self.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "base channels {} must be a positive multiple of {} groups",
                self.base_channels, self.groups
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument("time embedding dim must be even".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    cond: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    out_ch: usize,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, emb: usize, groups: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), groups, cin),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, 1, rng),
            cond: Linear::new(store, &format!("{name}.cond"), emb, cout, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), groups, cout),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, 0, rng)),
            out_ch: cout,
        }
    }

    fn forward(&self, p: &Bound, x: &Var, cond: &Var) -> Var {
        let n = x.shape()[0];
        let h = self.conv1.forward(p, &self.norm1.forward(p, x).silu());
        let c = self.cond.forward(p, cond).reshape(&[n, self.out_ch, 1, 1]);
        let h = h.add(&c);
        let h = self.conv2.forward(p, &self.norm2.forward(p, &h).silu());
        let skip = match &self.skip {
            Some(s) => s.forward(p, x),
            None => x.clone(),
        };
        h.add(&skip)
    }
}

/// Layer layout; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    time1: Linear,
    time2: Linear,
    class_emb: Embedding,
    domain_emb: Embedding,
    conv_in: Conv2d,
    enc0: ResBlock,
    down0: Conv2d,
    enc1: ResBlock,
    down1: Conv2d,
    mid: ResBlock,
    up1: Conv2d,
    dec1: ResBlock,
    up0: Conv2d,
    dec0: ResBlock,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl UNet {
    pub fn new(config: &UNetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let e = 4 * c;
        let g = config.groups;
        Ok(Self {
            config: config.clone(),
            time1: Linear::new(store, "time1", config.time_dim, e, rng),
            time2: Linear::new(store, "time2", e, e, rng),
            class_emb: Embedding::new(store, "class_emb", ClassToken::VOCAB, e, rng),
            domain_emb: Embedding::new(store, "domain_emb", 2, e, rng),
            conv_in: Conv2d::new(store, "conv_in", 1, c, 3, 1, 1, rng),
            enc0: ResBlock::new(store, "enc0", c, c, e, g, rng),
            down0: Conv2d::new(store, "down0", c, 2 * c, 3, 2, 1, rng),
            enc1: ResBlock::new(store, "enc1", 2 * c, 2 * c, e, g, rng),
            down1: Conv2d::new(store, "down1", 2 * c, 4 * c, 3, 2, 1, rng),
            mid: ResBlock::new(store, "mid", 4 * c, 4 * c, e, g, rng),
            up1: Conv2d::new(store, "up1", 4 * c, 2 * c, 3, 1, 1, rng),
            dec1: ResBlock::new(store, "dec1", 4 * c, 2 * c, e, g, rng),
            up0: Conv2d::new(store, "up0", 2 * c, c, 3, 1, 1, rng),
            dec0: ResBlock::new(store, "dec0", 2 * c, c, e, g, rng),
            norm_out: GroupNorm::new(store, "norm_out", g, c),
            conv_out: Conv2d::new(store, "conv_out", c, 1, 3, 1, 1, rng),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `x_t [N,1,H,W] -> eps_hat [N,1,H,W]`.
    pub fn forward(&self, p: &Bound, x: &Var, steps: &[usize], classes: &[ClassToken], domain: Domain) -> Var {
        let n = x.shape()[0];
        let temb = Var::constant(sinusoidal_embedding(steps, self.config.time_dim));
        let temb = self.time2.forward(p, &self.time1.forward(p, &temb).silu());
        let cls = self.class_emb.forward(p, &ClassToken::indices(classes));
        let dom = self.domain_emb.forward(p, &vec![domain.index(); n]);
        let cond = temb.add(&cls).add(&dom).silu();

        let h0 = self.enc0.forward(p, &self.conv_in.forward(p, x), &cond);
        let h1 = self.enc1.forward(p, &self.down0.forward(p, &h0), &cond);
        let m = self.mid.forward(p, &self.down1.forward(p, &h1), &cond);
        let u1 = self.up1.forward(p, &m.upsample2());
        let d1 = self.dec1.forward(p, &Var::concat(&[u1, h1], 1), &cond);
        let u0 = self.up0.forward(p, &d1.upsample2());
        let d0 = self.dec0.forward(p, &Var::concat(&[u0, h0], 1), &cond);
        self.conv_out.forward(p, &self.norm_out.forward(p, &d0).silu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_for;
    use cycledm_tensor::{randn, Tensor};

    #[test]
    fn output_shape_matches_input_and_is_deterministic() {
        let cfg = UNetConfig::new(8, 4);
        let mut store = ParamStore::new();
        let net = UNet::new(&cfg, &mut store, &mut stream_for(0, "init")).unwrap();
        let x = Var::constant(randn(&mut stream_for(1, "x"), vec![3, 1, 8, 8]));
        let classes = [ClassToken::Class(0), ClassToken::Null, ClassToken::Class(25)];
        let p = store.bind(false);
        let a = net.forward(&p, &x, &[1, 5, 9], &classes, Domain::Printed);
        let b = net.forward(&p, &x, &[1, 5, 9], &classes, Domain::Printed);
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a.value(), b.value());
        let c = net.forward(&p, &x, &[1, 5, 9], &classes, Domain::Handwritten);
        assert_ne!(a.value(), c.value());
        let _ = Tensor::zeros(vec![1]);
    }

    #[test]
    fn null_token_differs_from_class_zero() {
        let cfg = UNetConfig::new(8, 4);
        let mut store = ParamStore::new();
        let net = UNet::new(&cfg, &mut store, &mut stream_for(0, "init")).unwrap();
        let x = Var::constant(randn(&mut stream_for(1, "x"), vec![1, 1, 8, 8]));
        let p = store.bind(false);
        let a = net.forward(&p, &x, &[3], &[ClassToken::Class(0)], Domain::Printed);
        let b = net.forward(&p, &x, &[3], &[ClassToken::Null], Domain::Printed);
        assert_ne!(a.value(), b.value());
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut store = ParamStore::new();
        assert!(UNet::new(&UNetConfig::new(10, 4), &mut store, &mut stream_for(0, "i")).is_err());
        assert!(UNet::new(&UNetConfig::new(8, 6), &mut store, &mut stream_for(0, "i")).is_err());
    }
}
