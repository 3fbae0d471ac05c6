use std::path::Path;

use cycledm_tensor::nn::ParamStore;
use serde::{Deserialize, Serialize};

use super::losses::ConversionHyperparams;
use super::nets::{BoundConverter, BoundCritic, ConversionArch, ConversionNet, Discriminator};
use crate::batch::Direction;
use crate::checkpoint::Container;
use crate::diffusion::Ddpm;
use crate::error::{Error, Result};
use crate::rng::{stream_for, Stream};

pub const PAIR_KIND: &str = "conversion-pair";

/// `F` (HW to MP), `G` (MP to HW) and the discriminators `D` (HW) and `D'`
/// (MP), all bound to one timestep.
#[derive(Clone, Debug)]
pub struct ConversionPair {
    t_star: usize,
    net: ConversionNet,
    disc: Discriminator,
    f: ParamStore,
    g: ParamStore,
    d: ParamStore,
    d_prime: ParamStore,
    hyper: ConversionHyperparams,
    ddpm_fingerprint: String,
    training: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct PairMeta {
    t_star: usize,
    arch: ConversionArch,
    hyper: ConversionHyperparams,
    ddpm_fingerprint: String,
    training: serde_json::Value,
}

impl ConversionPair {
    pub fn init(
        arch: &ConversionArch,
        t_star: usize,
        hyper: ConversionHyperparams,
        ddpm: &Ddpm,
        rng: &mut Stream,
    ) -> Result<Self> {
        ddpm.schedule().check_step(t_star)?;
        if arch.resolution != ddpm.resolution() {
            return Err(Error::Incompatible(format!(
                "conversion resolution {} differs from the DDPM's {}",
                arch.resolution,
                ddpm.resolution()
            )));
        }
        Self::build(arch, t_star, hyper, ddpm.fingerprint(), rng)
    }

    fn build(
        arch: &ConversionArch,
        t_star: usize,
        hyper: ConversionHyperparams,
        ddpm_fingerprint: String,
        rng: &mut Stream,
    ) -> Result<Self> {
        let (mut f, mut g, mut d, mut d_prime) = (ParamStore::new(), ParamStore::new(), ParamStore::new(), ParamStore::new());
        let net = ConversionNet::new(arch, &mut f, rng)?;
        ConversionNet::new(arch, &mut g, rng)?;
        let disc = Discriminator::new(arch, &mut d, rng)?;
        Discriminator::new(arch, &mut d_prime, rng)?;
        Ok(Self {
            t_star,
            net,
            disc,
            f,
            g,
            d,
            d_prime,
            hyper,
            ddpm_fingerprint,
            training: serde_json::Value::Null,
        })
    }

    pub fn t_star(&self) -> usize {
        self.t_star
    }

    pub fn arch(&self) -> &ConversionArch {
        self.net.arch()
    }

    pub fn hyper(&self) -> &ConversionHyperparams {
        &self.hyper
    }

    pub fn ddpm_fingerprint(&self) -> &str {
        &self.ddpm_fingerprint
    }

    pub fn training_meta(&self) -> &serde_json::Value {
        &self.training
    }

    pub(crate) fn set_training_meta(&mut self, v: serde_json::Value) {
        self.training = v;
    }

    /// `[F, G, D, D']`
    pub fn stores(&self) -> [&ParamStore; 4] {
        [&self.f, &self.g, &self.d, &self.d_prime]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 4] {
        [&mut self.f, &mut self.g, &mut self.d, &mut self.d_prime]
    }

    pub fn f(&self, trainable: bool) -> BoundConverter<'_> {
        BoundConverter { net: &self.net, params: self.f.bind(trainable) }
    }

    pub fn g(&self, trainable: bool) -> BoundConverter<'_> {
        BoundConverter { net: &self.net, params: self.g.bind(trainable) }
    }

    pub fn d(&self, trainable: bool) -> BoundCritic<'_> {
        BoundCritic { net: &self.disc, params: self.d.bind(trainable) }
    }

    pub fn d_prime(&self, trainable: bool) -> BoundCritic<'_> {
        BoundCritic { net: &self.disc, params: self.d_prime.bind(trainable) }
    }

    /// `F` for HW to MP, `G` for MP to HW.
    pub fn converter(&self, direction: Direction) -> BoundConverter<'_> {
        match direction {
            Direction::HwToMp => self.f(false),
            Direction::MpToHw => self.g(false),
        }
    }

    /// Refuses a DDPM other than the one this pair was trained against.
    pub fn check_ddpm(&self, ddpm: &Ddpm) -> Result<()> {
        let fp = ddpm.fingerprint();
        if fp != self.ddpm_fingerprint {
            return Err(Error::Incompatible(format!(
                "conversion pair was trained against DDPM {}, got {}",
                &self.ddpm_fingerprint[..12.min(self.ddpm_fingerprint.len())],
                &fp[..12]
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let meta = PairMeta {
            t_star: self.t_star,
            arch: self.net.arch().clone(),
            hyper: self.hyper.clone(),
            ddpm_fingerprint: self.ddpm_fingerprint.clone(),
            training: self.training.clone(),
        };
        Container::new(PAIR_KIND, serde_json::to_value(meta).expect("meta serialises"))
            .with_blob("f", self.f.to_le_bytes())
            .with_blob("g", self.g.to_le_bytes())
            .with_blob("d", self.d.to_le_bytes())
            .with_blob("d_prime", self.d_prime.to_le_bytes())
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(PAIR_KIND)?;
        let meta: PairMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("pair checkpoint", e.to_string()))?;
        let mut rng = stream_for(0, "pair-shell");
        let mut pair = Self::build(&meta.arch, meta.t_star, meta.hyper, meta.ddpm_fingerprint, &mut rng)?;
        for (name, store) in ["f", "g", "d", "d_prime"].into_iter().zip(pair.stores_mut()) {
            store.load_le_bytes(c.blob(name)?).map_err(|e| Error::format("pair checkpoint", e))?;
        }
        pair.training = meta.training;
        Ok(pair)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}
