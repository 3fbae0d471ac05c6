//! The trained conditional denoiser: U-Net layout, one or two parameter
//! sets, the schedule it was trained with, and its checkpoint format.

use std::path::Path;

use cycledm_tensor::nn::{Bound, ParamStore};
use cycledm_tensor::Var;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NoisePredictor, NoiseSchedule, ScheduleParams, UNet, UNetConfig};
use crate::batch::{Conditioning, Domain};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DDPM_KIND: &str = "ddpm";

/// Whether both domains share one domain-conditioned network or each has its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    Joint,
    PerDomain,
}

impl std::str::FromStr for DomainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(DomainMode::Joint),
            "per_domain" => Ok(DomainMode::PerDomain),
            _ => Err(Error::InvalidArgument(format!("unknown ddpm mode `{s}` (joint | per_domain)"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DdpmMeta {
    schedule: ScheduleParams,
    arch: UNetConfig,
    mode: DomainMode,
    training: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Ddpm {
    schedule: NoiseSchedule,
    net: UNet,
    mode: DomainMode,
    stores: Vec<ParamStore>,
    training: serde_json::Value,
}

impl Ddpm {
    /// Freshly initialised model.
    pub fn init(schedule: NoiseSchedule, arch: &UNetConfig, mode: DomainMode, rng: &mut Stream) -> Result<Self> {
        let count = match mode {
            DomainMode::Joint => 1,
            DomainMode::PerDomain => 2,
        };
        let mut stores = Vec::with_capacity(count);
        let mut net = None;
        for _ in 0..count {
            let mut store = ParamStore::new();
            net = Some(UNet::new(arch, &mut store, rng)?);
            stores.push(store);
        }
        Ok(Self {
            schedule,
            net: net.expect("at least one network"),
            mode,
            stores,
            training: serde_json::Value::Null,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn arch(&self) -> &UNetConfig {
        self.net.config()
    }

    pub fn mode(&self) -> DomainMode {
        self.mode
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn stores(&self) -> &[ParamStore] {
        &self.stores
    }

    pub fn stores_mut(&mut self) -> &mut [ParamStore] {
        &mut self.stores
    }

    pub fn training_meta(&self) -> &serde_json::Value {
        &self.training
    }

    pub fn set_training_meta(&mut self, meta: serde_json::Value) {
        self.training = meta;
    }

    pub fn resolution(&self) -> usize {
        self.net.config().resolution
    }

    /// Serialized parameters of every store, in order.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.stores.iter().flat_map(ParamStore::to_le_bytes).collect()
    }

    /// SHA-256 of the serialized parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.stores {
            h.update(s.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Binds the parameters as constants for inference.
    pub fn predictor(&self) -> BoundDdpm<'_> {
        self.bind(false)
    }

    pub fn bind(&self, trainable: bool) -> BoundDdpm<'_> {
        BoundDdpm { net: &self.net, mode: self.mode, bound: self.stores.iter().map(|s| s.bind(trainable)).collect() }
    }

    pub fn to_container(&self) -> Container {
        let meta = DdpmMeta {
            schedule: self.schedule.params(),
            arch: self.net.config().clone(),
            mode: self.mode,
            training: self.training.clone(),
        };
        let mut c = Container::new(DDPM_KIND, serde_json::to_value(meta).expect("meta serialises"));
        for (i, s) in self.stores.iter().enumerate() {
            c = c.with_blob(format!("params.{i}"), s.to_le_bytes());
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(DDPM_KIND)?;
        let meta: DdpmMeta =
            serde_json::from_value(c.meta.clone()).map_err(|e| Error::format("ddpm checkpoint", e.to_string()))?;
        let schedule = NoiseSchedule::from_params(&meta.schedule)?;
        // Initial values are overwritten below; any RNG will do.
        let mut rng = crate::rng::stream_for(0, "ddpm-shell");
        let mut model = Self::init(schedule, &meta.arch, meta.mode, &mut rng)?;
        for (i, store) in model.stores.iter_mut().enumerate() {
            store
                .load_le_bytes(c.blob(&format!("params.{i}"))?)
                .map_err(|e| Error::format("ddpm checkpoint", e))?;
        }
        model.training = meta.training;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// A [`Ddpm`] with parameters bound into the autodiff graph.
pub struct BoundDdpm<'a> {
    net: &'a UNet,
    mode: DomainMode,
    bound: Vec<Bound>,
}

impl BoundDdpm<'_> {
    pub fn bound(&self) -> &[Bound] {
        &self.bound
    }

    fn params_for(&self, domain: Domain) -> &Bound {
        match self.mode {
            DomainMode::Joint => &self.bound[0],
            DomainMode::PerDomain => &self.bound[domain.index()],
        }
    }
}

impl NoisePredictor for BoundDdpm<'_> {
    fn predict_noise(&self, x_t: &Var, steps: &[usize], cond: &Conditioning) -> Var {
        self.net.forward(self.params_for(cond.domain), x_t, steps, &cond.classes, cond.domain)
    }
}
