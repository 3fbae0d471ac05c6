use cycledm_tensor::nn::{grads_of, Bound};
use cycledm_tensor::optim::{Adam, Ema};
use cycledm_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ddpm_loss, Ddpm, DomainMode, NoiseSchedule, UNetConfig};
use crate::batch::{ClassToken, Conditioning, Domain, ImageBatch};
use crate::error::{Error, Result};
use crate::rng::Seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpmTrainParams {
    pub steps: usize,
    /// Images per step, split evenly between the two domains.
    pub batch_size: usize,
    pub lr: f32,
    /// Probability of replacing a class token by the null token.
    pub null_rate: f64,
    pub grad_clip: f32,
    /// Exponential moving average of weights; the average is what gets saved.
    pub ema_decay: Option<f32>,
    pub log_every: usize,
}

impl Default for DdpmTrainParams {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 64, lr: 2e-3, null_rate: 0.1, grad_clip: 1.0, ema_decay: Some(0.995), log_every: 100 }
    }
}

impl DdpmTrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size < 2 {
            return Err(Error::InvalidArgument("ddpm training needs steps >= 1 and batch_size >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.null_rate) {
            return Err(Error::InvalidArgument(format!("null_rate {} outside [0, 1]", self.null_rate)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub losses: Vec<f64>,
}

impl LossLog {
    /// Mean of consecutive windows of `window` steps (the last may be shorter).
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        smooth(&self.losses, window)
    }
}

pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    values.chunks(window.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Uniformly draws `n` items (with replacement) and optionally nulls classes.
pub(crate) fn draw_batch(
    data: &ImageBatch,
    n: usize,
    null_rate: f64,
    rng: &mut impl Rng,
) -> (Tensor, Vec<u8>, Vec<ClassToken>) {
    let (h, w) = data.resolution();
    let mut px = Vec::with_capacity(n * h * w);
    let mut classes = Vec::with_capacity(n);
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..data.len());
        px.extend_from_slice(data.image(i));
        let c = data.classes()[i];
        classes.push(c);
        let null = null_rate > 0.0 && rng.gen_bool(null_rate);
        tokens.push(if null { ClassToken::Null } else { ClassToken::Class(c) });
    }
    (Tensor::new(vec![n, 1, h, w], px), classes, tokens)
}

/// Trains a conditional denoiser over both domains.
///
/// Every step draws half a batch from each domain, so the domain token is
/// always balanced. `progress` receives `(step, loss)` after each update.
#[allow(clippy::too_many_arguments)]
pub fn train_ddpm(
    hw: &ImageBatch,
    mp: &ImageBatch,
    schedule: &NoiseSchedule,
    arch: &UNetConfig,
    mode: DomainMode,
    params: &DdpmTrainParams,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<(Ddpm, LossLog)> {
    params.validate()?;
    for (b, d) in [(hw, Domain::Handwritten), (mp, Domain::Printed)] {
        if b.is_empty() {
            return Err(Error::Data(format!("no {d} training images")));
        }
        if b.domain() != d {
            return Err(Error::InvalidArgument(format!("expected a {d} batch, got {}", b.domain())));
        }
        if b.resolution() != (arch.resolution, arch.resolution) {
            return Err(Error::Shape(format!(
                "{d} images are {:?}, model expects {}x{}",
                b.resolution(),
                arch.resolution,
                arch.resolution
            )));
        }
    }
    let seeds = Seeds::new(seed);
    let mut init_rng = seeds.stream("ddpm.init");
    let mut data_rng = seeds.stream("ddpm.data");
    let mut noise_rng = seeds.stream("ddpm.noise");

    let mut model = Ddpm::init(schedule.clone(), arch, mode, &mut init_rng)?;
    let mut opts: Vec<Adam> =
        model.stores().iter().map(|_| Adam::new(params.lr).with_clip(params.grad_clip)).collect();
    let mut emas: Option<Vec<Ema>> =
        params.ema_decay.map(|d| model.stores().iter().map(|s| Ema::new(s, d)).collect());
    let half = params.batch_size / 2;
    let mut log = LossLog::default();

    for step in 0..params.steps {
        let (x_hw, _, c_hw) = draw_batch(hw, half, params.null_rate, &mut data_rng);
        let (x_mp, _, c_mp) = draw_batch(mp, params.batch_size - half, params.null_rate, &mut data_rng);
        let bound = model.bind(true);
        let l_hw = ddpm_loss(&bound, &x_hw, &Conditioning::new(Domain::Handwritten, c_hw), schedule, &mut noise_rng)?;
        let l_mp = ddpm_loss(&bound, &x_mp, &Conditioning::new(Domain::Printed, c_mp), schedule, &mut noise_rng)?;
        let loss = l_hw.add(&l_mp).scale(0.5);
        let value = loss.item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("ddpm loss at step {step}")));
        }
        let sets: Vec<&Bound> = bound.bound().iter().collect();
        let grads = grads_of(&loss, &sets);
        drop(bound);
        for ((opt, store), g) in opts.iter_mut().zip(model.stores_mut()).zip(&grads) {
            opt.step(store, g);
        }
        if let Some(emas) = emas.as_mut() {
            for (e, s) in emas.iter_mut().zip(model.stores()) {
                e.update(s);
            }
        }
        log.losses.push(value);
        if params.log_every > 0 && (step + 1) % params.log_every == 0 {
            log::info!("ddpm step {}/{} loss {:.5}", step + 1, params.steps, value);
        }
        progress(step, value);
    }
    if let Some(emas) = emas {
        for (store, e) in model.stores_mut().iter_mut().zip(emas) {
            *store = e.shadow().clone();
        }
    }
    model.set_training_meta(serde_json::json!({
        "seed": seed,
        "params": params,
        "hw_items": hw.len(),
        "mp_items": mp.len(),
    }));
    Ok((model, log))
}
