use cycledm_tensor::nn::grads_of;
use cycledm_tensor::optim::Adam;
use cycledm_tensor::{randn, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    discriminator_objective, generator_objective, ConversionHyperparams, DiscriminatorParts, GeneratorParts, Networks,
    NoisyBatches,
};
use super::nets::ConversionArch;
use super::pair::ConversionPair;
use crate::batch::{ClassToken, Domain, ImageBatch, NUM_CLASSES};
use crate::diffusion::{q_sample, Ddpm};
use crate::error::{Error, Result};
use crate::rng::Seeds;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConversionLog {
    pub generator: Vec<GeneratorParts>,
    pub discriminator: Vec<DiscriminatorParts>,
}

impl ConversionLog {
    /// Per-step `cycle + identity`, the reconstruction part of the objective.
    pub fn reconstruction(&self) -> Vec<f64> {
        self.generator.iter().map(|p| p.cycle + p.identity).collect()
    }
}

/// Item indices grouped by class.
fn by_class(b: &ImageBatch) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); NUM_CLASSES];
    for (i, &c) in b.classes().iter().enumerate() {
        out[c as usize].push(i);
    }
    out
}

fn gather(b: &ImageBatch, idx: &[usize]) -> Tensor {
    let (h, w) = b.resolution();
    let mut px = Vec::with_capacity(idx.len() * h * w);
    for &i in idx {
        px.extend_from_slice(b.image(i));
    }
    Tensor::new(vec![idx.len(), 1, h, w], px)
}

/// Trains `F`, `G`, `D` and `D'` at `t_star` with the DDPM held fixed.
///
/// Every step draws a class vector, then for each class an independent
/// random image from each domain (no instance pairing), diffuses both to
/// `t_star`, updates the discriminators and then the conversion networks.
#[allow(clippy::too_many_arguments)]
pub fn train_conversion(
    ddpm: &Ddpm,
    hw: &ImageBatch,
    mp: &ImageBatch,
    t_star: usize,
    arch: &ConversionArch,
    hyper: &ConversionHyperparams,
    seed: u64,
    mut progress: impl FnMut(usize, &GeneratorParts, &DiscriminatorParts),
) -> Result<(ConversionPair, ConversionLog)> {
    hyper.validate()?;
    ddpm.schedule().check_step(t_star).map_err(|_| {
        Error::InvalidArgument(format!("t_star {t_star} outside 1..={}", ddpm.schedule().steps()))
    })?;
    for (b, d) in [(hw, Domain::Handwritten), (mp, Domain::Printed)] {
        if b.is_empty() {
            return Err(Error::Data(format!("no {d} images for conversion training")));
        }
        if b.domain() != d {
            return Err(Error::InvalidArgument(format!("expected a {d} batch, got {}", b.domain())));
        }
    }
    let (hw_idx, mp_idx) = (by_class(hw), by_class(mp));
    let shared: Vec<u8> =
        (0..NUM_CLASSES as u8).filter(|&c| !hw_idx[c as usize].is_empty() && !mp_idx[c as usize].is_empty()).collect();
    if shared.is_empty() {
        return Err(Error::Data("the two domains share no class".into()));
    }

    let fingerprint = ddpm.fingerprint();
    let seeds = Seeds::new(seed);
    let mut init_rng = seeds.stream("conv.init");
    let mut data_rng = seeds.stream("conv.data");
    let mut noise_rng = seeds.stream("conv.noise");
    let mut gp_rng = seeds.stream("conv.gp");

    let mut pair = ConversionPair::init(arch, t_star, hyper.clone(), ddpm, &mut init_rng)?;
    let mut opts: Vec<Adam> =
        (0..4).map(|_| Adam::new(hyper.lr).with_betas(0.5, 0.999).with_clip(10.0)).collect();
    let mut log = ConversionLog::default();
    let schedule = ddpm.schedule();

    for step in 0..hyper.steps {
        let classes: Vec<u8> = (0..hyper.batch_size).map(|_| shared[data_rng.gen_range(0..shared.len())]).collect();
        let pick = |idx: &Vec<Vec<usize>>, rng: &mut crate::rng::Stream| -> Vec<usize> {
            classes
                .iter()
                .map(|&c| {
                    let pool = &idx[c as usize];
                    pool[rng.gen_range(0..pool.len())]
                })
                .collect()
        };
        let hw_pick = pick(&hw_idx, &mut data_rng);
        let mp_pick = pick(&mp_idx, &mut data_rng);
        let x0 = gather(hw, &hw_pick);
        let x0p = gather(mp, &mp_pick);
        let eps = randn(&mut noise_rng, x0.shape().to_vec());
        let eps_p = randn(&mut noise_rng, x0p.shape().to_vec());
        let x_t = Var::constant(q_sample(&x0, t_star, &eps, schedule)?);
        let x_prime_t = Var::constant(q_sample(&x0p, t_star, &eps_p, schedule)?);
        let c = ClassToken::from_classes(&classes);
        let batches = NoisyBatches { x_t: &x_t, c: &c, x_prime_t: &x_prime_t, c_prime: &c };

        // discriminators
        let (d_grads, d_parts) = {
            let (f, g, d, dp) = (pair.f(false), pair.g(false), pair.d(true), pair.d_prime(true));
            let nets = Networks { f: &f, g: &g, d: &d, d_prime: &dp };
            let (loss, parts) = discriminator_objective(&nets, &batches, hyper, &mut gp_rng)?;
            (grads_of(&loss, &[&d.params, &dp.params]), parts)
        };
        {
            let [_, _, sd, sdp] = pair.stores_mut();
            opts[2].step(sd, &d_grads[0]);
            opts[3].step(sdp, &d_grads[1]);
        }

        // conversion networks
        let (g_grads, g_parts) = {
            let (f, g, d, dp) = (pair.f(true), pair.g(true), pair.d(false), pair.d_prime(false));
            let nets = Networks { f: &f, g: &g, d: &d, d_prime: &dp };
            let (loss, parts) = generator_objective(&nets, &batches, hyper)?;
            (grads_of(&loss, &[&f.params, &g.params]), parts)
        };
        if !g_parts.total.is_finite() || !d_parts.total.is_finite() {
            return Err(Error::NonFinite(format!("conversion loss at step {step}")));
        }
        {
            let [sf, sg, _, _] = pair.stores_mut();
            opts[0].step(sf, &g_grads[0]);
            opts[1].step(sg, &g_grads[1]);
        }

        log::debug!(
            "conv t={t_star} step {} cycle {:.4} identity {:.4} adv {:.4}/{:.4}",
            step + 1,
            g_parts.cycle,
            g_parts.identity,
            g_parts.adv_f,
            g_parts.adv_g
        );
        progress(step, &g_parts, &d_parts);
        log.generator.push(g_parts);
        log.discriminator.push(d_parts);
    }

    if ddpm.fingerprint() != fingerprint {
        return Err(Error::Incompatible("DDPM parameters changed during conversion training".into()));
    }
    pair.set_training_meta(serde_json::json!({
        "seed": seed,
        "hw_items": hw.len(),
        "mp_items": mp.len(),
    }));
    Ok((pair, log))
}
