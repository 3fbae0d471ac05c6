//! Cycle, adversarial and identity objectives, and the discriminator
//! gradient penalty.

use cycledm_tensor::{grad, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nets::{Converter, Critic};
use crate::batch::ClassToken;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f32 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionHyperparams {
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub gp_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f32,
}

impl Default for ConversionHyperparams {
    fn default() -> Self {
        Self { lambda_cycle: 2.0, lambda_identity: 1.0, gp_weight: 10.0, batch_size: 64, steps: 400, lr: 2e-4 }
    }
}

impl ConversionHyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("lambda_cycle", self.lambda_cycle), ("lambda_identity", self.lambda_identity), ("gp_weight", self.gp_weight)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 || self.steps == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("conversion batch_size, steps and lr must be positive".into()));
        }
        Ok(())
    }
}

fn same_shape(a: &Var, b: &Var, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn l1(a: &Var, b: &Var) -> Var {
    a.sub(b).abs().mean()
}

/// `E|G(F(x, c), c) - x| + E|F(G(x', c'), c') - x'|`, per-pixel means.
pub fn cycle_loss(
    f: &dyn Converter,
    g: &dyn Converter,
    x_t: &Var,
    x_prime_t: &Var,
    c: &[ClassToken],
    c_prime: &[ClassToken],
) -> Result<Var> {
    let fx = f.convert(x_t, c);
    same_shape(&fx, x_t, "F output")?;
    let gx = g.convert(x_prime_t, c_prime);
    same_shape(&gx, x_prime_t, "G output")?;
    cycle_from(f, g, &fx, &gx, x_t, x_prime_t, c, c_prime)
}

/// [`cycle_loss`] given the already computed `F(x, c)` and `G(x', c')`.
#[allow(clippy::too_many_arguments)]
fn cycle_from(
    f: &dyn Converter,
    g: &dyn Converter,
    fx: &Var,
    gx: &Var,
    x_t: &Var,
    x_prime_t: &Var,
    c: &[ClassToken],
    c_prime: &[ClassToken],
) -> Result<Var> {
    let back = g.convert(fx, c);
    same_shape(&back, x_t, "G(F(x)) output")?;
    let fwd = f.convert(gx, c_prime);
    same_shape(&fwd, x_prime_t, "F(G(x')) output")?;
    Ok(l1(&back, x_t).add(&l1(&fwd, x_prime_t)))
}

/// `E|F(x', c') - x'| + E|G(x, c) - x|`; each network sees the class of its input.
pub fn identity_loss(
    f: &dyn Converter,
    g: &dyn Converter,
    x_t: &Var,
    x_prime_t: &Var,
    c: &[ClassToken],
    c_prime: &[ClassToken],
) -> Result<Var> {
    let fx = f.convert(x_prime_t, c_prime);
    same_shape(&fx, x_prime_t, "F output")?;
    let gx = g.convert(x_t, c);
    same_shape(&gx, x_t, "G output")?;
    Ok(l1(&fx, x_prime_t).add(&l1(&gx, x_t)))
}

/// Both views of the log-loss for one generator/discriminator pair.
pub struct AdversarialTerms {
    /// `-E[log D(gen(source))]`, minimised by the generator.
    pub gen_term: Var,
    /// `E[log D(real)] + E[log(1 - D(gen(source)))]`, maximised by the discriminator.
    pub disc_term: Var,
}

fn log_prob(logits: &Var) -> Var {
    logits.sigmoid().clamp_min(LOG_FLOOR).log()
}

fn log_one_minus(logits: &Var) -> Var {
    logits.sigmoid().neg().add_scalar(1.0).clamp_min(LOG_FLOOR).log()
}

fn check_scores(s: &Var, what: &str) -> Result<()> {
    if s.value().data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} discriminator score")));
    }
    Ok(())
}

/// Log-loss for `gen` against `disc`: `real` is drawn from the discriminator's
/// domain, `source` from the other one and is passed through `gen`.
pub fn adversarial_loss(
    gen: &dyn Converter,
    disc: &dyn Critic,
    real: &Var,
    real_classes: &[ClassToken],
    source: &Var,
    source_classes: &[ClassToken],
) -> Result<AdversarialTerms> {
    let fake = gen.convert(source, source_classes);
    same_shape(&fake, source, "generator output")?;
    let s_real = disc.score(real, real_classes);
    let s_fake = disc.score(&fake, source_classes);
    check_scores(&s_real, "real")?;
    check_scores(&s_fake, "fake")?;
    Ok(AdversarialTerms {
        gen_term: log_prob(&s_fake).mean().neg(),
        disc_term: log_prob(&s_real).mean().add(&log_one_minus(&s_fake).mean()),
    })
}

/// `E[(|grad_x D(x_hat, c)|_2 - 1)^2]` at `x_hat = u real + (1 - u) fake`,
/// one `u ~ U(0, 1)` per item. Differentiable in the critic's parameters.
pub fn gradient_penalty(
    disc: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    classes: &[ClassToken],
    rng: &mut impl Rng,
) -> Result<Var> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("penalty batches differ: {:?} vs {:?}", real.shape(), fake.shape())));
    }
    let n = real.shape()[0];
    let per = real.numel() / n.max(1);
    let u: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
    let mut mix = Vec::with_capacity(real.numel());
    for (i, &ui) in u.iter().enumerate() {
        let r = &real.data()[i * per..(i + 1) * per];
        let f = &fake.data()[i * per..(i + 1) * per];
        mix.extend(r.iter().zip(f).map(|(&a, &b)| ui * a + (1.0 - ui) * b));
    }
    let x_hat = Var::param(Tensor::new(real.shape().to_vec(), mix));
    let scores = disc.score(&x_hat, classes);
    check_scores(&scores, "interpolate")?;
    let gx = grad(&scores.sum(), &[&x_hat], true).remove(0);
    let mut reduce = vec![1; real.shape().len()];
    reduce[0] = n;
    let norm = gx.square().sum_to(&reduce).add_scalar(1e-12).sqrt();
    let pen = norm.add_scalar(-1.0).square().mean();
    if !pen.item().is_finite() {
        return Err(Error::NonFinite("gradient penalty".into()));
    }
    Ok(pen)
}

/// A converter that returns a precomputed output whatever its input.
fn reuse(out: &Var) -> impl Fn(&Var, &[ClassToken]) -> Var {
    let out = out.clone();
    move |_: &Var, _: &[ClassToken]| out.clone()
}

/// Generator-side terms of the total objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParts {
    /// `-E log D'(F(x, c))`
    pub adv_f: f64,
    /// `-E log D(G(x', c'))`
    pub adv_g: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
}

/// Discriminator-side terms; `disc_*` are the log-likelihoods being maximised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParts {
    /// Log-likelihood value for `D'` against `F`.
    pub disc_f: f64,
    /// Log-likelihood value for `D` against `G`.
    pub disc_g: f64,
    pub gp_d: f64,
    pub gp_d_prime: f64,
    /// `-(disc_f + disc_g) + gp_weight (gp_d + gp_d_prime)`, the quantity minimised.
    pub total: f64,
}

impl GeneratorParts {
    /// Weighted sum of the parts, combined in `f64`.
    pub fn recombine(&self, h: &ConversionHyperparams) -> f64 {
        self.adv_f + self.adv_g + h.lambda_cycle * self.cycle + h.lambda_identity * self.identity
    }
}

impl DiscriminatorParts {
    pub fn recombine(&self, h: &ConversionHyperparams) -> f64 {
        -(self.disc_f + self.disc_g) + h.gp_weight * (self.gp_d + self.gp_d_prime)
    }
}

/// Unpaired noisy batches at `t_star` with their class tokens.
pub struct NoisyBatches<'a> {
    pub x_t: &'a Var,
    pub c: &'a [ClassToken],
    pub x_prime_t: &'a Var,
    pub c_prime: &'a [ClassToken],
}

/// The four networks of a conversion pair.
pub struct Networks<'a> {
    pub f: &'a dyn Converter,
    pub g: &'a dyn Converter,
    pub d: &'a dyn Critic,
    pub d_prime: &'a dyn Critic,
}

/// Objective minimised by `F` and `G`, with its parts.
pub fn generator_objective(
    nets: &Networks<'_>,
    b: &NoisyBatches<'_>,
    h: &ConversionHyperparams,
) -> Result<(Var, GeneratorParts)> {
    // F(x) and G(x') feed both the adversarial and the cycle terms.
    let fx = nets.f.convert(b.x_t, b.c);
    same_shape(&fx, b.x_t, "F output")?;
    let gx = nets.g.convert(b.x_prime_t, b.c_prime);
    same_shape(&gx, b.x_prime_t, "G output")?;
    let (fx_out, gx_out) = (reuse(&fx), reuse(&gx));
    let adv_f = adversarial_loss(&fx_out, nets.d_prime, b.x_prime_t, b.c_prime, b.x_t, b.c)?.gen_term;
    let adv_g = adversarial_loss(&gx_out, nets.d, b.x_t, b.c, b.x_prime_t, b.c_prime)?.gen_term;
    let cyc = cycle_from(nets.f, nets.g, &fx, &gx, b.x_t, b.x_prime_t, b.c, b.c_prime)?;
    let idt = identity_loss(nets.f, nets.g, b.x_t, b.x_prime_t, b.c, b.c_prime)?;
    let loss = adv_f
        .add(&adv_g)
        .add(&cyc.scale(h.lambda_cycle as f32))
        .add(&idt.scale(h.lambda_identity as f32));
    let mut parts = GeneratorParts {
        adv_f: adv_f.item() as f64,
        adv_g: adv_g.item() as f64,
        cycle: cyc.item() as f64,
        identity: idt.item() as f64,
        total: 0.0,
    };
    parts.total = parts.recombine(h);
    Ok((loss, parts))
}

/// Objective minimised by `D` and `D'`, with its parts. Generator outputs
/// are treated as constants.
pub fn discriminator_objective(
    nets: &Networks<'_>,
    b: &NoisyBatches<'_>,
    h: &ConversionHyperparams,
    rng: &mut impl Rng,
) -> Result<(Var, DiscriminatorParts)> {
    let fake_prime = nets.f.convert(b.x_t, b.c).detach();
    let fake = nets.g.convert(b.x_prime_t, b.c_prime).detach();
    let from_f = reuse(&fake_prime);
    let from_g = reuse(&fake);
    let disc_f = adversarial_loss(&from_f, nets.d_prime, b.x_prime_t, b.c_prime, b.x_t, b.c)?.disc_term;
    let disc_g = adversarial_loss(&from_g, nets.d, b.x_t, b.c, b.x_prime_t, b.c_prime)?.disc_term;
    let gp_dp = gradient_penalty(nets.d_prime, b.x_prime_t.value(), fake_prime.value(), b.c_prime, rng)?;
    let gp_d = gradient_penalty(nets.d, b.x_t.value(), fake.value(), b.c, rng)?;
    let loss = disc_f.add(&disc_g).neg().add(&gp_d.add(&gp_dp).scale(h.gp_weight as f32));
    let mut parts = DiscriminatorParts {
        disc_f: disc_f.item() as f64,
        disc_g: disc_g.item() as f64,
        gp_d: gp_d.item() as f64,
        gp_d_prime: gp_dp.item() as f64,
        total: 0.0,
    };
    parts.total = parts.recombine(h);
    Ok((loss, parts))
}

/// Both sides of the total objective evaluated at the same parameters.
pub struct TotalLoss {
    pub generator: Var,
    pub generator_parts: GeneratorParts,
    pub discriminator: Var,
    pub discriminator_parts: DiscriminatorParts,
}

pub fn total_loss(
    nets: &Networks<'_>,
    b: &NoisyBatches<'_>,
    h: &ConversionHyperparams,
    rng: &mut impl Rng,
) -> Result<TotalLoss> {
    let (discriminator, discriminator_parts) = discriminator_objective(nets, b, h, rng)?;
    let (generator, generator_parts) = generator_objective(nets, b, h)?;
    Ok(TotalLoss { generator, generator_parts, discriminator, discriminator_parts })
}
