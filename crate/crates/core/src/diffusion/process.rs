//! Forward noising, single reverse steps, partial denoising and the
//! noise-prediction objective.

use cycledm_tensor::{randn, Tensor, Var};
use rand::Rng;

use super::NoiseSchedule;
use crate::batch::Conditioning;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// A conditional noise estimator `eps(x_t, class, domain, t)`.
///
/// Implementations must return a tensor shaped like `x_t` and be
/// deterministic for fixed inputs and parameters.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Var, steps: &[usize], cond: &Conditioning) -> Var;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, x_t: &Var, steps: &[usize], cond: &Conditioning) -> Var {
        (**self).predict_noise(x_t, steps, cond)
    }
}

fn batch_len(x: &Tensor) -> Result<usize> {
    match x.shape() {
        [n, _, _, _] => Ok(*n),
        s => Err(Error::Shape(format!("expected an NCHW batch, got {s:?}"))),
    }
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, each item with its own `t`.
pub fn q_sample_each(x0: &Tensor, steps: &[usize], eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!("noise {:?} does not match images {:?}", eps.shape(), x0.shape())));
    }
    let n = batch_len(x0)?;
    if steps.len() != n {
        return Err(Error::Shape(format!("{} timesteps for {} images", steps.len(), n)));
    }
    let per = x0.numel() / n.max(1);
    let mut out = vec![0.0f32; x0.numel()];
    for (i, &t) in steps.iter().enumerate() {
        if t > schedule.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 0..={}", schedule.steps())));
        }
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let range = i * per..(i + 1) * per;
        for ((o, &x), &e) in out[range.clone()].iter_mut().zip(&x0.data()[range.clone()]).zip(&eps.data()[range]) {
            *o = a * x + b * e;
        }
    }
    Ok(Tensor::new(x0.shape().to_vec(), out))
}

/// Diffuses a clean batch to step `t` with caller-supplied noise.
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_step(t)?;
    let n = batch_len(x0)?;
    q_sample_each(x0, &vec![t; n], eps, schedule)
}

/// One reverse step `x_t -> x_{t-1}`:
/// `(x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z`.
pub fn p_sample_step(
    model: &dyn NoisePredictor,
    x_t: &Tensor,
    t: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    z: &Tensor,
) -> Result<Tensor> {
    if t == 0 {
        return Err(Error::InvalidArgument("no reverse step from t = 0".into()));
    }
    schedule.check_step(t)?;
    if z.shape() != x_t.shape() {
        return Err(Error::Shape(format!("noise {:?} does not match x_t {:?}", z.shape(), x_t.shape())));
    }
    let n = batch_len(x_t)?;
    if cond.len() != n {
        return Err(Error::Shape(format!("{} conditions for {} images", cond.len(), n)));
    }
    let eps_hat = model.predict_noise(&Var::constant(x_t.clone()), &vec![t; n], cond);
    let eps_hat = eps_hat.value();
    if eps_hat.shape() != x_t.shape() {
        return Err(Error::Shape(format!("predictor returned {:?} for input {:?}", eps_hat.shape(), x_t.shape())));
    }
    let inv_sqrt_alpha = (1.0 / schedule.alpha(t).sqrt()) as f32;
    let coef = (schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt()) as f32;
    let sigma = schedule.sigma(t) as f32;
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(z.data())
        .map(|((&x, &e), &zz)| inv_sqrt_alpha * (x - coef * e) + sigma * zz)
        .collect();
    Ok(Tensor::new(x_t.shape().to_vec(), data))
}

/// Runs reverse steps from `t_start` down to 0.
///
/// Fresh `z` is drawn from `rng` for every step except the last, which
/// uses `z = 0` so the result is noise-free. `t_start = 0` returns the
/// input unchanged without touching `rng`.
pub fn denoise_from(
    model: &dyn NoisePredictor,
    x_t: &Tensor,
    t_start: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    rng: &mut Stream,
) -> Result<Tensor> {
    denoise_traced(model, x_t, t_start, cond, schedule, rng, |_, _| {})
}

/// [`denoise_from`] that reports every intermediate `x_{t-1}` to `observe`.
pub fn denoise_traced(
    model: &dyn NoisePredictor,
    x_t: &Tensor,
    t_start: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    rng: &mut Stream,
    mut observe: impl FnMut(usize, &Tensor),
) -> Result<Tensor> {
    if t_start > schedule.steps() {
        return Err(Error::InvalidArgument(format!("start step {t_start} beyond T = {}", schedule.steps())));
    }
    let mut x = x_t.clone();
    for t in (1..=t_start).rev() {
        let z = if t > 1 { randn(rng, x.shape().to_vec()) } else { Tensor::zeros(x.shape().to_vec()) };
        x = p_sample_step(model, &x, t, cond, schedule, &z)?;
        observe(t - 1, &x);
    }
    Ok(x)
}

/// Noise-prediction MSE for given timesteps and noise:
/// mean over all elements of `(eps - eps_theta(x_t, c, t))^2`.
pub fn ddpm_loss_at(
    model: &dyn NoisePredictor,
    x0: &Tensor,
    cond: &Conditioning,
    steps: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Var> {
    if let Some(&t) = steps.iter().find(|&&t| t == 0) {
        return Err(Error::InvalidArgument(format!("training timestep {t} must be >= 1")));
    }
    if cond.len() != batch_len(x0)? {
        return Err(Error::Shape(format!("{} conditions for {} images", cond.len(), x0.shape()[0])));
    }
    let x_t = q_sample_each(x0, steps, eps, schedule)?;
    let pred = model.predict_noise(&Var::constant(x_t), steps, cond);
    if pred.shape() != eps.shape() {
        return Err(Error::Shape(format!("predictor returned {:?} for input {:?}", pred.shape(), eps.shape())));
    }
    Ok(Var::constant(eps.clone()).sub(&pred).square().mean())
}

/// Draws `t ~ U{1..T}` then `eps ~ N(0, I)` per item and evaluates [`ddpm_loss_at`].
pub fn ddpm_loss(
    model: &dyn NoisePredictor,
    x0: &Tensor,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    rng: &mut Stream,
) -> Result<Var> {
    let n = batch_len(x0)?;
    let steps: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=schedule.steps())).collect();
    let eps = randn(rng, x0.shape().to_vec());
    ddpm_loss_at(model, x0, cond, &steps, &eps, schedule)
}
