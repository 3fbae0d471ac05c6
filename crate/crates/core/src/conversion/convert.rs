use cycledm_tensor::{randn, Tensor, Var};

use super::nets::{Converter, IdentityConverter};
use super::pair::ConversionPair;
use crate::batch::{Conditioning, Direction, ImageBatch};
use crate::diffusion::{denoise_from, q_sample, Ddpm};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Allowed overshoot of raw outputs beyond `[-1, 1]` before clamping.
pub const RANGE_TOLERANCE: f32 = 0.05;

fn check_source(x0: &ImageBatch, direction: Direction) -> Result<()> {
    if x0.domain() != direction.source() {
        return Err(Error::InvalidArgument(format!(
            "{} conversion needs {} inputs, got {}",
            direction.label(),
            direction.source(),
            x0.domain()
        )));
    }
    Ok(())
}

/// Diffuse to `t`, map with `converter`, denoise in the target domain.
/// Returns the unclamped result.
///
/// Randomness is consumed in a fixed order: the forward noise first, then
/// the reverse-process noise.
pub fn convert_with_raw(
    converter: &dyn Converter,
    x0: &ImageBatch,
    direction: Direction,
    t: usize,
    ddpm: &Ddpm,
    rng: &mut Stream,
) -> Result<Tensor> {
    check_source(x0, direction)?;
    let schedule = ddpm.schedule();
    if t == 0 {
        return Ok(x0.pixels().clone());
    }
    schedule.check_step(t)?;
    let eps = randn(rng, x0.pixels().shape().to_vec());
    let x_t = q_sample(x0.pixels(), t, &eps, schedule)?;
    let tokens = x0.tokens();
    let moved = converter.convert(&Var::constant(x_t.clone()), &tokens);
    if moved.shape() != x_t.shape() {
        return Err(Error::Shape(format!("converter returned {:?} for {:?}", moved.shape(), x_t.shape())));
    }
    let cond = Conditioning::new(direction.target(), tokens);
    denoise_from(&ddpm.predictor(), moved.value(), t, &cond, schedule, rng)
}

fn finish(raw: Tensor, x0: &ImageBatch, direction: Direction) -> Result<ImageBatch> {
    let over = raw.data().iter().fold(0f32, |m, v| m.max(v.abs() - 1.0));
    if over > RANGE_TOLERANCE {
        log::warn!("converted pixels exceed [-1, 1] by up to {over:.3} before clamping");
    }
    ImageBatch::new(raw.map(|v| v.clamp(-1.0, 1.0)), direction.target(), x0.classes().to_vec())
}

/// [`convert_with_raw`] followed by clamping to `[-1, 1]`.
pub fn convert_with(
    converter: &dyn Converter,
    x0: &ImageBatch,
    direction: Direction,
    t: usize,
    ddpm: &Ddpm,
    rng: &mut Stream,
) -> Result<ImageBatch> {
    let raw = convert_with_raw(converter, x0, direction, t, ddpm, rng)?;
    finish(raw, x0, direction)
}

/// CycleDM conversion with a trained pair. `t_star` must match the pair's.
pub fn convert(
    x0: &ImageBatch,
    direction: Direction,
    t_star: usize,
    pair: &ConversionPair,
    ddpm: &Ddpm,
    rng: &mut Stream,
) -> Result<ImageBatch> {
    if t_star != pair.t_star() {
        return Err(Error::Incompatible(format!(
            "conversion pair was trained for t = {}, asked to convert at t = {t_star}",
            pair.t_star()
        )));
    }
    pair.check_ddpm(ddpm)?;
    convert_with(&pair.converter(direction), x0, direction, t_star, ddpm, rng)
}

/// SDEdit: diffuse to `t_start` and denoise in the target domain with no
/// conversion network. `t_start = 0` returns the input.
pub fn sdedit_convert(
    x0: &ImageBatch,
    direction: Direction,
    t_start: usize,
    ddpm: &Ddpm,
    rng: &mut Stream,
) -> Result<ImageBatch> {
    check_source(x0, direction)?;
    if t_start == 0 {
        return Ok(x0.clone());
    }
    convert_with(&IdentityConverter, x0, direction, t_start, ddpm, rng)
}
