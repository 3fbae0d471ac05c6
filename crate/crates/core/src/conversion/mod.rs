//! Conversion between the noisy manifolds of the two domains at a fixed
//! timestep, and the SDEdit baseline.

mod convert;
mod losses;
mod nets;
mod pair;
mod train;

pub use convert::{convert, convert_with, convert_with_raw, sdedit_convert, RANGE_TOLERANCE};
pub use losses::{
    adversarial_loss, cycle_loss, discriminator_objective, generator_objective, gradient_penalty, identity_loss,
    total_loss, AdversarialTerms, ConversionHyperparams, DiscriminatorParts, GeneratorParts, Networks, NoisyBatches,
    TotalLoss, LOG_FLOOR,
};
pub use nets::{
    BoundConverter, BoundCritic, ConversionArch, ConversionNet, Converter, Critic, Discriminator, FnCritic,
    IdentityConverter,
};
pub use pair::{ConversionPair, PAIR_KIND};
pub use train::{train_conversion, ConversionLog};
