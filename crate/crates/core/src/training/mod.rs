//! Adversarial objectives, the optimizer and the alternating training loop.

mod adam;
mod config;
mod losses;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use config::{Objective, TrainConfig};
pub use losses::{
    discriminator_loss, discriminator_loss_with, fake_distributions, generator_loss, gradient_penalty, gradient_penalty_with, interpolate, interpolate_with,
    teacher_inputs, LossParts,
};
pub use trainer::{
    train_loop, train_step, BleuValidator, Decision, EarlyStopping, EpochRecord, StepReport, TrainData, TrainOutcome,
    TrainState, Validator,
};
