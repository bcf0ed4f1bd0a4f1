//! Weak (flip + reflect-pad crop) and strong (two random photometric or
//! geometric transforms + cutout) augmentation, and the two mixing operators.

mod mix;
mod strong;
mod weak;

pub use mix::{
    mix_pair, mixup, mixup_with_lambda, resize_bilinear, resizemix, resizemix_with_lambda,
    sample_lambda, MixOutcome, MixStrategy, PatchRect, LAMBDA_CLAMP,
};
pub use strong::{apply_op, cutout, strong_augment, StrongConfig, StrongOp, STRONG_POOL};
pub use weak::{weak_augment, weak_augment_with, WEAK_PAD};
