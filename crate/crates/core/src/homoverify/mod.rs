//! Exact tabular checks of the homomorphism conditions, policy lifting and
//! the latent/intermediate policy-gradient identity.

pub mod homomorphism;
pub mod mdp;
pub mod prop2;

pub use homomorphism::{
    check_homomorphism, check_stochastic_homomorphism, lift_policy, mirror_quotient, quotient, verify_lifting,
    HomomorphismMap, HomomorphismReport, LiftedPolicy, LiftingCheck, MirrorQuotient, StochasticMdp, StochasticViolation,
    Violation, MIRROR_ACTION,
};
pub use mdp::TabularMdp;
pub use prop2::{check_proposition2, stochastic_decoder_probe, Prop2Instance, Prop2Report, LATENT_BINS};
