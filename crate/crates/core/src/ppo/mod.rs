//! Proximal policy optimization with a hand-written MLP, trained on the planar balance
//! task.

mod env;
mod net;
mod objective;
mod train;

pub use env::{
    action_to_torque, observe, reward, BalanceEnv, EnvConfig, RewardOutcome, RewardSpec,
    StepOutcome,
};
pub use net::{Mlp, MlpTrace, PolicyMeta, PolicyNet};
pub use objective::{
    clipped_objective, compute_advantages, loss_and_grad, max_gradient_error, normalize_advantages,
    LossCoefficients, LossTerms, PolicyGrad, Sample, Transition,
};
pub use train::{
    evaluate_policy, initial_policy, save_curve, train, write_curve, CurveRecord, Hyperparameters,
    RmsProp, TrainingRun,
};
