//! Losses, RMSProp, the training loop and gradient checking.

mod gradcheck;
mod loss;
mod rmsprop;
mod train;

pub use gradcheck::{gradient_check, relative_error, GradCheckReport, GRADCHECK_MAX_PARAMS, GRADCHECK_STEP};
pub use loss::{
    cram_loss, cram_loss_batch, cross_entropy, one_hot, plain_ce, predicted_class, sample_loss,
    softmax, teacher_mse, LossInputs, LossKind, LossValue,
};
pub use rmsprop::{rmsprop_step, OptimizerConfig, RmsProp};
pub use train::{
    accuracy, batch_gradients, evaluate, train, EpochRecord, Samples, StopRule, TrainOptions, TrainReport,
};
