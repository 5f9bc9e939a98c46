//! The compression engine.
//!
//! A [`CompressionPlan`] names new widths for some resizable layers.
//! [`slice`] turns it into [`SubProblem`]s, one per resized layer, each made
//! of the resized layer, the next parameterised layer and the frozen layers
//! after them. [`compress`] solves them one after another on activations
//! captured at the slice boundary, regressing onto the teacher's logits while
//! fitting the true labels; [`finetune`] then trains the assembled student
//! end to end.

mod cache;
mod engine;
mod plan;
mod slice;

pub use cache::{
    capture_activations, fingerprint, ActivationCache, CacheIndex, ACTIVATIONS_FILE, INDEX_FILE, LOGITS_FILE,
};
pub use engine::{
    compress, finetune, initial_slice, train_subproblem, CompressConfig, CompressOutcome, CompressStatus,
    SliceData, SubProblemOutcome, TeacherLogits,
};
pub use plan::{CompressionPlan, Order, PlanStop};
pub use slice::{slice, SubProblem};
