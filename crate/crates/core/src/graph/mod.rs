//! Architectures, models, checkpoints and cost accounting.

mod checkpoint;
mod counting;
mod model;
mod spec;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC};
pub use counting::{count_flops, count_params, layer_costs, LayerCost};
pub use model::{LayerParams, Model, ParameterSet};
pub use spec::{ArchitectureSpec, LayerKind, LayerSpec, INPUT_BOUNDARY};
