//! Minimal reverse-mode differentiable array engine.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, StoredParam, MAGIC, VERSION};
pub use gradcheck::{analytic_grads, grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{clipped_offset, sigmoid, BatchStats, Graph, Var};
pub use params::{GradStore, Init, ParamId, ParamStore, Parameter};
pub use tensor::{log_add_exp, Tensor};

#[cfg(test)]
mod tests;
