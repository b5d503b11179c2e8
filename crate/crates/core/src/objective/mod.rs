//! Losses, optimiser, schedule and training loops.

mod losses;
mod optim;
mod train;

pub use losses::{
    combine_graph, combine_losses, nll_sequence, weighted_bce, weighted_bce_value, LossWeights, BCE_EPS,
    NLL_EPS,
};
pub use optim::{Adam, PlateauSchedule, ScheduleEvent};
pub use train::{
    extgen_validation, selector_examples, selector_validation, train_extgen, train_selector, EpochLog,
    LossTotals, TrainReport,
};
