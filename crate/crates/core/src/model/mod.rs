//! Small differentiable causal next-token language model with exact
//! gradients, greedy decoding, and a tabular bigram oracle.

mod backward;
mod decode;
mod forward;
mod objective;
mod optim;
mod params;
mod tabular;

pub use decode::{greedy_decode, greedy_decode_text};
pub use objective::{
    grad, DiffModel, NllObjective, Objective, SeqRowGrad, SequenceScorer, WeightedObjective,
};
pub use optim::{fine_tune, AdamW, FineTuneConfig, TrainReport};
pub use params::{Grads, Layout, ModelConfig, ModelParams};
pub use tabular::TabularLm;

pub(crate) use optim::epoch_seed;
