//! The split-training protocol.
//!
//! Each round: every participant pushes its batch through its bottom model,
//! the server concatenates the embeddings, runs the top model, updates it on
//! the labels, and routes the embedding gradients back so participants can
//! update their bottoms. Labels exist only inside [`Server`]; participants
//! never see them, and the adversary hook can touch nothing but its own
//! participant's raw batch rows.

mod metrics;
mod round;

pub use metrics::{classification_metrics, evaluate_asr, evaluate_main_task, predict, MainTaskEval};
pub use round::{concat_embeddings, run_training_round, Participant, Role, RoundTrace, Server};

pub use crate::adversary::PoisonHook;
