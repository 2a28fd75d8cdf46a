//! The clean-label backdoor attacker.
//!
//! The adversary controls one or more participants and never sees labels,
//! the top model, or other participants' shards. Its pipeline: train a
//! surrogate classifier on auxiliary embeddings, infer training labels,
//! pick a source/target class pair, place a trigger where saliency is
//! highest, then learn norm-bounded poison noise that drags target-class
//! embeddings toward triggered source embeddings.
//!
//! Everything in this module takes only what the threat model grants: the
//! adversary's own shard rows, its own bottom model, its auxiliary set, and
//! the gradients the protocol routes back (which update its bottom for it).

mod attack;
mod poison;
mod selection;
mod surrogate;
mod trigger;

pub use attack::{
    AdversaryView, AttackSchedule, Coalition, EpsilonRule, PoisonHook, TriggerPlacement,
    TriggerTemplate,
};
pub use poison::{optimize_poison, optimize_poison_warm};
pub use selection::{select_classes, ClassPair, SelectionStrategy};
pub use surrogate::{
    infer_labels, train_surrogate, vote_labels, AuxiliarySet, LabelEstimates, SurrogateModel,
    UNRECOGNIZED,
};
pub use trigger::{
    apply_trigger, plan_trigger_window, split_trigger, FillPattern, GridWindow, TriggerSpec,
};
