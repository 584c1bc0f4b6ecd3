//! Belief-store schema, JSONL loading, update-label policy and the
//! synthetic world generator.

mod labels;
mod store;
mod synthetic;

pub use labels::{draw_update_label, LabelPolicy};
pub use store::{BeliefRecord, BeliefStore, EntailedItem, NeutralItem, Split, Task, TokenSeq};
pub use synthetic::{default_relations, generate_synthetic_store, RelationSpec, SyntheticStores, SyntheticWorldConfig};

/// The two binary labels, in class order.
pub const TRUE_LABEL: &str = "True";
pub const FALSE_LABEL: &str = "False";
