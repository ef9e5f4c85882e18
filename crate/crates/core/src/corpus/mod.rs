//! Interaction ingestion, per-user sequences, leave-one-out splits and
//! repetition statistics.

pub mod io;
mod load;
mod repetition;
mod sequences;
mod split;

pub use load::{load_interactions, DelimitedFormat, Interaction, LoadedInteractions};
pub use repetition::{repetition_stats, RepetitionCurve, RepetitionPoint};
pub use sequences::{build_sequences, Catalog, Corpus, UserSequence};
pub use split::{split_leave_one_out, EvalCase, SplitDataset, TrainWindow};
