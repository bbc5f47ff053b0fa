//! Data ingestion, leave-one-out splitting, negative sampling, and
//! synthetic-dataset generation.

pub mod interactions;
pub mod movielens;
pub mod negative;
pub mod split;
pub mod synthetic;

pub use interactions::{
    build_dataset, load_interactions, parse_interactions, Dataset, IdMap, Interaction,
    LoadReport, LoadedInteractions, UserSequence,
};
pub use negative::NegativeSampler;
pub use split::{leave_one_out_split, SplitDataset, SplitUser, TrainWindow};
pub use synthetic::{
    generate_synthetic_dataset, generate_with_ground_truth, write_synthetic_files, SyntheticSpec,
};
