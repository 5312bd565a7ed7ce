//! Model files, IDX datasets, golden-output caching and the fixture trainer.

pub mod container;
pub mod golden;
pub mod idx;
pub mod train;

pub use container::{decode_network, encode_network, load_network, network_checksum, save_network};
pub use golden::{cache_golden_outputs, load_or_compute_golden, GoldenOutputs};
pub use idx::{load_idx_dataset, write_idx_pair, Dataset};
pub use train::{evaluate_accuracy, train_fixture, TrainConfig, TrainReport};
