//! Noise-robust cross-modal matching on paired embeddings.
//!
//! The pipeline filters out low-similarity pairs before training (self-drop),
//! weights the survivors by a two-component mixture posterior over the
//! similarity distribution (confidence), and by the loss delta a one-step
//! siamese update produces on a memory bank of clean evaluation entries
//! (significance). The base model then minimizes the dual-weighted
//! symmetric contrastive loss.

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod partition;
pub mod seed;
pub mod significance;
pub mod trainer;

pub use dataset::{generate, load_pairs, save_pairs, GeneratorConfig, PairDataset};
pub use encoder::{
    dataset_diagonal, encode_image, encode_text, similarity_matrix, EncoderParams, SimilarityTable,
    DEFAULT_LOGIT_SCALE,
};
pub use error::{Error, Result};
pub use evaluation::{
    clean_subset, discard_purity, full_report, recall_at_k, stability, MetricsReport,
    StabilityReport,
};
pub use objective::{
    cross_entropy_row, info_nce, loss_and_gradients, optimizer_step, weighted_loss, BatchLoss,
    Direction, OptimizerState, ParamGradients,
};
pub use partition::{
    confidence_weights, fit_gmm, qua_partition, self_drop, similarity_histogram,
    write_histogram_csv, ConfidenceWeights, GmmParams, PartialDataset, QuaLabel,
};
pub use significance::{
    build_memory_bank, entry_losses, significance_weights, BankEntry, MemoryBank,
    SignificanceRecord,
};
pub use trainer::{
    baseline_train, drop_ratio_train, run_log_lines, train, EpochReport, TrainConfig, TrainOutcome,
};
