//! Hate-speech identification toolkit: tweet normalization, character- and
//! word-level LSTM classifiers, pretrained-encoder features feeding a GRU,
//! encoder fine-tuning, exhaustive grid search and F1 evaluation.

pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod labels;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod pretrained;
pub mod search;
pub mod train;
pub mod vocab;

pub use corpus::{
    class_stats, load_tsv, load_unlabeled_tsv, stratified_split, write_tsv, Dataset,
    LabelHistogram, LabeledText, Provenance, SplitManifest, SplitSpec,
};
pub use error::{Error, Result};
pub use evaluate::{confusion_matrix, f1_scores, ConfusionMatrix, EvalReport};
pub use labels::{CoarseLabel, FineLabel, Task, TaskMode};
pub use models::{
    build_model, param_count, Family, HyperParams, ModelInput, ModelSpec, RecurrentClassifier,
};
pub use preprocess::{preprocess, PreprocessConfig, Preprocessor};
pub use pretrained::{
    encode_features, encoder_stub, Encoder, EncoderDescriptor, EncoderVariant, FeatureCache,
    FeatureMatrix, FeatureMode, VariantName,
};
pub use search::{
    enumerate_grid, run_grid, GridAxis, GridOptions, GridRow, GridSpace, ResultsTable, RunStatus,
};
pub use train::{
    fit, load_checkpoint, save_checkpoint, train, CheckpointManifest, EarlyStopper, EpochRecord,
    ModelBody, TrainConfig, TrainHistory, TrainRequest, TrainedModel,
};
pub use vocab::{
    build_vocab, load_pretrained_embeddings, EmbeddingMatrix, IdSequence, Level, Vocab,
};
