//! Sequence labeling for code-mixed named entity recognition.
//!
//! * [`corpus`] reads, writes, repairs and mixes CoNLL/IOB2 datasets.
//! * [`features`] turns sentences into sparse window attributes.
//! * [`crf`] is a first-order linear-chain CRF with training and Viterbi decoding.
//! * [`eval`] scores predictions with exact-match entity F1 and confusion matrices.
//! * [`oracle`] holds brute-force references used to verify the CRF.
//! * [`synth`] generates separable corpora for end-to-end checks.

pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod features;
pub mod oracle;
pub mod synth;

pub use crate::corpus::{
    induce_tagset, iob_violations, mix_datasets, parse_conll, repair_iob, write_conll, ColumnSpec, Dataset, Sentence,
    Separator, Tag, TagColumn, TagSet, Token, Violation,
};
pub use crate::crf::{train, CrfModel, CrfWeights, TrainConfig, TrainHistory};
pub use crate::error::{Error, Result};
pub use crate::eval::{render_report, score_entities, token_confusion, EvalReport, ReportFormat};
pub use crate::features::{build_index, encode_dataset, EncodedSentence, FeatureIndex, TemplateConfig};
