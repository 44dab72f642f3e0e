//! Corpus to training batches.

pub mod batch;
pub mod corpus;
pub mod dump;
pub mod generate;
pub mod instance;
pub mod masking;
pub mod vocab;

pub use batch::{pack_batch, pack_batches, Batch, IGNORE_TARGET};
pub use corpus::{encode_documents, parse_documents, read_documents, Document, TextDocument};
pub use dump::{load_instances, read_instances, write_instances};
pub use generate::{generate_instances, DataStats, InstanceSpec};
pub use instance::{
    make_sentence_pair_instance, validate_instance, PairSampler, TrainingInstance, SP_NEGATIVE,
    SP_POSITIVE,
};
pub use masking::{apply_masking, sample_span_length, MaskingConfig, MaskingReport};
pub use vocab::{Tokenizer, Vocabulary, WhitespaceTokenizer};
