//! Multimodal item representation: tokenizer, the item encoder with its
//! `[Cur_Item]` readout, the embedding cache, fine-tuning corpus generators,
//! the binary embedding file format, and modality-alignment pretraining.

pub mod cache;
pub mod corpus;
pub mod embfile;
pub mod encoder;
pub mod pretrain;
pub mod record;
pub mod tokenizer;

pub use cache::{batch_encode, EmbeddingCache};
pub use corpus::{generate_it_corpus, generate_sa_corpus, generate_ub_corpus, sa_description,
    write_corpus_jsonl, CorpusOutput};
pub use embfile::{load_external_embeddings, save_embeddings, validate_coverage, EMB_MAGIC};
pub use encoder::{ItemEmbedding, ItemEncoder, ItemEncoderConfig, ModalityMask};
pub use pretrain::{pretrain_alignment, AlignmentPretrainConfig, AlignmentPretrainLog};
pub use record::{read_items_jsonl, write_items_jsonl, ItemRecord};
pub use tokenizer::tokenize;
