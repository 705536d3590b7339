//! Corpus types, file formats, tokenization and synthetic data.

mod corpus;
mod synth;
mod vocab;

pub use corpus::{
    load_corpus, read_cloud, read_texts, split_dataset, write_cloud, write_corpus, ColoredPointCloud,
    Manifest, PairedCorpus, Split, TextRecord, TokenSequence,
};
pub use synth::{class_name, gen_synthetic, COLOR_JITTER, PALETTE};
pub use vocab::{build_vocab, clean_words, tokenize, Vocabulary, DEFAULT_MAX_LEN, PAD, UNK};
