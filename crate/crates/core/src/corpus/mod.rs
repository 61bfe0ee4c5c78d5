//! Vocabulary, JSONL corpus files and the synthetic corpus generator.

mod io;
mod synth;
mod vocab;

pub use io::{load_corpus, parse_corpus, save_corpus, tokenize_all, write_corpus, CorpusExample, TextExample};
pub use synth::{generate_synthetic_corpus, synthetic_vocabulary, SynthConfig, SyntheticCorpus};
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
