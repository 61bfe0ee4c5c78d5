//! Fixtures shared by the benchmarks.

use discal_core::corpus::{generate_synthetic_corpus, synthetic_vocabulary, tokenize_all, CorpusExample, SynthConfig, Vocabulary};
use discal_core::seq2seq::{ModelConfig, Seq2SeqModel};

/// A small synthetic corpus and an untrained desk-size model over its vocabulary.
pub fn fixture(examples: usize) -> (Vec<CorpusExample>, Vocabulary, Seq2SeqModel<f32>) {
    let cfg = SynthConfig {
        num_train: examples,
        num_val: 0,
        num_test: 0,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic_corpus(&cfg).expect("valid synthetic config");
    let vocab = synthetic_vocabulary(&cfg);
    let model = Seq2SeqModel::new(ModelConfig::desk_teacher(vocab.len()), 1).expect("valid model config");
    (tokenize_all(&corpus.train, &vocab), vocab, model)
}
