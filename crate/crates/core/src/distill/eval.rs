use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::train::{parallel_map, teacher_summary};
use crate::corpus::{CorpusExample, Vocabulary};
use crate::decoding::DecodeConfig;
use crate::error::Result;
use crate::seq2seq::{AttentionScale, Seq2SeqModel};
use crate::textmetrics::{novel_ngram_ratio, rouge_l_f1, rouge_n_f1};
use crate::Token;

fn two_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

/// The six summary metrics, as percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(serialize_with = "two_decimals")]
    pub rouge1: f64,
    #[serde(serialize_with = "two_decimals")]
    pub rouge2: f64,
    #[serde(rename = "rougeL", serialize_with = "two_decimals")]
    pub rouge_l: f64,
    #[serde(serialize_with = "two_decimals")]
    pub novel1: f64,
    #[serde(serialize_with = "two_decimals")]
    pub novel3: f64,
    #[serde(serialize_with = "two_decimals")]
    pub novel5: f64,
}

impl Metrics {
    pub fn of(prediction: &[Token], gold: &[Token], document: &[Token]) -> Self {
        Self {
            rouge1: 100.0 * rouge_n_f1(prediction, gold, 1),
            rouge2: 100.0 * rouge_n_f1(prediction, gold, 2),
            rouge_l: 100.0 * rouge_l_f1(prediction, gold),
            novel1: 100.0 * novel_ngram_ratio(prediction, document, 1),
            novel3: 100.0 * novel_ngram_ratio(prediction, document, 3),
            novel5: 100.0 * novel_ngram_ratio(prediction, document, 5),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.rouge1, self.rouge2, self.rouge_l, self.novel1, self.novel3, self.novel5]
    }

    pub const NAMES: [&'static str; 6] = ["rouge1", "rouge2", "rougeL", "novel1", "novel3", "novel5"];

    fn mean<'a>(items: impl Iterator<Item = &'a Metrics>) -> Self {
        let mut sum = [0.0; 6];
        let mut count = 0usize;
        for m in items {
            for (s, v) in sum.iter_mut().zip(m.values()) {
                *s += v;
            }
            count += 1;
        }
        let c = count.max(1) as f64;
        Self {
            rouge1: sum[0] / c,
            rouge2: sum[1] / c,
            rouge_l: sum[2] / c,
            novel1: sum[3] / c,
            novel3: sum[4] / c,
            novel5: sum[5] / c,
        }
    }
}

/// Outcome of one test document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub prediction: String,
    #[serde(flatten)]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Test-set metrics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub aggregates: Metrics,
    pub examples: Vec<ExampleRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Number of examples that failed to decode.
    pub fn failures(&self) -> usize {
        self.examples.iter().filter(|e| e.error.is_some()).count()
    }
}

/// Hex SHA-256 over the ids, documents and gold summaries of `corpus`.
pub fn corpus_hash(corpus: &[CorpusExample]) -> String {
    let mut h = Sha256::new();
    for ex in corpus {
        h.update(ex.id.as_bytes());
        h.update([0]);
        for seq in [&ex.document, &ex.gold] {
            h.update((seq.len() as u64).to_le_bytes());
            for t in seq.iter() {
                h.update(t.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Labels written into a report next to the metrics.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub method: String,
    pub seed: u64,
    /// Echoed under `config`; a `test_corpus_hash` key is added when this is an object.
    pub config: serde_json::Value,
}

/// Beam-search every test document at attention scale 1 and score the
/// output. Decoding failures are recorded per example and left out of
/// the aggregates.
pub fn evaluate(
    model: &Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    test: &[CorpusExample],
    decode: &DecodeConfig,
    meta: ReportMeta,
    threads: usize,
) -> Result<EvalReport> {
    decode.validate()?;
    let examples = parallel_map(test, threads, |ex| {
        Ok(match teacher_summary(model, &ex.document, decode, AttentionScale::UNIT) {
            Ok(pred) => ExampleRecord {
                id: ex.id.clone(),
                prediction: vocab.detokenize(&pred),
                metrics: Some(Metrics::of(&pred, &ex.gold, &ex.document)),
                error: None,
            },
            Err(e) => ExampleRecord {
                id: ex.id.clone(),
                prediction: String::new(),
                metrics: None,
                error: Some(e.to_string()),
            },
        })
    })?;
    let aggregates = Metrics::mean(examples.iter().filter_map(|e| e.metrics.as_ref()));
    let mut config = meta.config;
    if let Some(obj) = config.as_object_mut() {
        obj.insert("test_corpus_hash".into(), corpus_hash(test).into());
    }
    Ok(EvalReport {
        method: meta.method,
        seed: meta.seed,
        config,
        aggregates,
        examples,
    })
}
