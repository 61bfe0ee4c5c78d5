use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::Token;

/// One line of a corpus file, as text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub id: String,
    pub document: String,
    pub summary: String,
}

/// A tokenized (document, gold summary) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusExample {
    pub id: String,
    pub document: Vec<Token>,
    pub gold: Vec<Token>,
}

impl TextExample {
    pub fn tokenize(&self, vocab: &Vocabulary) -> CorpusExample {
        CorpusExample {
            id: self.id.clone(),
            document: vocab.tokenize(&self.document),
            gold: vocab.tokenize(&self.summary),
        }
    }
}

pub fn tokenize_all(examples: &[TextExample], vocab: &Vocabulary) -> Vec<CorpusExample> {
    examples.iter().map(|e| e.tokenize(vocab)).collect()
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &'static str, line: usize) -> Result<String> {
    match obj.get(key) {
        None => Err(Error::MissingKey { line, key }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(Error::CorpusLine {
            line,
            reason: format!("key \"{key}\" must be a string, found {other}"),
        }),
    }
}

/// Parse JSONL text. Line numbers in errors are 1-based; blank lines are skipped.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<TextExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::CorpusLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::CorpusLine {
            line: line_no,
            reason: format!("malformed JSON: {e}"),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::CorpusLine {
                line: line_no,
                reason: "expected a JSON object".into(),
            });
        };
        out.push(TextExample {
            id: string_field(&obj, "id", line_no)?,
            document: string_field(&obj, "document", line_no)?,
            summary: string_field(&obj, "summary", line_no)?,
        });
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TextExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

/// Write JSONL with keys in the order id, document, summary and LF endings.
pub fn write_corpus(examples: &[TextExample], mut writer: impl Write) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut writer, ex)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_corpus(examples: &[TextExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(examples, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let examples = vec![
            TextExample {
                id: "a".into(),
                document: "x y \"quoted\"".into(),
                summary: "y".into(),
            },
            TextExample {
                id: "b".into(),
                document: "p q r".into(),
                summary: "q r".into(),
            },
        ];
        save_corpus(&examples, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), examples);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("{\"id\":\"a\",\"document\":"));
    }

    #[test]
    fn missing_key_names_line_and_key() {
        let text = "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n{\"id\":\"b\",\"document\":\"x\"}\n";
        match parse_corpus(text.as_bytes()) {
            Err(Error::MissingKey { line, key }) => {
                assert_eq!(line, 2);
                assert_eq!(key, "summary");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"id\":\"a\",\"document\":\"x\",\"summary\":\"y\"}\n\n{not json\n";
        match parse_corpus(text.as_bytes()) {
            Err(Error::CorpusLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
