use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::Token;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const UNK: Token = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Bijective word ↔ id map. Ids 0..4 are reserved for pad, begin, end and
/// unknown; tokenizing text never produces pad, begin or end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, Token>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as Token))
            .collect();
        Self { words, index }
    }

    /// Build from words in first-occurrence order; duplicates are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::new();
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Build from whitespace-split, lowercased text.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::new();
        for text in texts {
            for w in text.split_whitespace() {
                vocab.insert(&w.to_lowercase());
            }
        }
        vocab
    }

    pub fn insert(&mut self, word: &str) -> Token {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as Token;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<Token> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: Token) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Lowercase, split on whitespace, map unknown and reserved words to
    /// the unknown id.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        text.split_whitespace()
            .map(|w| match self.index.get(&w.to_lowercase()) {
                Some(&id) if id > UNK => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let mut vocab = Vocabulary::new();
        for w in words.iter().skip(RESERVED.len()) {
            vocab.insert(w);
        }
        vocab
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_lowercases() {
        let vocab = Vocabulary::from_texts(["the cat sat"]);
        let ids = vocab.tokenize("The CAT  sat");
        assert_eq!(vocab.detokenize(&ids), "the cat sat");
    }

    #[test]
    fn unknown_and_reserved_map_to_unk() {
        let vocab = Vocabulary::from_texts(["a b"]);
        assert_eq!(vocab.tokenize("zebra"), vec![UNK]);
        assert_eq!(vocab.tokenize("<s> </s> <pad>"), vec![UNK; 3]);
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn serde_round_trip() {
        let vocab = Vocabulary::from_words(["x", "y", "x", "z"]);
        assert_eq!(vocab.len(), 7);
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(vocab, back);
    }
}
