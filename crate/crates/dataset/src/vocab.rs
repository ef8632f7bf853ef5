use std::collections::HashMap;
use std::path::Path;

use crate::error::{io_err, DatasetError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, strips trailing `.,!?` from each word and splits on whitespace.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| w.trim_end_matches(['.', ',', '!', '?']).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then words by descending frequency, ties lexicographic.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>]) -> Vocabulary {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            for w in sent {
                *freq.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = freq.into_iter().filter(|(w, _)| !SPECIALS.contains(w)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = SPECIALS.iter().map(|s| s.to_string()).chain(entries.into_iter().map(|e| e.0.to_string()));
        Vocabulary::from_words(words.collect()).expect("built vocabulary is well formed")
    }

    pub fn from_words(words: Vec<String>) -> Result<Vocabulary> {
        if words.len() < SPECIALS.len() || words[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(DatasetError::Vocab("the first four entries must be the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(DatasetError::Vocab(format!("entry {i} is not a single word: {w:?}")));
            }
            if index.insert(w.clone(), i).is_some() {
                return Err(DatasetError::Vocab(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)).collect()
    }

    /// Words for the ids, skipping pad/bos/eos. Out-of-range ids decode as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.word(i).unwrap_or(SPECIALS[UNK]).to_string())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Vocabulary> {
        Vocabulary::from_words(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        Vocabulary::from_text(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}
