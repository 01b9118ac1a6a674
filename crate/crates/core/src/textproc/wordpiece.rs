use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Words longer than this many characters become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";

/// A WordPiece vocabulary: one token per line, id = zero-based line index.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    digest: String,
    pub unk_id: u32,
    pub cls_id: u32,
    pub sep_id: u32,
    pub pad_id: u32,
}

impl Vocabulary {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("vocabulary is not UTF-8: {e}")))?;
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        let mut index = HashMap::with_capacity(lines.len());
        for (i, tok) in lines.iter().enumerate() {
            if index.insert(tok.to_string(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?} at line {}", i + 1)));
            }
        }
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("vocabulary lacks special token {name}")))
        };
        Ok(Self {
            unk_id: special(UNK)?,
            cls_id: special(CLS)?,
            sep_id: special(SEP)?,
            pad_id: special(PAD)?,
            tokens: lines.into_iter().map(String::from).collect(),
            index,
            digest: hex::encode(Sha256::digest(bytes)),
        })
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut raw = String::new();
        for t in tokens {
            raw.push_str(t.as_ref());
            raw.push('\n');
        }
        Self::from_bytes(raw.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Bytes in the on-disk format, one token per line.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut raw = String::new();
        for t in &self.tokens {
            raw.push_str(t);
            raw.push('\n');
        }
        raw.into_bytes()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Hex SHA-256 of the raw vocabulary bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

fn is_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r') || get_general_category(c) == GeneralCategory::SpaceSeparator
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    matches!(get_general_category(c), GeneralCategory::Control | GeneralCategory::Format)
}

fn is_punctuation(c: char) -> bool {
    let cp = c as u32;
    if (33..=47).contains(&cp) || (58..=64).contains(&cp) || (91..=96).contains(&cp) || (123..=126).contains(&cp) {
        return true;
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// Greedy longest-match-first WordPiece tokenizer.
///
/// Pre-tokenization drops control characters, isolates CJK ideographs,
/// splits on whitespace, optionally lowercases and strips accents, then
/// splits punctuation into standalone words.
#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: Vocabulary,
    pub lowercase: bool,
    pub max_word_chars: usize,
}

impl WordPiece {
    pub fn new(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            lowercase: true,
            max_word_chars: MAX_WORD_CHARS,
        }
    }

    pub fn cased(vocab: Vocabulary) -> Self {
        Self {
            lowercase: false,
            ..Self::new(vocab)
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn basic_words(&self, text: &str) -> Vec<String> {
        let mut cleaned = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\0' || c == '\u{FFFD}' || is_control(c) {
                continue;
            }
            if is_cjk(c) {
                cleaned.push(' ');
                cleaned.push(c);
                cleaned.push(' ');
            } else if is_whitespace(c) {
                cleaned.push(' ');
            } else {
                cleaned.push(c);
            }
        }
        let mut words = Vec::new();
        for raw in cleaned.split(' ').filter(|w| !w.is_empty()) {
            let word: String = if self.lowercase {
                raw.to_lowercase()
                    .nfd()
                    .filter(|c| get_general_category(*c) != GeneralCategory::NonspacingMark)
                    .collect()
            } else {
                raw.to_string()
            };
            let mut current = String::new();
            for c in word.chars() {
                if is_punctuation(c) {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    words.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                words.push(current);
            }
        }
        words
    }

    /// Greedy decomposition of one pre-tokenized word; `None` when some
    /// position has no matching piece.
    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) -> bool {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > self.max_word_chars {
            return false;
        }
        let mark = out.len();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                piece.clear();
                if start > 0 {
                    piece.push_str("##");
                }
                piece.extend(&chars[start..end]);
                if let Some(id) = self.vocab.id(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => out.push(id),
                None => {
                    out.truncate(mark);
                    return false;
                }
            }
            start = end;
        }
        true
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in self.basic_words(text) {
            if !self.word_pieces(&word, &mut out) {
                out.push(self.vocab.unk_id);
            }
        }
        out
    }

    pub fn tokens(&self, text: &str) -> Vec<&str> {
        self.tokenize(text)
            .into_iter()
            .map(|id| self.vocab.token(id).unwrap_or(UNK))
            .collect()
    }
}
