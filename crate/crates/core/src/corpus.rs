//! Patients, notes and corpora.
//!
//! The on-disk format is UTF-8 JSON Lines with one note per line and exactly
//! the keys `patient_id`, `note_id`, `category`, `chart_time`, `text`.
//! `chart_time` uses `YYYY-MM-DDTHH:MM:SSZ`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CHART_TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn parse_chart_time(s: &str) -> Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, CHART_TIME_FORMAT)
        .map(|t| Utc.from_utc_datetime(&t))
        .map_err(|e| Error::invalid(format!("unparseable chart_time {s:?}: {e}")))
}

pub fn format_chart_time(t: &DateTime<Utc>) -> String {
    t.format(CHART_TIME_FORMAT).to_string()
}

mod chart_time_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_chart_time(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse_chart_time(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Note {
    pub patient_id: String,
    pub note_id: String,
    pub category: String,
    #[serde(with = "chart_time_serde")]
    pub chart_time: DateTime<Utc>,
    pub text: String,
}

impl Note {
    fn order_key(&self) -> (DateTime<Utc>, &str) {
        (self.chart_time, self.note_id.as_str())
    }
}

/// A patient and their notes in chronological order (ties by note id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub notes: Vec<Note>,
}

impl Patient {
    pub fn new(patient_id: impl Into<String>, mut notes: Vec<Note>) -> Self {
        notes.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Self {
            patient_id: patient_id.into(),
            notes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub source: String,
    pub seed: Option<u64>,
}

/// An immutable collection of patients, ordered by patient id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub patients: Vec<Patient>,
    pub metadata: CorpusMetadata,
}

impl Corpus {
    /// Groups notes by patient, sorts them, and checks note id uniqueness.
    pub fn from_notes(notes: Vec<Note>, metadata: CorpusMetadata) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut grouped: BTreeMap<String, Vec<Note>> = BTreeMap::new();
        for note in notes {
            if !seen.insert(note.note_id.clone()) {
                return Err(Error::DuplicateNote(note.note_id));
            }
            grouped.entry(note.patient_id.clone()).or_default().push(note);
        }
        let patients = grouped
            .into_iter()
            .map(|(id, notes)| Patient::new(id, notes))
            .collect();
        Ok(Self { patients, metadata })
    }

    pub fn note_count(&self) -> usize {
        self.patients.iter().map(|p| p.notes.len()).sum()
    }

    pub fn notes(&self) -> impl Iterator<Item = &Note> {
        self.patients.iter().flat_map(|p| p.notes.iter())
    }

    pub fn patient(&self, patient_id: &str) -> Option<&Patient> {
        self.patients
            .binary_search_by(|p| p.patient_id.as_str().cmp(patient_id))
            .ok()
            .map(|i| &self.patients[i])
    }

    /// Rebuilds the corpus keeping only the patients and notes `keep` selects.
    /// Patients left without notes are dropped.
    pub fn retain_notes(&self, mut keep: impl FnMut(&Note) -> bool) -> Corpus {
        let patients = self
            .patients
            .iter()
            .filter_map(|p| {
                let notes: Vec<Note> = p.notes.iter().filter(|n| keep(n)).cloned().collect();
                (!notes.is_empty()).then(|| Patient {
                    patient_id: p.patient_id.clone(),
                    notes,
                })
            })
            .collect();
        Corpus {
            patients,
            metadata: self.metadata.clone(),
        }
    }

    pub fn retain_patients(&self, mut keep: impl FnMut(&Patient) -> bool) -> Corpus {
        Corpus {
            patients: self.patients.iter().filter(|p| keep(p)).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Serializes the corpus as JSON Lines in patient then chronological order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for note in self.notes() {
            let line = serde_json::to_string(note).map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(line.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| Error::io("<corpus writer>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Parses one corpus line; errors carry the 1-based line number.
fn parse_line(line: &str, lineno: usize) -> Result<Note> {
    let note: Note = serde_json::from_str(line).map_err(|e| Error::Line {
        line: lineno,
        message: e.to_string(),
    })?;
    if note.text.trim().is_empty() {
        return Err(Error::Line {
            line: lineno,
            message: "note text is empty".into(),
        });
    }
    Ok(note)
}

pub fn read_corpus<R: BufRead>(reader: R, source: &str) -> Result<Corpus> {
    let mut notes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        notes.push(parse_line(&line, idx + 1)?);
    }
    Corpus::from_notes(
        notes,
        CorpusMetadata {
            source: source.to_string(),
            seed: None,
        },
    )
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), &path.display().to_string())
}

/// Parameters of the planted-signal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub notes_min: usize,
    pub notes_max: usize,
    pub vocab_size: usize,
    pub topic_tokens: usize,
    pub p_signal: f64,
    pub sentences_min: usize,
    pub sentences_max: usize,
    pub words_min: usize,
    pub words_max: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 100,
            notes_min: 2,
            notes_max: 10,
            vocab_size: 2000,
            topic_tokens: 30,
            p_signal: 0.35,
            sentences_min: 10,
            sentences_max: 40,
            words_min: 8,
            words_max: 24,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients must be positive"));
        }
        if self.notes_min < 2 {
            return Err(Error::invalid(format!(
                "notes per patient lower bound {} is below 2",
                self.notes_min
            )));
        }
        if self.notes_max < self.notes_min {
            return Err(Error::invalid("notes_max < notes_min"));
        }
        if self.vocab_size == 0 || self.topic_tokens == 0 {
            return Err(Error::invalid("vocab_size and topic_tokens must be positive"));
        }
        if self.topic_tokens > self.vocab_size {
            return Err(Error::invalid("topic_tokens exceeds vocab_size"));
        }
        if !(0.0..=1.0).contains(&self.p_signal) {
            return Err(Error::invalid("p_signal must lie in [0, 1]"));
        }
        if self.sentences_min == 0 || self.sentences_max < self.sentences_min {
            return Err(Error::invalid("invalid sentence range"));
        }
        if self.words_min == 0 || self.words_max < self.words_min {
            return Err(Error::invalid("invalid words-per-sentence range"));
        }
        Ok(())
    }
}

/// The pseudo-word for vocabulary item `i`.
pub fn pseudo_word(i: usize) -> String {
    format!("tok{i:04}")
}

/// A WordPiece vocabulary covering every pseudo-word the generator emits.
///
/// Layout: `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`, ASCII punctuation,
/// the whole pseudo-words, then `tok` and single-digit `##d` continuation
/// pieces so that pseudo-words outside the vocabulary still decompose.
pub fn synthetic_vocabulary(vocab_size: usize) -> Vec<String> {
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend((b'!'..=b'~').filter(u8::is_ascii_punctuation).map(|b| (b as char).to_string()));
    tokens.extend((0..vocab_size).map(pseudo_word));
    tokens.push("tok".into());
    tokens.extend((0..10).map(|d| format!("##{d}")));
    let mut seen = HashSet::new();
    tokens.retain(|t| seen.insert(t.clone()));
    tokens
}

/// Generates a corpus in which each patient's notes share a private set of
/// `topic_tokens` pseudo-words, each word being drawn from that set with
/// probability `p_signal` and from the whole vocabulary otherwise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = seed::stage_rng(spec.seed, "corpus");
    let base = Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap();
    let vocab: Vec<usize> = (0..spec.vocab_size).collect();
    let mut notes = Vec::new();
    for p in 0..spec.n_patients {
        let patient_id = format!("p{p:05}");
        let topics: Vec<usize> = vocab
            .choose_multiple(&mut rng, spec.topic_tokens)
            .copied()
            .collect();
        let n_notes = rng.gen_range(spec.notes_min..=spec.notes_max);
        let mut t = base + Duration::days(rng.gen_range(0..3650));
        for k in 0..n_notes {
            t += Duration::minutes(rng.gen_range(1..=7 * 24 * 60));
            let n_sentences = rng.gen_range(spec.sentences_min..=spec.sentences_max);
            let mut text = String::new();
            for s in 0..n_sentences {
                let n_words = rng.gen_range(spec.words_min..=spec.words_max);
                for w in 0..n_words {
                    let id = if rng.gen_bool(spec.p_signal) {
                        topics[rng.gen_range(0..topics.len())]
                    } else {
                        rng.gen_range(0..spec.vocab_size)
                    };
                    if w > 0 {
                        text.push(' ');
                    }
                    text.push_str(&pseudo_word(id));
                }
                text.push('.');
                if s + 1 < n_sentences {
                    text.push(if rng.gen_bool(0.2) { '\n' } else { ' ' });
                }
            }
            let category = if rng.gen_bool(0.9) { "Physician" } else { "Nursing" };
            notes.push(Note {
                patient_id: patient_id.clone(),
                note_id: format!("{patient_id}_n{k:03}"),
                category: category.to_string(),
                chart_time: t,
                text,
            });
        }
    }
    Corpus::from_notes(
        notes,
        CorpusMetadata {
            source: "synthetic".into(),
            seed: Some(spec.seed),
        },
    )
}
