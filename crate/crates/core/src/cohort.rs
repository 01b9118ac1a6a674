//! Cohort selection: duplicate removal, category filtering, IQR outlier
//! removal on per-patient note counts, and the minimum-notes filter.
//!
//! [`apply`] runs the stages in that order and records what each stage
//! removed in a [`CohortReport`].

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Note, Patient};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    /// Categories to keep; empty keeps everything. Matching is exact.
    pub categories: BTreeSet<String>,
    /// `null` disables the IQR stage.
    pub iqr_multiplier: Option<f64>,
    pub min_notes: usize,
    pub dedup: bool,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            categories: BTreeSet::new(),
            iqr_multiplier: Some(1.5),
            min_notes: 2,
            dedup: true,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.iqr_multiplier {
            if m.is_nan() || m < 0.0 {
                return Err(Error::Config(format!("iqr_multiplier must be >= 0, got {m}")));
            }
        }
        if self.min_notes < 2 {
            return Err(Error::Config(format!("min_notes must be >= 2, got {}", self.min_notes)));
        }
        Ok(())
    }

    fn multiplier(&self) -> f64 {
        self.iqr_multiplier.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub input_patients: usize,
    pub input_notes: usize,
    pub exact_duplicates_removed: usize,
    pub partial_duplicates_removed: usize,
    pub category_notes_removed: usize,
    pub iqr_patients_removed: usize,
    pub iqr_notes_removed: usize,
    pub min_notes_patients_removed: usize,
    pub min_notes_notes_removed: usize,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// `None` when the IQR stage is disabled or the corpus is empty.
    pub threshold: Option<f64>,
    pub output_patients: usize,
    pub output_notes: usize,
}

impl CohortReport {
    pub fn notes_removed(&self) -> usize {
        self.exact_duplicates_removed
            + self.partial_duplicates_removed
            + self.category_notes_removed
            + self.iqr_notes_removed
            + self.min_notes_notes_removed
    }
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes per-patient exact duplicates (after whitespace normalization) and,
/// among notes sharing a chart time, any note whose text is contained in a
/// longer one.
pub fn deduplicate(corpus: &Corpus) -> (Corpus, CohortReport) {
    let mut report = CohortReport::default();
    let mut patients = Vec::with_capacity(corpus.patients.len());
    for patient in &corpus.patients {
        let normalized: Vec<String> = patient.notes.iter().map(|n| normalize_ws(&n.text)).collect();

        let mut seen = HashSet::new();
        let mut alive: Vec<bool> = normalized.iter().map(|t| seen.insert(t.as_str())).collect();
        report.exact_duplicates_removed += alive.iter().filter(|a| !**a).count();

        // notes are sorted by chart time, so equal times are contiguous
        let mut start = 0;
        while start < patient.notes.len() {
            let t = patient.notes[start].chart_time;
            let end = start
                + patient.notes[start..]
                    .iter()
                    .take_while(|n| n.chart_time == t)
                    .count();
            let mut group: Vec<usize> = (start..end).filter(|&i| alive[i]).collect();
            group.sort_by(|&a, &b| normalized[b].len().cmp(&normalized[a].len()).then(a.cmp(&b)));
            let mut kept: Vec<usize> = Vec::new();
            for i in group {
                if kept.iter().any(|&k| normalized[k].contains(normalized[i].as_str())) {
                    alive[i] = false;
                    report.partial_duplicates_removed += 1;
                } else {
                    kept.push(i);
                }
            }
            start = end;
        }

        let notes: Vec<Note> = patient
            .notes
            .iter()
            .zip(&alive)
            .filter(|(_, a)| **a)
            .map(|(n, _)| n.clone())
            .collect();
        patients.push(Patient {
            patient_id: patient.patient_id.clone(),
            notes,
        });
    }
    let out = Corpus {
        patients,
        metadata: corpus.metadata.clone(),
    };
    (out, report)
}

pub fn filter_categories(corpus: &Corpus, categories: &BTreeSet<String>) -> Corpus {
    if categories.is_empty() {
        return corpus.clone();
    }
    corpus.retain_notes(|n| categories.contains(&n.category))
}

/// Type-7 quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Removes patients whose note count exceeds `Q3 + multiplier·(Q3 − Q1)`.
/// An infinite multiplier disables the filter.
pub fn iqr_filter(corpus: &Corpus, multiplier: f64) -> (Corpus, CohortReport) {
    let mut report = CohortReport::default();
    if corpus.patients.is_empty() {
        return (corpus.clone(), report);
    }
    let mut counts: Vec<f64> = corpus.patients.iter().map(|p| p.notes.len() as f64).collect();
    counts.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&counts, 0.25);
    let q3 = quantile_sorted(&counts, 0.75);
    report.q1 = Some(q1);
    report.q3 = Some(q3);
    if multiplier.is_infinite() {
        return (corpus.clone(), report);
    }
    let threshold = q3 + multiplier * (q3 - q1);
    report.threshold = Some(threshold);
    let out = corpus.retain_patients(|p| {
        let keep = p.notes.len() as f64 <= threshold;
        if !keep {
            report.iqr_patients_removed += 1;
            report.iqr_notes_removed += p.notes.len();
        }
        keep
    });
    (out, report)
}

pub fn min_notes_filter(corpus: &Corpus, min_notes: usize) -> Corpus {
    corpus.retain_patients(|p| p.notes.len() >= min_notes)
}

/// Runs dedup → category → IQR → min-notes.
pub fn apply(corpus: &Corpus, config: &CohortConfig) -> Result<(Corpus, CohortReport)> {
    config.validate()?;
    let mut report = CohortReport {
        input_patients: corpus.patients.len(),
        input_notes: corpus.note_count(),
        ..CohortReport::default()
    };

    let mut current = if config.dedup {
        let (c, r) = deduplicate(corpus);
        report.exact_duplicates_removed = r.exact_duplicates_removed;
        report.partial_duplicates_removed = r.partial_duplicates_removed;
        c
    } else {
        corpus.clone()
    };

    let before = current.note_count();
    current = filter_categories(&current, &config.categories);
    report.category_notes_removed = before - current.note_count();

    let (c, r) = iqr_filter(&current, config.multiplier());
    report.q1 = r.q1;
    report.q3 = r.q3;
    report.threshold = r.threshold;
    report.iqr_patients_removed = r.iqr_patients_removed;
    report.iqr_notes_removed = r.iqr_notes_removed;
    current = c;

    let (patients_before, notes_before) = (current.patients.len(), current.note_count());
    current = min_notes_filter(&current, config.min_notes);
    report.min_notes_patients_removed = patients_before - current.patients.len();
    report.min_notes_notes_removed = notes_before - current.note_count();

    report.output_patients = current.patients.len();
    report.output_notes = current.note_count();
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_chart_time, CorpusMetadata};

    fn note(pid: &str, nid: &str, t: &str, cat: &str, text: &str) -> Note {
        Note {
            patient_id: pid.into(),
            note_id: nid.into(),
            category: cat.into(),
            chart_time: parse_chart_time(t).unwrap(),
            text: text.into(),
        }
    }

    fn corpus(notes: Vec<Note>) -> Corpus {
        Corpus::from_notes(notes, CorpusMetadata::default()).unwrap()
    }

    /// Corpus where patient `k` has `counts[k]` distinct notes.
    fn corpus_with_counts(counts: &[usize]) -> Corpus {
        let mut notes = Vec::new();
        for (p, &c) in counts.iter().enumerate() {
            for k in 0..c {
                notes.push(note(
                    &format!("p{p:02}"),
                    &format!("p{p:02}_{k:03}"),
                    "2020-01-01T00:00:00Z",
                    "Physician",
                    &format!("text {p} {k} unique"),
                ));
            }
        }
        corpus(notes)
    }

    const T: &str = "2020-01-01T10:00:00Z";

    #[test]
    fn partial_duplicate_keeps_longer() {
        let c = corpus(vec![
            note("a", "n1", T, "Physician", "Patient stable."),
            note("a", "n2", T, "Physician", "Patient stable. Continue meds."),
        ]);
        let (out, report) = deduplicate(&c);
        assert_eq!(out.patients[0].notes.len(), 1);
        assert_eq!(out.patients[0].notes[0].note_id, "n2");
        assert_eq!(report.partial_duplicates_removed, 1);
    }

    #[test]
    fn containment_only_at_equal_chart_time() {
        let c = corpus(vec![
            note("a", "n1", T, "Physician", "Patient stable."),
            note("a", "n2", "2020-01-02T10:00:00Z", "Physician", "Patient stable. Continue meds."),
        ]);
        assert_eq!(deduplicate(&c).0.note_count(), 2);
    }

    #[test]
    fn exact_duplicates_collapse() {
        let c = corpus(vec![
            note("a", "n1", T, "Physician", "Same  text"),
            note("a", "n2", "2020-02-01T00:00:00Z", "Physician", "Same text"),
        ]);
        let (out, report) = deduplicate(&c);
        assert_eq!(out.note_count(), 1);
        assert_eq!(report.exact_duplicates_removed, 1);
    }

    #[test]
    fn duplicates_across_patients_survive() {
        let c = corpus(vec![
            note("a", "n1", T, "Physician", "Same text"),
            note("b", "n2", T, "Physician", "Same text"),
        ]);
        assert_eq!(deduplicate(&c).0.note_count(), 2);
    }

    #[test]
    fn category_filter_exact_match() {
        let c = corpus(vec![
            note("a", "n1", T, "Physician", "x"),
            note("a", "n2", T, "Nursing", "y"),
            note("b", "n3", T, "physician", "z"),
        ]);
        let keep: BTreeSet<String> = ["Physician".to_string()].into();
        let out = filter_categories(&c, &keep);
        assert_eq!(out.note_count(), 1);
        assert_eq!(out.patients.len(), 1);
        assert_eq!(out.patients[0].notes[0].note_id, "n1");
        assert_eq!(filter_categories(&c, &BTreeSet::new()), c);
    }

    #[test]
    fn quantile_type7_oracle() {
        // h = 7q on [2,2,3,3,4,4,5,40]: q=.25 → h=1.75 → 2+.75·1; q=.75 → h=5.25 → 4+.25·1
        let xs = [2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 40.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 2.75);
        assert_eq!(quantile_sorted(&xs, 0.75), 4.25);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn iqr_worked_example() {
        let c = corpus_with_counts(&[2, 2, 3, 3, 4, 4, 5, 40]);
        let (out, report) = iqr_filter(&c, 1.5);
        assert_eq!(report.q1, Some(2.75));
        assert_eq!(report.q3, Some(4.25));
        assert_eq!(report.threshold, Some(6.5));
        assert_eq!(report.iqr_patients_removed, 1);
        assert_eq!(out.patients.len(), 7);
        assert!(out.patients.iter().all(|p| p.notes.len() <= 5));
    }

    #[test]
    fn iqr_equal_counts_removes_nobody() {
        let c = corpus_with_counts(&[3, 3, 3, 3]);
        let (out, report) = iqr_filter(&c, 1.5);
        assert_eq!(report.threshold, Some(3.0));
        assert_eq!(out.patients.len(), 4);
    }

    #[test]
    fn iqr_disabled_removes_nobody() {
        let c = corpus_with_counts(&[2, 2, 3, 100]);
        let (out, report) = iqr_filter(&c, f64::INFINITY);
        assert_eq!(out.patients.len(), 4);
        assert_eq!(report.threshold, None);
    }

    #[test]
    fn min_notes_boundary() {
        let c = corpus_with_counts(&[1, 2, 3]);
        let out = min_notes_filter(&c, 2);
        let counts: Vec<_> = out.patients.iter().map(|p| p.notes.len()).collect();
        assert_eq!(counts, [2, 3]);
        assert!(min_notes_filter(&Corpus::default(), 2).patients.is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = CohortConfig { min_notes: 1, ..CohortConfig::default() };
        assert!(bad.validate().is_err());
        let bad = CohortConfig { iqr_multiplier: Some(-1.0), ..CohortConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_pipeline_counts_add_up_and_is_idempotent() {
        let mut notes = Vec::new();
        for (p, &c) in [1usize, 2, 3, 3, 4, 30].iter().enumerate() {
            for k in 0..c {
                let cat = if k % 4 == 3 { "Nursing" } else { "Physician" };
                notes.push(note(&format!("p{p}"), &format!("p{p}_{k}"), T, cat, &format!("body {p} {k}")));
            }
            // a duplicate for each patient
            notes.push(note(&format!("p{p}"), &format!("p{p}_dup"), T, "Physician", &format!("body {p} 0")));
        }
        let c = corpus(notes);
        let cfg = CohortConfig {
            categories: ["Physician".to_string()].into(),
            ..CohortConfig::default()
        };
        let (out, report) = apply(&c, &cfg).unwrap();
        assert_eq!(report.input_notes - report.output_notes, report.notes_removed());
        assert!(out.patients.iter().all(|p| p.notes.len() >= 2));
        let (again, _) = apply(&out, &cfg).unwrap();
        assert_eq!(again, out);
    }
}
