//! Supervised pair construction.
//!
//! Patients are split into train and test sets first. Then, for each patient
//! and draw, one target note `X2` is held out and the remaining notes form
//! the source set `X1`. Every target is emitted twice: once against its own
//! patient's source set (label 1) and once against the source set of another
//! patient from the same split (label 0).

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
    pub draws_per_patient: usize,
    /// Pair each patient with a distinct negative partner (a derangement).
    pub distinct_negatives: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 0,
            draws_per_patient: 1,
            distinct_negatives: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!(
                "train_ratio must lie in (0, 1), got {}",
                self.train_ratio
            )));
        }
        if self.draws_per_patient == 0 {
            return Err(Error::Config("draws_per_patient must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInstance {
    /// Owner of the source set.
    pub patient_id: String,
    pub source_note_ids: Vec<String>,
    pub target_note_id: String,
    pub label: u8,
    pub split: Split,
    pub draw_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        if self.train.contains(patient_id) {
            Some(Split::Train)
        } else if self.test.contains(patient_id) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Seeded patient-level split. The train size is `round(ratio·n)` clamped to
/// `[1, n−1]` so both sides are non-empty.
pub fn split_patients(corpus: &Corpus, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    let n = corpus.patients.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} patient(s) into train and test")));
    }
    let mut ids: Vec<&str> = corpus.patients.iter().map(|p| p.patient_id.as_str()).collect();
    ids.shuffle(&mut seed::stage_rng(spec.seed, "split"));
    let n_train = ((spec.train_ratio * n as f64).round() as usize).clamp(1, n - 1);
    Ok(SplitAssignment {
        train: ids[..n_train].iter().map(|s| s.to_string()).collect(),
        test: ids[n_train..].iter().map(|s| s.to_string()).collect(),
    })
}

/// Picks target note indices for each draw: a seeded permutation of the
/// patient's notes, then uniform draws once the permutation is exhausted.
fn draw_targets<R: Rng>(n_notes: usize, draws: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_notes).collect();
    order.shuffle(rng);
    (0..draws)
        .map(|d| if d < n_notes { order[d] } else { rng.gen_range(0..n_notes) })
        .collect()
}

/// Negative partners: `partner[i] != i` for every position.
fn negative_partners<R: Rng>(n: usize, distinct: bool, rng: &mut R) -> Vec<usize> {
    if distinct {
        // Sattolo's algorithm yields a single n-cycle, hence no fixed points.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..i);
            perm.swap(i, j);
        }
        perm
    } else {
        (0..n)
            .map(|i| {
                let j = rng.gen_range(0..n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            })
            .collect()
    }
}

pub fn build_pairs(corpus: &Corpus, split: &SplitAssignment, spec: &SplitSpec) -> Result<Vec<PairInstance>> {
    spec.validate()?;
    let mut rng = seed::stage_rng(spec.seed, "pairs");
    let mut out = Vec::new();
    for (which, members) in [(Split::Train, &split.train), (Split::Test, &split.test)] {
        let patients: Vec<_> = members
            .iter()
            .map(|id| {
                corpus
                    .patient(id)
                    .ok_or_else(|| Error::invalid(format!("patient {id} is not in the corpus")))
            })
            .collect::<Result<_>>()?;
        if patients.len() == 1 {
            return Err(Error::invalid(format!(
                "{which:?} split has a single patient, no negative partner exists"
            )));
        }
        for p in &patients {
            if p.notes.len() < 2 {
                return Err(Error::invalid(format!(
                    "patient {} has {} note(s); at least 2 are required",
                    p.patient_id,
                    p.notes.len()
                )));
            }
        }
        let targets: Vec<Vec<usize>> = patients
            .iter()
            .map(|p| draw_targets(p.notes.len(), spec.draws_per_patient, &mut rng))
            .collect();
        for draw in 0..spec.draws_per_patient {
            let sources: Vec<Vec<String>> = patients
                .iter()
                .zip(&targets)
                .map(|(p, t)| {
                    p.notes
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != t[draw])
                        .map(|(_, n)| n.note_id.clone())
                        .collect()
                })
                .collect();
            let partners = negative_partners(patients.len(), spec.distinct_negatives, &mut rng);
            for (i, p) in patients.iter().enumerate() {
                let target = p.notes[targets[i][draw]].note_id.clone();
                let j = partners[i];
                out.push(PairInstance {
                    patient_id: p.patient_id.clone(),
                    source_note_ids: sources[i].clone(),
                    target_note_id: target.clone(),
                    label: 1,
                    split: which,
                    draw_index: draw,
                });
                out.push(PairInstance {
                    patient_id: patients[j].patient_id.clone(),
                    source_note_ids: sources[j].clone(),
                    target_note_id: target,
                    label: 0,
                    split: which,
                    draw_index: draw,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(pairs: &[PairInstance], mut out: W) -> Result<()> {
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<pairs writer>", e))?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairInstance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<pairs reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Line {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Maps every note id to its owning patient.
pub fn note_owners(corpus: &Corpus) -> HashMap<&str, &str> {
    corpus
        .notes()
        .map(|n| (n.note_id.as_str(), n.patient_id.as_str()))
        .collect()
}

/// Checks the structural invariants of a pair set against its corpus and
/// split; returns a description of the first violation.
pub fn check_pairs(corpus: &Corpus, split: &SplitAssignment, pairs: &[PairInstance]) -> std::result::Result<(), String> {
    if !split.train.is_disjoint(&split.test) {
        return Err("train and test patient sets overlap".into());
    }
    let owners = note_owners(corpus);
    for p in pairs {
        let owner = owners
            .get(p.target_note_id.as_str())
            .ok_or_else(|| format!("unknown target {}", p.target_note_id))?;
        match p.label {
            1 if *owner != p.patient_id => return Err(format!("positive with foreign target {}", p.target_note_id)),
            0 if *owner == p.patient_id => return Err(format!("negative with own target {}", p.target_note_id)),
            0 | 1 => {}
            l => return Err(format!("bad label {l}")),
        }
        if p.source_note_ids.is_empty() {
            return Err("empty source set".into());
        }
        if p.source_note_ids.contains(&p.target_note_id) {
            return Err(format!("target {} inside source set", p.target_note_id));
        }
        for id in p.source_note_ids.iter().chain(std::iter::once(&p.target_note_id)) {
            let owner = owners.get(id.as_str()).ok_or_else(|| format!("unknown note {id}"))?;
            if split.split_of(owner) != Some(p.split) {
                return Err(format!("note {id} leaks across splits"));
            }
        }
        if split.split_of(&p.patient_id) != Some(p.split) {
            return Err(format!("patient {} in wrong split", p.patient_id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};

    fn synthetic(n: usize, seed: u64) -> Corpus {
        generate_synthetic(&SyntheticSpec {
            n_patients: n,
            notes_min: 2,
            notes_max: 5,
            sentences_min: 1,
            sentences_max: 2,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_rounding() {
        let c = synthetic(10, 1);
        let s = split_patients(&c, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let c = synthetic(20, 1);
        let spec = SplitSpec { seed: 42, ..SplitSpec::default() };
        assert_eq!(split_patients(&c, &spec).unwrap(), split_patients(&c, &spec).unwrap());
    }

    #[test]
    fn split_needs_two_patients() {
        let c = synthetic(1, 1);
        assert!(split_patients(&c, &SplitSpec::default()).is_err());
    }

    #[test]
    fn ratio_bounds() {
        let c = synthetic(3, 1);
        for r in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split_patients(&c, &SplitSpec { train_ratio: r, ..SplitSpec::default() }).is_err());
        }
        let s = split_patients(&c, &SplitSpec { train_ratio: 0.99, ..SplitSpec::default() }).unwrap();
        assert_eq!(s.test.len(), 1);
    }

    #[test]
    fn five_patient_split_yields_ten_instances() {
        let c = synthetic(5, 3);
        let split = SplitAssignment {
            train: c.patients.iter().map(|p| p.patient_id.clone()).collect(),
            test: BTreeSet::new(),
        };
        let pairs = build_pairs(&c, &split, &SplitSpec::default()).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 5);
        check_pairs(&c, &split, &pairs).unwrap();
    }

    #[test]
    fn three_draws_count() {
        let c = synthetic(5, 3);
        let split = SplitAssignment {
            train: c.patients.iter().map(|p| p.patient_id.clone()).collect(),
            test: BTreeSet::new(),
        };
        let spec = SplitSpec { draws_per_patient: 3, ..SplitSpec::default() };
        let pairs = build_pairs(&c, &split, &spec).unwrap();
        assert_eq!(pairs.len(), 2 * 5 * 3);
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 15);
    }

    #[test]
    fn two_note_patient_has_singleton_source() {
        let c = generate_synthetic(&SyntheticSpec {
            n_patients: 4,
            notes_min: 2,
            notes_max: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = split_patients(&c, &SplitSpec { train_ratio: 0.5, ..SplitSpec::default() }).unwrap();
        let pairs = build_pairs(&c, &split, &SplitSpec::default()).unwrap();
        assert!(pairs.iter().all(|p| p.source_note_ids.len() == 1));
    }

    #[test]
    fn singleton_split_rejected() {
        let c = synthetic(5, 1);
        let split = split_patients(&c, &SplitSpec { train_ratio: 0.8, ..SplitSpec::default() }).unwrap();
        assert_eq!(split.test.len(), 1);
        assert!(build_pairs(&c, &split, &SplitSpec::default()).is_err());
    }

    #[test]
    fn draws_without_replacement_first() {
        let mut rng = seed::rng(5);
        let t = draw_targets(4, 4, &mut rng);
        let set: BTreeSet<_> = t.iter().collect();
        assert_eq!(set.len(), 4);
        let t = draw_targets(2, 6, &mut rng);
        assert_eq!(t.len(), 6);
        assert_ne!(t[0], t[1]);
    }

    #[test]
    fn distinct_negatives_form_derangement() {
        let mut rng = seed::rng(9);
        for n in 2..30 {
            let p = negative_partners(n, true, &mut rng);
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let set: BTreeSet<_> = p.iter().collect();
            assert_eq!(set.len(), n);
        }
    }

    #[test]
    fn each_target_appears_twice_per_draw() {
        let c = synthetic(12, 4);
        let spec = SplitSpec { draws_per_patient: 2, seed: 11, ..SplitSpec::default() };
        let split = split_patients(&c, &spec).unwrap();
        let pairs = build_pairs(&c, &split, &spec).unwrap();
        let mut counts: HashMap<(usize, &str), usize> = HashMap::new();
        for p in &pairs {
            *counts.entry((p.draw_index, p.target_note_id.as_str())).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn manifest_round_trip() {
        let c = synthetic(6, 2);
        let spec = SplitSpec { train_ratio: 0.5, ..SplitSpec::default() };
        let split = split_patients(&c, &spec).unwrap();
        let pairs = build_pairs(&c, &split, &spec).unwrap();
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
    }
}
