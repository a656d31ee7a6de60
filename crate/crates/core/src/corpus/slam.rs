//! SLAM-style tab-separated interaction logs.
//!
//! Columns: user id, exercise id, token index, token surface, label.
//! Rows with the same (user, exercise id) form one interaction; exercises
//! appear in temporal order within the file.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::corpus::types::{Exercise, Interaction, LearningHistory};
use crate::corpus::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// How raw labels encode correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelConvention {
    /// 1 marks a mistake (raw SLAM files).
    OneIsError,
    /// 1 marks a correct answer (internal convention).
    OneIsCorrect,
}

pub fn ingest_slam(
    path: &Path,
    convention: LabelConvention,
) -> Result<(Vocabulary, Vec<LearningHistory>)> {
    let file = std::fs::File::open(path)?;
    ingest_slam_reader(file, convention)
}

pub fn ingest_slam_reader(
    reader: impl Read,
    convention: LabelConvention,
) -> Result<(Vocabulary, Vec<LearningHistory>)> {
    let mut vocab = Vocabulary::new();
    // user -> ordered exercises; exercise key -> (tokens, labels)
    let mut users: IndexMap<String, IndexMap<String, (Vec<usize>, Vec<u8>)>> = IndexMap::new();

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 tab-separated columns, got {}", cols.len()),
            });
        }
        let (user, ex_id, _tok_idx, surface, raw_label) =
            (cols[0], cols[1], cols[2], cols[3], cols[4]);
        cols[2].parse::<usize>().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad token index {:?}", cols[2]),
        })?;
        let raw: u8 = raw_label.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label {raw_label:?}"),
        })?;
        if raw > 1 {
            return Err(Error::Data(format!(
                "label {raw} outside {{0,1}} at line {lineno}"
            )));
        }
        let label = match convention {
            LabelConvention::OneIsCorrect => raw,
            LabelConvention::OneIsError => 1 - raw,
        };
        let pieces = tokenize(surface);
        if pieces.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("token column {surface:?} is empty after normalization"),
            });
        }
        let slot = users
            .entry(user.to_string())
            .or_default()
            .entry(ex_id.to_string())
            .or_default();
        for piece in pieces {
            let id = vocab.intern(&piece)?;
            slot.0.push(id);
            slot.1.push(label);
        }
    }

    let mut histories = Vec::new();
    for (user, exercises) in users {
        let mut interactions = Vec::new();
        for (k, (_ex_id, (tokens, labels))) in exercises.into_iter().enumerate() {
            let exercise = Exercise { tokens };
            interactions.push(Interaction::new(exercise, labels, k + 1)?);
        }
        histories.push(LearningHistory::new(user, interactions)?);
    }
    Ok((vocab, histories))
}

/// Write histories back out in the same TSV layout (labels 1 = correct).
pub fn emit_slam(
    histories: &[LearningHistory],
    vocab: &Vocabulary,
    mut w: impl Write,
) -> Result<()> {
    for h in histories {
        for it in &h.interactions {
            let ex_id = format!("{}-{}", h.student_id, it.seq_index);
            for (k, (&tok, &label)) in it.exercise.tokens.iter().zip(&it.labels).enumerate() {
                let surface = vocab
                    .word(tok)
                    .ok_or_else(|| Error::Vocab(format!("id {tok} not in vocabulary")))?;
                writeln!(w, "{}\t{}\t{}\t{}\t{}", h.student_id, ex_id, k, surface, label)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
u1\te1\t0\tthe\t1
u1\te1\t1\tdog\t0
u1\te1\t2\truns\t0
u1\te2\t0\tthe\t1
u1\te2\t1\tcat\t1
u1\te2\t2\tsleeps\t0
";

    #[test]
    fn single_user_two_exercises() {
        let (_v, hs) =
            ingest_slam_reader(FIXTURE.as_bytes(), LabelConvention::OneIsCorrect).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].len(), 2);
        assert_eq!(hs[0].interactions[0].exercise.len(), 3);
        assert_eq!(hs[0].interactions[1].exercise.len(), 3);
    }

    #[test]
    fn one_is_error_inverts_labels() {
        let (_v, hs) = ingest_slam_reader(FIXTURE.as_bytes(), LabelConvention::OneIsError).unwrap();
        assert_eq!(hs[0].interactions[0].labels, vec![0, 1, 1]);
    }

    #[test]
    fn interleaved_users_keep_file_order() {
        // reference parse done by hand over this 10-row fixture: user a has
        // exercises (a1: tokens [the, dog], labels kept in file order) then
        // a2; user b has b1 with 2 tokens.
        let data = "\
a\ta1\t0\tthe\t1
a\ta1\t1\tdog\t1
b\tb1\t0\tone\t0
b\tb1\t1\ttwo\t1
a\ta2\t0\tcat\t1
a\ta2\t1\tred\t0
a\ta2\t2\tsun\t1
b\tb2\t0\tsix\t1
b\tb2\t1\tten\t0
b\tb2\t2\tsky\t1
";
        let (v, hs) = ingest_slam_reader(data.as_bytes(), LabelConvention::OneIsCorrect).unwrap();
        assert_eq!(hs.len(), 2);
        let a = hs.iter().find(|h| h.student_id == "a").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(
            a.interactions[0]
                .exercise
                .tokens
                .iter()
                .map(|&t| v.word(t).unwrap())
                .collect::<Vec<_>>(),
            vec!["the", "dog"]
        );
        assert_eq!(a.interactions[1].labels, vec![1, 0, 1]);
        let b = hs.iter().find(|h| h.student_id == "b").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.interactions[1].exercise.len(), 3);
    }

    #[test]
    fn malformed_row_reports_line() {
        let data = "u1\te1\t0\tthe\t1\nbadrow\n";
        let err = ingest_slam_reader(data.as_bytes(), LabelConvention::OneIsCorrect).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let data = "u1\te1\t0\tthe\t3\n";
        let err = ingest_slam_reader(data.as_bytes(), LabelConvention::OneIsCorrect).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn emit_ingest_round_trip() {
        let (v, hs) =
            ingest_slam_reader(FIXTURE.as_bytes(), LabelConvention::OneIsCorrect).unwrap();
        let mut buf = Vec::new();
        emit_slam(&hs, &v, &mut buf).unwrap();
        let (v2, hs2) =
            ingest_slam_reader(buf.as_slice(), LabelConvention::OneIsCorrect).unwrap();
        assert_eq!(hs, hs2);
        assert_eq!(v.len(), v2.len());
    }
}
