//! Corpus and external-score ingestion: line-delimited JSON records.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One document of the evaluation corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub text: String,
}

/// Ingestion result: the valid entries plus per-line skip reasons.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub entries: Vec<CorpusEntry>,
    /// (1-based line number, reason) for every malformed line.
    pub skipped_lines: Vec<(usize, String)>,
}

/// Parses a corpus file with one JSON record per line, fields `id` and
/// `text`. Malformed lines are skipped and reported with their line numbers;
/// duplicate ids and files with no valid entries are hard errors.
pub fn ingest(path: &Path) -> Result<IngestReport, HarnessError> {
    let content = fs::read_to_string(path).map_err(|e| HarnessError::CorpusIo {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut skipped_lines = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("{}:{line_no}: skipping malformed line: {e}", path.display());
                skipped_lines.push((line_no, e.to_string()));
                continue;
            }
        };
        if entry.text.is_empty() {
            log::warn!("{}:{line_no}: skipping entry with empty text", path.display());
            skipped_lines.push((line_no, "empty text".to_string()));
            continue;
        }
        if seen.insert(entry.id.clone(), line_no).is_some() {
            return Err(HarnessError::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(HarnessError::NoValidEntries(path.display().to_string()));
    }
    Ok(IngestReport {
        entries,
        skipped_lines,
    })
}

#[derive(Debug, Deserialize)]
struct ScoreLine {
    id: String,
    score: f64,
}

/// Externally computed per-text scores, keyed by `"<method>:<entry-id>"` or
/// a bare `"<method>"` for an already-aggregated value.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    scores: HashMap<String, f64>,
}

impl ExternalScores {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let content = fs::read_to_string(path).map_err(|e| HarnessError::CorpusIo {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut scores = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScoreLine =
                serde_json::from_str(line).map_err(|e| HarnessError::MalformedScores {
                    path: path.display().to_string(),
                    line: idx + 1,
                    source: e,
                })?;
            scores.insert(parsed.id, parsed.score);
        }
        Ok(ExternalScores { scores })
    }

    /// Score for a method row: a bare method-keyed value wins; otherwise the
    /// mean over `"<method>:<entry-id>"` values for the processed entries.
    pub fn for_method(&self, method: &str, entry_ids: &[String]) -> Option<f64> {
        if let Some(&direct) = self.scores.get(method) {
            return Some(direct);
        }
        let per_entry: Vec<f64> = entry_ids
            .iter()
            .filter_map(|id| self.scores.get(&format!("{method}:{id}")).copied())
            .collect();
        if per_entry.is_empty() {
            None
        } else {
            Some(per_entry.iter().sum::<f64>() / per_entry.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_reads_valid_lines() {
        let f = write_lines(&[
            r#"{"id": "a", "text": "alpha beta"}"#,
            r#"{"id": "b", "text": "gamma"}"#,
            r#"{"id": "c", "text": "delta"}"#,
        ]);
        let report = ingest(f.path()).unwrap();
        assert_eq!(report.entries.len(), 3);
        assert!(report.skipped_lines.is_empty());
    }

    #[test]
    fn ingest_skips_malformed_lines_with_line_numbers() {
        let f = write_lines(&[
            r#"{"id": "a", "text": "alpha"}"#,
            r#"{"id": "b"}"#,
            r#"not json at all"#,
            r#"{"id": "c", "text": "gamma"}"#,
        ]);
        let report = ingest(f.path()).unwrap();
        assert_eq!(report.entries.len(), 2);
        let lines: Vec<usize> = report.skipped_lines.iter().map(|(n, _)| *n).collect();
        assert_eq!(lines, vec![2, 3]);
    }

    #[test]
    fn ingest_rejects_duplicate_ids() {
        let f = write_lines(&[
            r#"{"id": "a", "text": "alpha"}"#,
            r#"{"id": "a", "text": "beta"}"#,
        ]);
        match ingest(f.path()) {
            Err(HarnessError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_empty_and_missing_files() {
        let f = write_lines(&["", "   "]);
        assert!(matches!(
            ingest(f.path()),
            Err(HarnessError::NoValidEntries(_))
        ));
        assert!(matches!(
            ingest(Path::new("/nonexistent/corpus.jsonl")),
            Err(HarnessError::CorpusIo { .. })
        ));
    }

    #[test]
    fn external_scores_prefer_direct_then_average() {
        let f = write_lines(&[
            r#"{"id": "greedy", "score": 0.5}"#,
            r#"{"id": "top_p[p=0.95]:doc1", "score": 0.2}"#,
            r#"{"id": "top_p[p=0.95]:doc2", "score": 0.4}"#,
        ]);
        let scores = ExternalScores::load(f.path()).unwrap();
        let ids = vec!["doc1".to_string(), "doc2".to_string()];
        assert_eq!(scores.for_method("greedy", &ids), Some(0.5));
        let avg = scores.for_method("top_p[p=0.95]", &ids).unwrap();
        assert!((avg - 0.3).abs() < 1e-12);
        assert_eq!(scores.for_method("beam[w=5]", &ids), None);
    }
}
