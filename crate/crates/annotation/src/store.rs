//! Append-only judgment log.
//!
//! Every accepted judgment is appended as one JSON line and synced before
//! the caller is acknowledged. Replaying the log keeps the last judgment per
//! (pair, annotator); compaction rewrites the file with only those.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use contextguard_core::eval::HumanJudgment;

use crate::service::ServiceError;

#[derive(Debug)]
pub struct JudgmentStore {
    path: Option<PathBuf>,
    file: Option<File>,
    current: BTreeMap<(String, String), HumanJudgment>,
    log_lines: usize,
}

impl JudgmentStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        JudgmentStore {
            path: None,
            file: None,
            current: BTreeMap::new(),
            log_lines: 0,
        }
    }

    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let mut current = BTreeMap::new();
        let mut log_lines = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let j: HumanJudgment = serde_json::from_str(&line).map_err(|e| {
                    ServiceError::Storage(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                current.insert((j.pair_id.clone(), j.annotator_id.clone()), j);
                log_lines += 1;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JudgmentStore {
            path: Some(path),
            file: Some(file),
            current,
            log_lines,
        })
    }

    /// Records `j`, replacing an earlier judgment by the same annotator on
    /// the same pair. Returns whether something was replaced.
    pub fn append(&mut self, j: HumanJudgment) -> Result<bool, ServiceError> {
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(&j).expect("judgment serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
            self.log_lines += 1;
        }
        let replaced = self
            .current
            .insert((j.pair_id.clone(), j.annotator_id.clone()), j)
            .is_some();
        if self.log_lines > 2 * self.current.len() + 64 {
            self.compact()?;
        }
        Ok(replaced)
    }

    /// Rewrites the log with one line per live judgment.
    pub fn compact(&mut self) -> Result<(), ServiceError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("compact.tmp");
        {
            let mut out = File::create(&tmp)?;
            for j in self.current.values() {
                writeln!(out, "{}", serde_json::to_string(j).expect("judgment serializes"))?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        self.file = Some(OpenOptions::new().append(true).open(path)?);
        self.log_lines = self.current.len();
        Ok(())
    }

    pub fn judgments(&self) -> impl Iterator<Item = &HumanJudgment> {
        self.current.values()
    }

    pub fn for_pair<'a>(&'a self, pair_id: &'a str) -> impl Iterator<Item = &'a HumanJudgment> {
        self.current
            .range((pair_id.to_string(), String::new())..)
            .take_while(move |((p, _), _)| p == pair_id)
            .map(|(_, j)| j)
    }

    pub fn count_for_pair(&self, pair_id: &str) -> usize {
        self.for_pair(pair_id).count()
    }

    pub fn has_judged(&self, pair_id: &str, annotator: &str) -> bool {
        self.current.contains_key(&(pair_id.to_string(), annotator.to_string()))
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Lines currently in the log file, superseded ones included.
    pub fn log_lines(&self) -> usize {
        self.log_lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(pair: &str, who: &str, verdict: bool, ts: u64) -> HumanJudgment {
        HumanJudgment {
            pair_id: pair.into(),
            annotator_id: who.into(),
            verdict,
            inconsistency_dimension: None,
            timestamp: ts,
        }
    }

    #[test]
    fn resubmission_replaces_and_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.jsonl");
        let mut s = JudgmentStore::open(&path).unwrap();
        assert!(!s.append(j("a", "u1", true, 1)).unwrap());
        assert!(s.append(j("a", "u1", false, 2)).unwrap());
        assert_eq!(s.count_for_pair("a"), 1);
        assert_eq!(s.log_lines(), 2);
        assert!(!s.for_pair("a").next().unwrap().verdict);
    }

    #[test]
    fn restart_and_compaction_preserve_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("judgments.jsonl");
        let mut s = JudgmentStore::open(&path).unwrap();
        for i in 0..10 {
            s.append(j(&format!("p{}", i % 3), &format!("u{}", i % 4), i % 2 == 0, i)).unwrap();
        }
        let before: Vec<HumanJudgment> = s.judgments().cloned().collect();
        drop(s);
        let mut s = JudgmentStore::open(&path).unwrap();
        assert_eq!(s.judgments().cloned().collect::<Vec<_>>(), before);
        s.compact().unwrap();
        assert_eq!(s.log_lines(), before.len());
        drop(s);
        let s = JudgmentStore::open(&path).unwrap();
        assert_eq!(s.judgments().cloned().collect::<Vec<_>>(), before);
    }

    #[test]
    fn prefix_pairs_are_not_confused() {
        let mut s = JudgmentStore::in_memory();
        s.append(j("a", "u1", true, 0)).unwrap();
        s.append(j("ab", "u1", true, 0)).unwrap();
        s.append(j("ab", "u2", true, 0)).unwrap();
        assert_eq!(s.count_for_pair("a"), 1);
        assert_eq!(s.count_for_pair("ab"), 2);
    }
}
