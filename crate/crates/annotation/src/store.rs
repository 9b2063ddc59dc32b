//! Append-only annotation log over a fixed item set.
//!
//! A store directory holds `items.jsonl` (the posts to annotate) and
//! `annotations.jsonl` (one [`LogEntry`] per accepted submission). State is
//! rebuilt by replaying the log; the latest entry per (annotator, item)
//! wins. Readers see an immutable [`Snapshot`] swapped in after each write.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use idte_core::crawler::HashtagPool;
use idte_core::record::{RecordKind, SuspectIdte};
use serde::{Deserialize, Serialize};

use crate::error::{AnnotationError, Result};
use crate::record::{AnnotationRecord, Submission};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const LOG_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub revision: u64,
    pub record: AnnotationRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub revision: u64,
    pub idte_id: u64,
    pub annotator_id: String,
    /// True when an earlier annotation by the same annotator was replaced.
    pub replaced: bool,
}

/// Everything readers need, immutable once published.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub items: BTreeMap<u64, SuspectIdte>,
    /// Latest entry per item and annotator.
    pub annotations: BTreeMap<u64, BTreeMap<String, LogEntry>>,
    pub revision: u64,
}

impl Snapshot {
    fn apply(&mut self, entry: LogEntry) -> Result<bool> {
        if !self.items.contains_key(&entry.record.idte_id) {
            return Err(AnnotationError::UnknownItem(entry.record.idte_id));
        }
        self.revision = self.revision.max(entry.revision);
        Ok(self
            .annotations
            .entry(entry.record.idte_id)
            .or_default()
            .insert(entry.record.annotator_id.clone(), entry)
            .is_some())
    }

    /// Lowest-id item the annotator has not labeled, taking items with
    /// exactly one annotation before unannotated ones.
    pub fn next_unlabeled(&self, annotator_id: &str) -> Option<&SuspectIdte> {
        let count = |id: &u64| self.annotations.get(id).map_or(0, BTreeMap::len);
        let mine = |id: &u64| {
            self.annotations
                .get(id)
                .is_some_and(|a| a.contains_key(annotator_id))
        };
        let pick = |want: usize| {
            self.items
                .keys()
                .find(|id| count(id) == want && !mine(id))
                .and_then(|id| self.items.get(id))
        };
        pick(1).or_else(|| pick(0))
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.annotations
            .values()
            .flat_map(|m| m.values().map(|e| &e.record))
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations.values().map(BTreeMap::len).sum()
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.records().map(|r| r.annotator_id.as_str()).collect()
    }

    /// Hashtag weights fed back from annotators: each current annotation with
    /// a drug category at the hashtag level adds one to every hashtag of its
    /// item.
    pub fn hashtag_weights(&self) -> HashtagPool {
        let mut pool = HashtagPool::default();
        for r in self.records() {
            if r.hashtag_labels.iter().any(|l| l.is_drug()) {
                let tags: BTreeSet<&String> = self.items[&r.idte_id].hashtags.iter().collect();
                for t in tags {
                    pool.add_weight(t, 1);
                }
            }
        }
        pool
    }
}

struct Writer {
    log_path: PathBuf,
    log: File,
}

pub struct Store {
    dir: PathBuf,
    snapshot: ArcSwap<Snapshot>,
    writer: Mutex<Writer>,
}

fn read_lines(path: &Path) -> Result<(Vec<String>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(AnnotationError::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| AnnotationError::io(path, e))?;
        if n == 0 {
            break;
        }
        if !buf.ends_with('\n') {
            // torn final write: dropped and truncated away on open
            break;
        }
        good_len += n as u64;
        lines.push(buf.trim_end().to_string());
    }
    Ok((lines, good_len))
}

/// Cuts a torn final line so later appends start on a fresh line.
fn truncate_to(path: &Path, good_len: u64) -> Result<()> {
    let Ok(meta) = std::fs::metadata(path) else {
        return Ok(());
    };
    if meta.len() > good_len {
        tracing::warn!(path = %path.display(), "dropping torn final line");
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| AnnotationError::io(path, e))?;
        f.set_len(good_len)
            .map_err(|e| AnnotationError::io(path, e))?;
    }
    Ok(())
}

fn replay(dir: &Path) -> Result<Snapshot> {
    let mut snap = Snapshot::default();
    let items_path = dir.join(ITEMS_FILE);
    let (item_lines, items_len) = read_lines(&items_path)?;
    for (i, line) in item_lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let item: SuspectIdte =
            serde_json::from_str(line).map_err(|e| AnnotationError::CorruptLog {
                path: items_path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        snap.items.insert(item.id, item);
    }
    let log_path = dir.join(LOG_FILE);
    let (log_lines, good_len) = read_lines(&log_path)?;
    for (i, line) in log_lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let corrupt = |reason: String| AnnotationError::CorruptLog {
            path: log_path.clone(),
            line: i + 1,
            reason,
        };
        let entry: LogEntry = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        entry.record.check().map_err(|e| corrupt(e.to_string()))?;
        snap.apply(entry).map_err(|e| corrupt(e.to_string()))?;
    }
    truncate_to(&items_path, items_len)?;
    truncate_to(&log_path, good_len)?;
    Ok(snap)
}

impl Store {
    /// Opens or creates a store directory and replays its log.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| AnnotationError::io(&dir, e))?;
        let snap = replay(&dir)?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| AnnotationError::io(&log_path, e))?;
        Ok(Store {
            dir,
            snapshot: ArcSwap::from_pointee(snap),
            writer: Mutex::new(Writer { log_path, log }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.load_full()
    }

    /// Adds posts not already stored. Comments and known ids are skipped.
    /// Returns the number added.
    pub fn add_items(&self, items: &[SuspectIdte]) -> Result<usize> {
        let _guard = self.writer.lock().expect("store writer poisoned");
        let current = self.snapshot.load_full();
        let mut next = (*current).clone();
        let mut added = Vec::new();
        for item in items {
            if item.kind == RecordKind::Post && !next.items.contains_key(&item.id) {
                next.items.insert(item.id, item.clone());
                added.push(item);
            }
        }
        if added.is_empty() {
            return Ok(0);
        }
        let path = self.dir.join(ITEMS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AnnotationError::io(&path, e))?;
        let mut buf = Vec::new();
        for item in &added {
            serde_json::to_writer(&mut buf, item)?;
            buf.push(b'\n');
        }
        f.write_all(&buf)
            .and_then(|_| f.sync_data())
            .map_err(|e| AnnotationError::io(&path, e))?;
        self.snapshot.store(Arc::new(next));
        Ok(added.len())
    }

    /// Validates, appends durably and publishes a new snapshot.
    pub fn submit(&self, submission: Submission) -> Result<Ack> {
        let record = submission.into_record()?;
        let mut writer = self.writer.lock().expect("store writer poisoned");
        let current = self.snapshot.load_full();
        if !current.items.contains_key(&record.idte_id) {
            return Err(AnnotationError::UnknownItem(record.idte_id));
        }
        let entry = LogEntry {
            revision: current.revision + 1,
            record,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let Writer { log_path, log } = &mut *writer;
        log.write_all(&line)
            .and_then(|_| log.sync_data())
            .map_err(|e| AnnotationError::io(&*log_path, e))?;
        let mut next = (*current).clone();
        let ack = Ack {
            revision: entry.revision,
            idte_id: entry.record.idte_id,
            annotator_id: entry.record.annotator_id.clone(),
            replaced: false,
        };
        let replaced = next.apply(entry)?;
        self.snapshot.store(Arc::new(next));
        tracing::debug!(
            revision = ack.revision,
            idte = ack.idte_id,
            "annotation stored"
        );
        Ok(Ack { replaced, ..ack })
    }
}
