//! Data directory: `log/` holds newline-delimited record segments named by
//! their first seq, `snapshots/` holds full state files named by seq.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::command::EventLogRecord;
use super::state::PlatformState;
use super::ServiceError;

pub const SEGMENT_RECORDS: u64 = 10_000;

fn io(context: &str, path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Storage(format!("{context} {}: {e}", path.display()))
}

fn seq_name(seq: u64, ext: &str) -> String {
    format!("{seq:020}.{ext}")
}

fn numbered(dir: &Path, ext: &str) -> Result<Vec<(u64, PathBuf)>, ServiceError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io("reading", dir, e))? {
        let path = entry.map_err(|e| io("reading", dir, e))?.path();
        if path.extension().and_then(|x| x.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}

/// What a data directory holds, before replay.
#[derive(Debug)]
pub struct Loaded {
    pub snapshot: Option<PlatformState>,
    /// Records after the snapshot, in seq order with no gaps.
    pub records: Vec<EventLogRecord>,
    /// Bytes of an unterminated or unparseable final record that were cut.
    pub dropped_bytes: u64,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    segment: Option<(u64, File)>,
    segment_records: u64,
    fsync: bool,
}

impl Store {
    pub fn log_dir(root: &Path) -> PathBuf {
        root.join("log")
    }

    pub fn snapshot_dir(root: &Path) -> PathBuf {
        root.join("snapshots")
    }

    /// Opens (creating if needed) a data directory, cutting a torn final
    /// record so appends continue on a clean line.
    pub fn open(root: &Path, fsync: bool) -> Result<(Self, Loaded), ServiceError> {
        for d in [Self::log_dir(root), Self::snapshot_dir(root)] {
            fs::create_dir_all(&d).map_err(|e| io("creating", &d, e))?;
        }
        let loaded = Self::load(root, true)?;
        let segments = numbered(&Self::log_dir(root), "ndjson")?;
        let (segment, segment_records) = match segments.last() {
            None => (None, 0),
            Some((first, path)) => {
                let text = fs::read_to_string(path).map_err(|e| io("reading", path, e))?;
                let f = OpenOptions::new().append(true).open(path).map_err(|e| io("opening", path, e))?;
                (Some((*first, f)), text.lines().count() as u64)
            }
        };
        Ok((Self { root: root.to_path_buf(), segment, segment_records, fsync }, loaded))
    }

    /// Reads snapshot and log. With `repair`, a torn tail is also truncated
    /// on disk.
    pub fn load(root: &Path, repair: bool) -> Result<Loaded, ServiceError> {
        let snapshot = Self::latest_snapshot(root)?;
        let after = snapshot.as_ref().map_or(0, |s| s.seq);
        let segments = numbered(&Self::log_dir(root), "ndjson")?;
        let mut records = Vec::new();
        let mut dropped_bytes = 0;
        let mut expect = after + 1;
        for (si, (_, path)) in segments.iter().enumerate() {
            let bytes = fs::read(path).map_err(|e| io("reading", path, e))?;
            let last_segment = si + 1 == segments.len();
            let mut offset = 0usize;
            while offset < bytes.len() {
                let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
                let line = &bytes[offset..end.unwrap_or(bytes.len())];
                let parsed = end.and_then(|_| serde_json::from_slice::<EventLogRecord>(line).ok());
                let is_tail = last_segment && end.is_none_or(|e| e + 1 == bytes.len());
                let Some(rec) = parsed else {
                    if is_tail {
                        dropped_bytes = (bytes.len() - offset) as u64;
                        log::warn!("dropping {dropped_bytes} bytes of torn record at end of {}", path.display());
                        if repair {
                            let f = OpenOptions::new().write(true).open(path).map_err(|e| io("opening", path, e))?;
                            f.set_len(offset as u64).map_err(|e| io("truncating", path, e))?;
                        }
                        break;
                    }
                    return Err(ServiceError::CorruptLog(format!("{} at byte {offset}: unreadable record", path.display())));
                };
                offset = end.map_or(bytes.len(), |e| e + 1);
                if rec.seq <= after {
                    continue;
                }
                if rec.seq != expect {
                    return Err(ServiceError::CorruptLog(format!("expected seq {expect}, found {}", rec.seq)));
                }
                expect += 1;
                records.push(rec);
            }
        }
        Ok(Loaded { snapshot, records, dropped_bytes })
    }

    fn latest_snapshot(root: &Path) -> Result<Option<PlatformState>, ServiceError> {
        let dir = Self::snapshot_dir(root);
        if !dir.exists() {
            return Ok(None);
        }
        for (n, path) in numbered(&dir, "json")?.into_iter().rev() {
            let bytes = fs::read(&path).map_err(|e| io("reading", &path, e))?;
            match serde_json::from_slice::<PlatformState>(&bytes) {
                Ok(s) if s.seq == n => return Ok(Some(s)),
                Ok(_) => log::warn!("snapshot {} has mismatched seq; skipping", path.display()),
                Err(e) => log::warn!("snapshot {} unreadable ({e}); trying an older one", path.display()),
            }
        }
        Ok(None)
    }

    pub fn append(&mut self, rec: &EventLogRecord) -> Result<(), ServiceError> {
        if self.segment.is_none() || self.segment_records >= SEGMENT_RECORDS {
            let path = Self::log_dir(&self.root).join(seq_name(rec.seq, "ndjson"));
            let f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io("creating", &path, e))?;
            self.segment = Some((rec.seq, f));
            self.segment_records = 0;
        }
        let (first, f) = self.segment.as_mut().expect("segment open");
        let path = || Self::log_dir(&self.root).join(seq_name(*first, "ndjson"));
        // one write per record keeps torn writes to the final line
        f.write_all(rec.to_line().as_bytes()).map_err(|e| io("appending to", &path(), e))?;
        if self.fsync {
            f.sync_data().map_err(|e| io("syncing", &path(), e))?;
        }
        self.segment_records += 1;
        Ok(())
    }

    /// Writes a full snapshot atomically (temp file + rename).
    pub fn snapshot(&self, state: &PlatformState) -> Result<PathBuf, ServiceError> {
        let dir = Self::snapshot_dir(&self.root);
        let path = dir.join(seq_name(state.seq, "json"));
        let tmp = dir.join(format!(".{}.tmp", state.seq));
        let bytes = serde_json::to_vec(state).map_err(|e| ServiceError::Storage(e.to_string()))?;
        fs::write(&tmp, bytes).map_err(|e| io("writing", &tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io("renaming", &tmp, e))?;
        Ok(path)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}
