//! Append-only segmented record files.
//!
//! Segment `n` (file `segment-<n>`) holds ids `n*S+1 ..= (n+1)*S` for a
//! fixed `S` records per segment. Each record is one length-prefixed frame.
//! Opening a store scans every segment, keeps the longest valid prefix of
//! consecutive ids and truncates whatever follows it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use tracing::warn;

use crate::codec::{self, FrameSplit};

use super::LogRecord;

const SEGMENT_PREFIX: &str = "segment-";

#[derive(Debug)]
struct Segment {
    file: File,
    /// (offset, frame length) per record, in id order.
    frames: Vec<(u64, u32)>,
    len: u64,
}

#[derive(Debug)]
pub struct SegmentStore {
    dir: PathBuf,
    per_segment: u64,
    segments: BTreeMap<u64, Segment>,
    last_id: u64,
}

pub fn segment_path(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("{SEGMENT_PREFIX}{n}"))
}

impl SegmentStore {
    pub fn open(dir: &Path, per_segment: u64) -> io::Result<Self> {
        assert!(per_segment > 0);
        fs::create_dir_all(dir)?;
        let mut numbers = Vec::new();
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            if let Some(n) = name
                .to_str()
                .and_then(|s| s.strip_prefix(SEGMENT_PREFIX))
                .and_then(|s| s.parse::<u64>().ok())
            {
                numbers.push(n);
            }
        }
        numbers.sort_unstable();

        let mut store = SegmentStore {
            dir: dir.to_owned(),
            per_segment,
            segments: BTreeMap::new(),
            last_id: 0,
        };
        let mut broken = false;
        for n in numbers {
            let path = segment_path(dir, n);
            let first_id = n * per_segment + 1;
            let contiguous = store.segments.is_empty() || store.last_id + 1 == first_id;
            if broken || !contiguous {
                warn!(path = %path.display(), "dropping segment after a gap or torn record");
                fs::remove_file(&path)?;
                broken = true;
                continue;
            }
            let (segment, complete) = Self::scan(&path, first_id, per_segment)?;
            store.last_id = first_id - 1 + segment.frames.len() as u64;
            store.segments.insert(n, segment);
            broken = !complete;
        }
        Ok(store)
    }

    /// Reads the valid prefix of one segment, truncating any torn tail.
    /// Returns whether the segment ended cleanly.
    fn scan(path: &Path, first_id: u64, per_segment: u64) -> io::Result<(Segment, bool)> {
        let bytes = fs::read(path)?;
        let mut frames = Vec::new();
        let mut at = 0usize;
        let mut clean = true;
        while at < bytes.len() {
            let expected_id = first_id + frames.len() as u64;
            let ok = match codec::split_frame(&bytes[at..]) {
                FrameSplit::Complete(body, used) => LogRecord::decode(body)
                    .ok()
                    .filter(|r| r.id == expected_id && frames.len() < per_segment as usize)
                    .map(|_| used),
                _ => None,
            };
            match ok {
                Some(used) => {
                    frames.push((at as u64, used as u32));
                    at += used;
                }
                None => {
                    warn!(path = %path.display(), offset = at, "truncating torn log tail");
                    clean = false;
                    break;
                }
            }
        }
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        if !clean {
            file.set_len(at as u64)?;
            file.sync_all()?;
        }
        Ok((
            Segment {
                file,
                frames,
                len: at as u64,
            },
            clean,
        ))
    }

    pub fn last_id(&self) -> u64 {
        self.last_id
    }

    /// Lowest id still on disk, if any.
    pub fn first_id(&self) -> Option<u64> {
        self.segments
            .first_key_value()
            .filter(|(_, s)| !s.frames.is_empty())
            .map(|(n, _)| n * self.per_segment + 1)
    }

    /// Appends the record (whose id must be `last_id + 1`) and syncs it.
    pub fn append(&mut self, record: &LogRecord) -> io::Result<()> {
        assert_eq!(record.id, self.last_id + 1, "log ids are dense");
        let n = (record.id - 1) / self.per_segment;
        if !self.segments.contains_key(&n) {
            let path = segment_path(&self.dir, n);
            let file = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(true)
                .open(&path)?;
            if let Ok(d) = File::open(&self.dir) {
                let _ = d.sync_all();
            }
            self.segments.insert(
                n,
                Segment {
                    file,
                    frames: Vec::new(),
                    len: 0,
                },
            );
        }
        let segment = self.segments.get_mut(&n).expect("just inserted");
        let bytes = codec::frame(&record.encode());
        let result = segment
            .file
            .write_all_at(&bytes, segment.len)
            .and_then(|()| segment.file.sync_data());
        if let Err(e) = result {
            let _ = segment.file.set_len(segment.len);
            return Err(e);
        }
        segment.frames.push((segment.len, bytes.len() as u32));
        segment.len += bytes.len() as u64;
        self.last_id = record.id;
        Ok(())
    }

    pub fn read(&self, id: u64) -> io::Result<Option<LogRecord>> {
        if id == 0 || id > self.last_id {
            return Ok(None);
        }
        let n = (id - 1) / self.per_segment;
        let idx = ((id - 1) % self.per_segment) as usize;
        let Some(&(offset, len)) = self.segments.get(&n).and_then(|s| s.frames.get(idx)) else {
            return Ok(None);
        };
        let mut buf = vec![0u8; len as usize];
        self.segments[&n].file.read_exact_at(&mut buf, offset)?;
        let body = match codec::split_frame(&buf) {
            FrameSplit::Complete(body, _) => body,
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "bad frame in log")),
        };
        LogRecord::decode(body)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    /// Deletes every segment whose ids all lie below `floor`.
    pub fn drop_below(&mut self, floor: u64) -> io::Result<()> {
        let per = self.per_segment;
        let doomed: Vec<u64> = self
            .segments
            .keys()
            .copied()
            .filter(|n| (n + 1) * per < floor)
            .collect();
        for n in doomed {
            self.segments.remove(&n);
            fs::remove_file(segment_path(&self.dir, n))?;
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::StructuredEvent;
    use std::io::Write;

    fn rec(id: u64) -> LogRecord {
        LogRecord {
            id,
            timestamp_ns: 1_000 + id as i64,
            event: StructuredEvent::new("d", "t").with_field("n", id as i64),
        }
    }

    #[test]
    fn append_read_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = SegmentStore::open(dir.path(), 3).unwrap();
            for id in 1..=7 {
                s.append(&rec(id)).unwrap();
            }
            assert_eq!(s.segment_count(), 3);
            assert_eq!(s.read(5).unwrap(), Some(rec(5)));
            assert_eq!(s.read(8).unwrap(), None);
        }
        let s = SegmentStore::open(dir.path(), 3).unwrap();
        assert_eq!(s.last_id(), 7);
        assert_eq!(s.first_id(), Some(1));
        for id in 1..=7 {
            assert_eq!(s.read(id).unwrap(), Some(rec(id)));
        }
    }

    #[test]
    fn drop_below_removes_whole_segments_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SegmentStore::open(dir.path(), 3).unwrap();
        for id in 1..=7 {
            s.append(&rec(id)).unwrap();
        }
        s.drop_below(3).unwrap();
        assert_eq!(s.first_id(), Some(1));
        s.drop_below(4).unwrap();
        assert_eq!(s.first_id(), Some(4));
        assert!(!segment_path(dir.path(), 0).exists());
        drop(s);
        let s = SegmentStore::open(dir.path(), 3).unwrap();
        assert_eq!((s.first_id(), s.last_id()), (Some(4), 7));
    }

    #[test]
    fn garbage_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = SegmentStore::open(dir.path(), 10).unwrap();
            for id in 1..=4 {
                s.append(&rec(id)).unwrap();
            }
        }
        let path = segment_path(dir.path(), 0);
        let clean_len = fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 3, b'x', b'y', b'z', 9]).unwrap();
        drop(f);
        let s = SegmentStore::open(dir.path(), 10).unwrap();
        assert_eq!(s.last_id(), 4);
        assert_eq!(fs::metadata(&path).unwrap().len(), clean_len);
    }
}
