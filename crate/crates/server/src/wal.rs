//! Append-only session log on disk.
//!
//! A session directory holds segment files `{session}.{first_op}.log`. Each
//! line is one record, `<json>\t<crc32 hex>\n`, with the CRC over the JSON
//! bytes. Ops are written (not synced) before they are acknowledged, so a
//! killed process loses nothing the OS accepted; `sync` makes them durable
//! against power loss.
//!
//! Compaction writes the squashed log to `{session}.0.log`, whose first
//! record is a header carrying the op-id high-water mark, then drops the
//! older segments. Recovery reads the compacted file, then every segment
//! record above the high-water mark. A torn record at the end of the last
//! segment is cut off; damage anywhere else is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use orbitcad_session::SessionOp;
use serde::{Deserialize, Serialize};
use tracing::warn;

#[derive(Serialize, Deserialize)]
struct Header {
    compacted: bool,
    high_water: u64,
}

fn encode_record(json: &str) -> String {
    format!("{json}\t{:08x}\n", crc32fast::hash(json.as_bytes()))
}

/// The JSON part of a record line, if its checksum holds.
fn decode_record(line: &str) -> Option<&str> {
    let (json, crc) = line.rsplit_once('\t')?;
    let want = u32::from_str_radix(crc, 16).ok()?;
    (crc.len() == 8 && crc32fast::hash(json.as_bytes()) == want).then_some(json)
}

#[derive(Debug, Default)]
pub struct Recovered {
    /// Ops of the compacted file, numbered from 1.
    pub compacted: Vec<SessionOp>,
    /// High-water mark stored with the compacted file.
    pub compacted_high_water: u64,
    /// Segment ops above that mark, in order.
    pub tail: Vec<SessionOp>,
    /// Bytes cut from a torn final record.
    pub truncated_bytes: u64,
}

impl Recovered {
    pub fn high_water(&self) -> u64 {
        self.tail.last().map_or(self.compacted_high_water, |o| o.op_id.max(self.compacted_high_water))
    }
}

pub struct Wal {
    dir: PathBuf,
    session: String,
    current: Option<File>,
    dirty: bool,
}

impl Wal {
    pub fn segment_path(dir: &Path, session: &str, first_op: u64) -> PathBuf {
        dir.join(format!("{session}.{first_op}.log"))
    }

    /// `(first_op, path)` of every log file, ascending; the compacted file
    /// is `first_op == 0`.
    pub fn files(dir: &Path, session: &str) -> io::Result<Vec<(u64, PathBuf)>> {
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        let prefix = format!("{session}.");
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".log")) else { continue };
            if let Ok(n) = rest.parse::<u64>() {
                out.push((n, path));
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn open(dir: impl Into<PathBuf>, session: &str) -> io::Result<(Wal, Recovered)> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{session}.0.log.tmp"));
        if tmp.exists() {
            fs::remove_file(&tmp)?;
        }
        let mut rec = Recovered::default();
        let files = Self::files(&dir, session)?;
        let last_segment = files.iter().rev().find(|(n, _)| *n > 0).map(|(n, _)| *n);
        for (first, path) in &files {
            if *first == 0 {
                let text = fs::read_to_string(path)?;
                let mut lines = text.lines();
                let header: Header = lines
                    .next()
                    .and_then(decode_record)
                    .and_then(|j| serde_json::from_str(j).ok())
                    .ok_or_else(|| invalid(path, "bad compacted header"))?;
                rec.compacted_high_water = header.high_water;
                for line in lines {
                    let json = decode_record(line).ok_or_else(|| invalid(path, "bad record in compacted log"))?;
                    rec.compacted.push(parse_op(path, json)?);
                }
                continue;
            }
            let is_last = Some(*first) == last_segment;
            let file = File::open(path)?;
            let mut reader = BufReader::new(file);
            let mut offset = 0u64;
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                let complete = line.ends_with('\n');
                let parsed = complete
                    .then(|| decode_record(line.trim_end_matches('\n')))
                    .flatten()
                    .map(|j| parse_op(path, j));
                match parsed {
                    Some(Ok(op)) => {
                        if op.op_id > rec.compacted_high_water {
                            rec.tail.push(op);
                        }
                        offset += n as u64;
                    }
                    _ if is_last => {
                        let len = fs::metadata(path)?.len();
                        warn!(path = %path.display(), offset, "cutting torn record at end of log");
                        OpenOptions::new().write(true).open(path)?.set_len(offset)?;
                        rec.truncated_bytes = len - offset;
                        break;
                    }
                    Some(Err(e)) => return Err(e),
                    None => return Err(invalid(path, "damaged record before the end of the log")),
                }
            }
        }
        if rec.tail.windows(2).any(|w| w[1].op_id <= w[0].op_id) {
            return Err(invalid(&dir, "segment ops out of order"));
        }
        Ok((
            Wal {
                dir,
                session: session.to_string(),
                current: None,
                dirty: false,
            },
            rec,
        ))
    }

    /// Writes one op to the open segment, starting a new one if needed.
    pub fn append(&mut self, op: &SessionOp) -> io::Result<()> {
        if self.current.is_none() {
            let path = Self::segment_path(&self.dir, &self.session, op.op_id);
            self.current = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        let line = encode_record(&op.to_wire());
        self.current.as_mut().expect("segment open").write_all(line.as_bytes())?;
        self.dirty = true;
        Ok(())
    }

    /// fsyncs the open segment. A no-op when nothing was written since the
    /// last sync.
    pub fn sync(&mut self) -> io::Result<bool> {
        if !self.dirty {
            return Ok(false);
        }
        if let Some(f) = &self.current {
            f.sync_data()?;
        }
        self.dirty = false;
        Ok(true)
    }

    /// Replaces the whole log with `squashed`, remembering `high_water` so
    /// later ops keep their numbering.
    pub fn compact(&mut self, squashed: &[SessionOp], high_water: u64) -> io::Result<()> {
        self.sync()?;
        let tmp = self.dir.join(format!("{}.0.log.tmp", self.session));
        {
            let mut f = File::create(&tmp)?;
            let header = serde_json::to_string(&Header {
                compacted: true,
                high_water,
            })
            .expect("header serializes");
            let mut buf = encode_record(&header);
            for op in squashed {
                buf.push_str(&encode_record(&op.to_wire()));
            }
            f.write_all(buf.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, Self::segment_path(&self.dir, &self.session, 0))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.current = None;
        for (first, path) in Self::files(&self.dir, &self.session)? {
            if first > 0 {
                fs::remove_file(path)?;
            }
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn invalid(path: &Path, msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()))
}

fn parse_op(path: &Path, json: &str) -> io::Result<SessionOp> {
    SessionOp::from_wire(json).map_err(|e| invalid(path, &e.to_string()))
}
