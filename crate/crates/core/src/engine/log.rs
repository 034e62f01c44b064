//! Append-only session logs.
//!
//! One CSV file per session, named by its start time, headed by
//! `#impsy-log v1 dims=D`. Each line is `ISO8601,source,v0,...,v{D-1}`
//! with millisecond timestamps.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Ai,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Ai => "ai",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub at: DateTime<Utc>,
    pub source: Source,
    pub dims: Vec<f64>,
}

/// Truncate to whole milliseconds, the precision stored in the log.
pub fn to_millis(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(t.timestamp_millis()).single().expect("in range")
}

impl LogRecord {
    pub fn new(at: DateTime<Utc>, source: Source, dims: Vec<f64>) -> Self {
        Self { at: to_millis(at), source, dims }
    }

    pub fn to_line(&self) -> String {
        let mut line = format!("{},{}", self.at.to_rfc3339_opts(SecondsFormat::Millis, true), self.source.as_str());
        for v in &self.dims {
            line.push(',');
            line.push_str(&v.to_string());
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<Self, Error> {
        let mut parts = line.trim_end_matches(['\r', '\n']).split(',');
        let ts = parts.next().ok_or_else(|| Error::Log("empty line".into()))?;
        let at = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| Error::Log(format!("bad timestamp {ts:?}: {e}")))?
            .with_timezone(&Utc);
        let source = match parts.next() {
            Some("human") => Source::Human,
            Some("ai") => Source::Ai,
            other => return Err(Error::Log(format!("bad source {other:?}"))),
        };
        let dims = parts
            .map(|p| p.parse::<f64>().map_err(|e| Error::Log(format!("bad value {p:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if dims.is_empty() {
            return Err(Error::Log("record has no values".into()));
        }
        Ok(Self { at, source, dims })
    }
}

pub fn header_line(dims: usize) -> String {
    format!("#impsy-log v1 dims={dims}")
}

/// `dims` from a header line, if it is one.
pub fn parse_header(line: &str) -> Option<usize> {
    line.trim().strip_prefix("#impsy-log v1 dims=")?.parse().ok()
}

pub fn session_file_name(start: DateTime<Utc>) -> String {
    format!("{}.csv", start.format("%Y%m%dT%H%M%S"))
}

/// Writer for one session file. Write failures (disk full, removed
/// directory) disable logging instead of failing the caller.
pub struct SessionLog {
    path: PathBuf,
    writer: BufWriter<File>,
    last_flush: Instant,
    disabled: bool,
    written: u64,
}

impl SessionLog {
    /// Start a new session file in `log_dir`. An existing file of the same
    /// name is never touched: a numeric suffix is added instead.
    pub fn create(log_dir: &Path, start: DateTime<Utc>, dims: usize) -> Result<Self, Error> {
        std::fs::create_dir_all(log_dir)?;
        let base = start.format("%Y%m%dT%H%M%S").to_string();
        let mut path = log_dir.join(format!("{base}.csv"));
        let mut n = 1;
        let file = loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(f) => break f,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = log_dir.join(format!("{base}-{n}.csv"));
                }
                Err(e) => return Err(Error::Io(format!("creating {}: {e}", path.display()))),
            }
        };
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", header_line(dims))?;
        writer.flush()?;
        Ok(Self { path, writer, last_flush: Instant::now(), disabled: false, written: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn write(&mut self, record: &LogRecord) {
        if self.disabled {
            return;
        }
        if let Err(e) = writeln!(self.writer, "{}", record.to_line()) {
            self.disable(e);
            return;
        }
        self.written += 1;
        if self.last_flush.elapsed() >= Duration::from_secs(1) {
            self.flush();
        }
    }

    pub fn flush(&mut self) {
        if self.disabled {
            return;
        }
        if let Err(e) = self.writer.flush() {
            self.disable(e);
        }
        self.last_flush = Instant::now();
    }

    fn disable(&mut self, e: std::io::Error) {
        log::error!("logging to {} failed, disabling session log: {e}", self.path.display());
        self.disabled = true;
    }
}

impl Drop for SessionLog {
    fn drop(&mut self) {
        self.flush();
    }
}

#[derive(Debug, Default)]
pub struct LogStats {
    pub dropped: std::sync::atomic::AtomicU64,
    pub disabled: std::sync::atomic::AtomicBool,
}

/// Background writer fed through a bounded queue; `write` never blocks.
pub struct LogWriter {
    tx: Option<Sender<LogRecord>>,
    pub stats: std::sync::Arc<LogStats>,
    pub path: PathBuf,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl LogWriter {
    pub fn spawn(mut log: SessionLog, capacity: usize) -> Self {
        let (tx, rx): (Sender<LogRecord>, Receiver<LogRecord>) = channel::bounded(capacity);
        let stats = std::sync::Arc::new(LogStats::default());
        let path = log.path().to_path_buf();
        let st = stats.clone();
        let thread = std::thread::Builder::new()
            .name("log-writer".into())
            .spawn(move || loop {
                match rx.recv_timeout(Duration::from_millis(250)) {
                    Ok(rec) => {
                        log.write(&rec);
                        for rec in rx.try_iter() {
                            log.write(&rec);
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => log.flush(),
                    Err(RecvTimeoutError::Disconnected) => {
                        log.flush();
                        return;
                    }
                }
                if log.is_disabled() {
                    st.disabled.store(true, std::sync::atomic::Ordering::Relaxed);
                }
            })
            .expect("spawn log writer");
        Self { tx: Some(tx), stats, path, thread: Some(thread) }
    }

    pub fn write(&self, record: LogRecord) {
        if let Some(tx) = &self.tx {
            if let Err(TrySendError::Full(_)) = tx.try_send(record) {
                self.stats.dropped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        }
    }

    /// Flush and stop the writer thread.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap()
    }

    #[test]
    fn record_round_trips() {
        let rec = LogRecord::new(t0() + chrono::Duration::microseconds(1_234_567), Source::Ai, vec![0.1, 1.0 / 3.0, 0.0]);
        let line = rec.to_line();
        assert!(line.starts_with("2026-03-01T12:00:01.234Z,ai,0.1,"), "{line}");
        assert_eq!(LogRecord::parse_line(&line).unwrap(), rec);
    }

    #[test]
    fn malformed_lines_rejected() {
        for bad in [
            "",
            "2026-03-01T12:00:00.000Z",
            "2026-03-01T12:00:00.000Z,robot,0.1",
            "2026-03-01T12:00:00.000Z,ai,0.5,x",
            "nope,ai,0.5",
            "2026-03-01T12:00:00.0",
        ] {
            assert!(LogRecord::parse_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn header_parses() {
        assert_eq!(parse_header(&header_line(8)), Some(8));
        assert_eq!(parse_header("2026-..."), None);
    }

    #[test]
    fn hundred_records_hundred_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = {
            let mut log = SessionLog::create(dir.path(), t0(), 2).unwrap();
            for i in 0..100 {
                log.write(&LogRecord::new(t0() + chrono::Duration::milliseconds(i * 10), Source::Human, vec![0.5, 0.25]));
            }
            log.path().to_path_buf()
        };
        assert_eq!(path.file_name().unwrap(), "20260301T120000.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "#impsy-log v1 dims=2");
        assert_eq!(lines.len(), 101);
        assert!(lines[1..].iter().all(|l| LogRecord::parse_line(l).is_ok()));
    }

    #[test]
    fn rotation_never_touches_previous_session() {
        let dir = tempfile::tempdir().unwrap();
        let first = {
            let mut log = SessionLog::create(dir.path(), t0(), 1).unwrap();
            log.write(&LogRecord::new(t0(), Source::Human, vec![0.5]));
            log.path().to_path_buf()
        };
        let before = std::fs::read(&first).unwrap();
        let second = SessionLog::create(dir.path(), t0(), 1).unwrap();
        assert_ne!(second.path(), first);
        assert_eq!(std::fs::read(&first).unwrap(), before);
        let later = SessionLog::create(dir.path(), t0() + chrono::Duration::seconds(5), 1).unwrap();
        assert!(later.path().ends_with("20260301T120005.csv"));
    }

    #[test]
    fn background_writer_flushes_on_close() {
        let dir = tempfile::tempdir().unwrap();
        let log = SessionLog::create(dir.path(), t0(), 1).unwrap();
        let writer = LogWriter::spawn(log, 1024);
        let path = writer.path.clone();
        for i in 0..50 {
            writer.write(LogRecord::new(t0() + chrono::Duration::milliseconds(i), Source::Ai, vec![0.1]));
        }
        writer.close();
        assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 51);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn write_failure_disables_logging_without_panicking() {
        let Ok(full) = OpenOptions::new().write(true).open("/dev/full") else { return };
        let mut log = SessionLog {
            path: PathBuf::from("/dev/full"),
            writer: BufWriter::with_capacity(16, full),
            last_flush: Instant::now(),
            disabled: false,
            written: 0,
        };
        for _ in 0..10 {
            log.write(&LogRecord::new(t0(), Source::Ai, vec![0.5, 0.5, 0.5]));
        }
        log.flush();
        assert!(log.is_disabled());
    }
}
