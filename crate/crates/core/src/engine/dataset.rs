//! Training data built from session logs, and its packed file format.
//!
//! Packed layout (little-endian):
//!
//! ```text
//! "IMDS" | version u32 | D u32 | sequence count u32
//! per sequence: frame count u64
//! per frame, sequence by sequence: dt f64, values f64 x D
//! per frame, same order: source u8 (0 human, 1 ai)
//! CRC-32 of everything before it, u32
//! ```

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use super::log::{parse_header, LogRecord, Source};
use crate::{ContinuousFrame, Error};

pub const DATASET_MAGIC: &[u8; 4] = b"IMDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<ContinuousFrame>,
    pub sources: Vec<Source>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dimension: usize,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Keep only frames from one source. Time deltas are left as logged.
    pub fn filter_source(&self, source: Source) -> Dataset {
        let sequences = self
            .sequences
            .iter()
            .map(|s| {
                let (frames, sources) = s
                    .frames
                    .iter()
                    .zip(&s.sources)
                    .filter(|(_, src)| **src == source)
                    .map(|(f, src)| (f.clone(), *src))
                    .unzip();
                Sequence { frames, sources }
            })
            .filter(|s: &Sequence| !s.frames.is_empty())
            .collect();
        Dataset { dimension: self.dimension, sequences }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION, self.dimension as u32, self.sequences.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.sequences {
            out.extend_from_slice(&(s.frames.len() as u64).to_le_bytes());
        }
        for s in &self.sequences {
            for f in &s.frames {
                out.extend_from_slice(&f.dt.to_le_bytes());
                for v in &f.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for s in &self.sequences {
            out.extend(s.sources.iter().map(|src| match src {
                Source::Human => 0u8,
                Source::Ai => 1u8,
            }));
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let bad = |m: &str| Error::Io(format!("dataset file: {m}"));
        if bytes.len() < 20 {
            return Err(Error::Checksum("dataset file truncated".into()));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checksum("dataset file checksum mismatch".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().unwrap());
        if u32_at(4) != DATASET_VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let dimension = u32_at(8) as usize;
        let n_seq = u32_at(12) as usize;
        let mut pos = 16;
        let mut lengths = Vec::with_capacity(n_seq);
        for _ in 0..n_seq {
            let b = body.get(pos..pos + 8).ok_or_else(|| bad("length table truncated"))?;
            lengths.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            pos += 8;
        }
        let total: usize = lengths.iter().sum();
        if body.len() != pos + total * 8 * (dimension + 1) + total {
            return Err(bad("size does not match header"));
        }
        let read_f64 = |pos: &mut usize| {
            let v = f64::from_le_bytes(body[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            v
        };
        let mut sequences: Vec<Sequence> = lengths
            .iter()
            .map(|&n| {
                let frames = (0..n)
                    .map(|_| {
                        let dt = read_f64(&mut pos);
                        let values = (0..dimension).map(|_| read_f64(&mut pos)).collect();
                        ContinuousFrame { values, dt }
                    })
                    .collect();
                Sequence { frames, sources: Vec::with_capacity(n) }
            })
            .collect();
        for s in &mut sequences {
            for _ in 0..s.frames.len() {
                s.sources.push(if body[pos] == 0 { Source::Human } else { Source::Ai });
                pos += 1;
            }
        }
        Ok(Dataset { dimension, sequences })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Outcome of reading a set of logs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub files: usize,
    pub records: usize,
    pub skipped_lines: usize,
    pub warnings: Vec<String>,
}

/// Read every record of one session file, skipping unparseable lines.
pub fn read_session(path: &Path, dimension: usize, stats: &mut BuildStats) -> Result<Vec<LogRecord>, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(d) = parse_header(&line) {
                if d != dimension {
                    return Err(Error::DimensionMismatch { expected: dimension, found: d });
                }
            }
            continue;
        }
        match LogRecord::parse_line(&line) {
            Ok(rec) if rec.dims.len() == dimension => records.push(rec),
            Ok(rec) => {
                return Err(Error::DimensionMismatch { expected: dimension, found: rec.dims.len() });
            }
            Err(e) => {
                let msg = format!("{}:{}: skipped unparseable line ({e})", path.display(), n + 1);
                log::warn!("{msg}");
                stats.warnings.push(msg);
                stats.skipped_lines += 1;
            }
        }
    }
    Ok(records)
}

/// Turn consecutive records into frames. The first frame of a session has
/// `dt = 0`; later frames take the timestamp difference, capped at
/// `dt_max` (and floored at zero for out-of-order clocks).
pub fn records_to_sequence(records: &[LogRecord], dt_max: f64) -> Sequence {
    let mut frames = Vec::with_capacity(records.len());
    let mut sources = Vec::with_capacity(records.len());
    let mut prev: Option<&LogRecord> = None;
    for rec in records {
        let dt = match prev {
            None => 0.0,
            Some(p) => ((rec.at - p.at).num_milliseconds() as f64 / 1000.0).clamp(0.0, dt_max),
        };
        let values = rec.dims.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        frames.push(ContinuousFrame { values, dt });
        sources.push(rec.source);
        prev = Some(rec);
    }
    Sequence { frames, sources }
}

/// Build a dataset from log files, one sequence per non-empty file.
pub fn build_dataset(paths: &[PathBuf], dimension: usize, dt_max: f64) -> Result<(Dataset, BuildStats), Error> {
    let mut stats = BuildStats::default();
    let mut sequences = Vec::new();
    for path in paths {
        let records = read_session(path, dimension, &mut stats)?;
        stats.files += 1;
        stats.records += records.len();
        if !records.is_empty() {
            sequences.push(records_to_sequence(&records, dt_max));
        }
    }
    Ok((Dataset { dimension, sequences }, stats))
}

/// Session files (`*.csv`) in a directory, oldest name first.
pub fn session_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(format!("reading {}: {e}", dir.display())))?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    out.sort();
    Ok(out)
}
