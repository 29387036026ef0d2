//! On-disk artifact formats. Every file is JSONL with a typed header line so
//! stages can check what they were handed; headers carry a content hash of
//! the inputs the artifact was derived from, letting downstream stages detect
//! stale combinations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collector::{RunDataset, RunMeta, SubsetRecord};
use crate::corpus::ExampleId;
use crate::error::{Error, Result};
use crate::influence::Sign;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
}

/// A persisted id list plus how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: String,
    pub sign: Sign,
    pub k: usize,
    pub ids: Vec<ExampleId>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| with_path(path, e))?))
}

/// Io errors from the raw fs calls carry no file name; attach it.
fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

/// Combined hash over several input files, order-sensitive.
pub fn hash_inputs(paths: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(hash_file(path)?.as_bytes());
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Write via a temp file + rename so readers never observe partial output and
/// reruns replace files atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn check_header(header: &Header, kind: &str) -> Result<()> {
    if header.kind != kind {
        return Err(Error::Parse(format!(
            "expected a '{kind}' file, found '{}'",
            header.kind
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format version {}",
            header.version
        )));
    }
    Ok(())
}

// ---- two-line reports (header + payload) ----

pub fn save_report<T: Serialize>(
    path: &Path,
    kind: &str,
    input_hash: Option<String>,
    payload: &T,
) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        input_hash,
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Parse(e.to_string()))?;
    out.push('\n');
    out.push_str(&serde_json::to_string(payload).map_err(|e| Error::Parse(e.to_string()))?);
    out.push('\n');
    write_atomic(path, out.as_bytes())
}

pub fn parse_report_str<T: DeserializeOwned>(text: &str, kind: &str) -> Result<(Header, T)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("empty report file".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::Parse(format!("report header: {e}")))?;
    check_header(&header, kind)?;
    let body_line = lines
        .next()
        .ok_or_else(|| Error::Parse("report file has no payload line".into()))?;
    if lines.next().is_some() {
        return Err(Error::Parse("trailing lines after report payload".into()));
    }
    let payload =
        serde_json::from_str(body_line).map_err(|e| Error::Parse(format!("report payload: {e}")))?;
    Ok((header, payload))
}

pub fn load_report<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Header, T)> {
    parse_report_str(
        &std::fs::read_to_string(path).map_err(|e| with_path(path, e))?,
        kind,
    )
}

// ---- run files (header + meta, then one record per line, appendable) ----

#[derive(Debug, Serialize, Deserialize)]
struct RunHeader {
    #[serde(flatten)]
    header: Header,
    meta: RunMeta,
}

pub struct RunWriter {
    out: BufWriter<File>,
}

impl RunWriter {
    pub fn create(path: &Path, meta: &RunMeta, input_hash: Option<String>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = RunHeader {
            header: Header {
                kind: "run".into(),
                version: FORMAT_VERSION,
                input_hash,
            },
            meta: meta.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(RunWriter { out })
    }

    /// Reopen an existing run file for appending after validating its header.
    /// The input hash is carried by the file, not the caller, so it is
    /// excluded from the comparison.
    pub fn append_to(path: &Path, meta: &RunMeta) -> Result<(Self, usize)> {
        let existing = load_run(path)?;
        let mut theirs = existing.meta.clone();
        theirs.input_hash = None;
        let mut ours = meta.clone();
        ours.input_hash = None;
        if theirs != ours {
            return Err(Error::Config(
                "run file was collected under a different configuration".into(),
            ));
        }
        let out = BufWriter::new(File::options().append(true).open(path)?);
        Ok((RunWriter { out }, existing.records.len()))
    }

    pub fn append(&mut self, record: &SubsetRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::Parse(e.to_string()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn parse_run_str(text: &str) -> Result<RunDataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Parse("empty run file".into()))?;
    let run_header: RunHeader =
        serde_json::from_str(header_line).map_err(|e| Error::Parse(format!("run header: {e}")))?;
    check_header(&run_header.header, "run")?;
    let mut meta = run_header.meta;
    if meta.input_hash.is_none() {
        meta.input_hash = run_header.header.input_hash.clone();
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let record: SubsetRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            index: i,
            message: format!("invalid subset record: {e}"),
        })?;
        records.push(record);
    }
    let run = RunDataset { meta, records };
    run.validate()?;
    Ok(run)
}

pub fn load_run(path: &Path) -> Result<RunDataset> {
    // stream rather than read_to_string: run files are the largest artifacts
    let reader = BufReader::new(File::open(path).map_err(|e| with_path(path, e))?);
    let mut text = String::new();
    for line in reader.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_run_str(&text)
}

pub fn save_run(path: &Path, run: &RunDataset, input_hash: Option<String>) -> Result<()> {
    let mut meta = run.meta.clone();
    meta.input_hash = None; // carried by the header instead
    let header = RunHeader {
        header: Header {
            kind: "run".into(),
            version: FORMAT_VERSION,
            input_hash,
        },
        meta,
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Parse(e.to_string()))?;
    out.push('\n');
    for record in &run.records {
        out.push_str(&serde_json::to_string(record).map_err(|e| Error::Parse(e.to_string()))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
