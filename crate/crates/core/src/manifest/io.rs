//! Line-delimited manifest format.
//!
//! ```text
//! {"format":"blindeval-manifest","version":1,"task":"task1","split":"private","seed":7,"roots":{...}}
//! {"record":"source","source_id":"...","kind":"real",...}
//! {"record":"sample","sample_id":"...","source_id":"...",...}
//! ```
//!
//! The first line is the header. Every following line is one JSON object
//! tagged by `record`. Sources precede samples when written; readers accept
//! any order.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AudioRoots, Manifest, ManifestError, SampleRecord, SourceDescriptor, Split, Task};

pub const FORMAT_NAME: &str = "blindeval-manifest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: Task,
    split: Split,
    seed: u64,
    #[serde(default)]
    roots: AudioRoots,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Source(SourceDescriptor),
    Sample(SampleRecord),
}

pub fn write_manifest<W: Write>(m: &Manifest, mut out: W) -> Result<(), ManifestError> {
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        task: m.task,
        split: m.split,
        seed: m.seed,
        roots: m.roots.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for s in &m.sources {
        writeln!(out, "{}", serde_json::to_string(&Line::Source(s.clone()))?)?;
    }
    for s in &m.samples {
        writeln!(out, "{}", sample_line(s))?;
    }
    Ok(())
}

/// Serialized line of a single sample record; byte equality of these lines is
/// how cross-task identity of real samples is checked.
pub fn sample_line(s: &SampleRecord) -> String {
    serde_json::to_string(&Line::Sample(s.clone())).expect("sample records always serialize")
}

pub fn to_string(m: &Manifest) -> String {
    let mut buf = Vec::new();
    write_manifest(m, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Manifest, ManifestError> {
    let mut lines = input.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(ManifestError::Format { line: 1, reason: "missing header".into() }),
            Some((_, l)) if l.as_ref().map(|s| s.trim().is_empty()).unwrap_or(false) => continue,
            Some((i, l)) => {
                break serde_json::from_str(&l?)
                    .map_err(|e| ManifestError::Format { line: i + 1, reason: e.to_string() })?
            }
        }
    };
    if header.format != FORMAT_NAME {
        return Err(ManifestError::Format { line: 1, reason: format!("unexpected format {:?}", header.format) });
    }
    if header.version != FORMAT_VERSION {
        return Err(ManifestError::Format { line: 1, reason: format!("unsupported version {}", header.version) });
    }
    let mut m = Manifest {
        task: header.task,
        split: header.split,
        seed: header.seed,
        roots: header.roots,
        sources: Vec::new(),
        samples: Vec::new(),
    };
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&l).map_err(|e| ManifestError::Format { line: i + 1, reason: e.to_string() })? {
            Line::Source(s) => m.sources.push(s),
            Line::Sample(s) => m.samples.push(s),
        }
    }
    Ok(m)
}

pub fn load(path: &Path) -> Result<Manifest, ManifestError> {
    let f = std::fs::File::open(path)?;
    read_manifest(std::io::BufReader::new(f))
}

pub fn save(m: &Manifest, path: &Path) -> Result<(), ManifestError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_manifest(m, &mut w)?;
    w.flush()?;
    Ok(())
}
