//! Line-delimited JSON sample files. The first line is a header object
//! carrying the format name, version, window configuration and sample
//! count; each following line is one sample.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Sample, WindowConfig};
use crate::error::{Error, Result};

pub const SAMPLE_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "trackpred-samples";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub config: WindowConfig,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    count: usize,
    config: WindowConfig,
}

pub fn write_samples(path: &Path, set: &SampleSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: SAMPLE_FORMAT_VERSION,
        count: set.samples.len(),
        config: set.config.clone(),
    };
    let io = |e: std::io::Error| Error::io(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for s in &set.samples {
        serde_json::to_writer(&mut w, s).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header.format != FORMAT_NAME {
        return Err(Error::parse(path, 1, format!("not a sample file (format `{}`)", header.format)));
    }
    if header.version != SAMPLE_FORMAT_VERSION {
        return Err(Error::parse(path, 1, format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;
    let mut samples = Vec::with_capacity(header.count);
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 2, e.to_string()))?;
        s.validate(&header.config).map_err(|e| Error::parse(path, idx + 2, e.to_string()))?;
        samples.push(s);
    }
    if samples.len() != header.count {
        return Err(Error::parse(
            path,
            samples.len() + 1,
            format!("header announces {} samples, found {}", header.count, samples.len()),
        ));
    }
    Ok(SampleSet {
        config: header.config,
        samples,
    })
}
