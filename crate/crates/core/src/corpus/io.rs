//! Line-delimited JSON corpus files.
//!
//! The first line is a header object; each following line is one record
//! `{"surface": [...], "flat_tree": [...], "split": "TRAIN"}`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::TokenMode;
use super::{CorpusRecord, SplitTag};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "synsem-corpus";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub kind: TokenMode,
    pub split: SplitTag,
    pub seed: u64,
    pub n: usize,
}

#[derive(Serialize, Deserialize)]
struct StoredRecord {
    surface: Vec<String>,
    flat_tree: Vec<String>,
    split: SplitTag,
}

pub fn write_corpus(path: &Path, header: &CorpusHeader, records: &[CorpusRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        let stored = StoredRecord { surface: r.surface.clone(), flat_tree: r.flat_tree.clone(), split: r.split };
        serde_json::to_writer(&mut w, &stored)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<CorpusRecord>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or_else(|| Error::Invalid(format!("{} is empty", path.display())))??;
    let header: CorpusHeader = serde_json::from_str(&header_line)?;
    if header.format != CORPUS_FORMAT {
        return Err(Error::Invalid(format!("{} is not a corpus file", path.display())));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: StoredRecord = serde_json::from_str(&line)?;
        records.push(CorpusRecord::from_parts(&s.surface, &s.flat_tree, s.split, header.kind)?);
    }
    Ok((header, records))
}

pub fn split_file_name(tag: SplitTag) -> String {
    format!("{}.jsonl", tag.as_str().to_lowercase())
}
