//! Corpus loading, sentence segmentation and normalization.
//!
//! Sentences are delimited by `.`, `?` and `!`. Each sentence is lowercased,
//! stripped of the 32 ASCII punctuation characters and whitespace-collapsed.
//! Non-ASCII punctuation is left untouched.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SENTENCE_DELIMITERS: [char; 3] = ['.', '?', '!'];

/// One labeled record before segmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub source_id: String,
    pub sentences: Vec<String>,
    /// Multi-hot class membership, entries in {0, 1}.
    pub label: Vec<f64>,
}

impl Document {
    /// Segments and normalizes `text`. Returns `None` if no sentence survives.
    pub fn from_text(source_id: impl Into<String>, text: &str, label: Vec<f64>) -> Option<Self> {
        let sentences = segment(text);
        if sentences.is_empty() {
            return None;
        }
        Some(Self {
            source_id: source_id.into(),
            sentences,
            label,
        })
    }

    /// Class index of the first positive label entry.
    pub fn class(&self) -> usize {
        self.label.iter().position(|&v| v > 0.5).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
    pub num_classes: usize,
    pub total_sentences: usize,
    /// Records dropped because no sentence survived normalization.
    #[serde(default)]
    pub dropped: usize,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>, num_classes: usize) -> Self {
        let total_sentences = documents.iter().map(Document::len).sum();
        Self {
            documents,
            num_classes,
            total_sentences,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Every sentence occurrence in corpus order.
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents
            .iter()
            .flat_map(|d| d.sentences.iter().map(String::as_str))
    }

    /// Distinct sentences in order of first occurrence.
    pub fn unique_sentences(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.sentences().filter(|s| seen.insert(*s)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses from the file extension; anything but `.csv` is read as JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Splits on `.`, `?` and `!`, dropping the delimiters and blank segments.
pub fn split_sentences(text: &str) -> Vec<&str> {
    text.split(SENTENCE_DELIMITERS)
        .filter(|s| !s.trim().is_empty())
        .collect()
}

pub fn normalize_sentence(sentence: &str) -> String {
    let lowered = sentence.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `split_sentences` followed by `normalize_sentence`, dropping empties.
pub fn segment(text: &str) -> Vec<String> {
    split_sentences(text)
        .into_iter()
        .map(normalize_sentence)
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn multi_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

/// Reads raw `(line, record)` pairs without segmenting them.
pub fn read_records(path: &Path, format: DatasetFormat) -> Result<Vec<(usize, RawRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DatasetFormat::Jsonl => read_jsonl(path, file),
        DatasetFormat::Csv => read_csv(path, file),
    }
}

fn read_jsonl(path: &Path, file: File) -> Result<Vec<(usize, RawRecord)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

fn read_csv(path: &Path, file: impl Read) -> Result<Vec<(usize, RawRecord)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let record_err = |line: usize, e: csv::Error| Error::Record {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(|e| record_err(1, e))?.clone();
    let mut row = csv::StringRecord::new();
    let mut out = Vec::new();
    loop {
        let line = reader.position().line() as usize;
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(record_err(line, e)),
        }
        let line = row.position().map_or(line, |p| p.line() as usize);
        let record: RawRecord = row.deserialize(Some(&headers)).map_err(|e| record_err(line, e))?;
        out.push((line, record));
    }
    Ok(out)
}

/// Loads and segments a labeled corpus.
///
/// `num_classes` fixes the multi-hot width; when `None` it is inferred as
/// `max label + 1`. Records with no surviving sentence are dropped and counted.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    num_classes: Option<usize>,
) -> Result<LabeledCorpus> {
    let records = read_records(path, format)?;
    corpus_from_records(&records, num_classes)
}

pub fn corpus_from_records(
    records: &[(usize, RawRecord)],
    num_classes: Option<usize>,
) -> Result<LabeledCorpus> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let num_classes = match num_classes {
        Some(c) => {
            if let Some((line, r)) = records.iter().find(|(_, r)| r.label >= c) {
                return Err(Error::LabelOutOfRange {
                    line: *line,
                    label: r.label,
                    num_classes: c,
                });
            }
            c
        }
        None => records.iter().map(|(_, r)| r.label).max().unwrap_or(0) + 1,
    };

    let mut documents = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for (line, record) in records {
        let label = multi_hot(record.label, num_classes);
        match Document::from_text(format!("line{line}"), &record.text, label) {
            Some(doc) => documents.push(doc),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} record(s) with no sentence left after normalization");
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut corpus = LabeledCorpus::new(documents, num_classes);
    corpus.dropped = dropped;
    Ok(corpus)
}

/// Writes a corpus back as JSONL, one record per document, sentences joined by `. `.
pub fn write_jsonl(path: &Path, corpus: &LabeledCorpus) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for doc in &corpus.documents {
        let record = RawRecord {
            text: format!("{}.", doc.sentences.join(". ")),
            label: doc.class(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
