//! Corpus and QA dataset loading, chunking, and fine-tune file export.
//!
//! Input files are UTF-8 delimiter-separated tables with a header row. One
//! data row becomes one [`SourceDocument`] (a hadith record, a tafsir
//! passage) or one [`QaPair`]. Rows with blank text are skipped and counted
//! in a [`LoadSummary`] rather than aborting a large ingest.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{Message, Role};

/// Default window size in characters for free-text documents.
pub const DEFAULT_CHUNK_BUDGET: usize = 1000;
/// Default overlap in characters between adjacent windows.
pub const DEFAULT_CHUNK_OVERLAP: usize = 200;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("column '{column}' not found in header of {path} (columns: {available})")]
    MissingColumn {
        column: String,
        path: PathBuf,
        available: String,
    },
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    #[error("{0} contains no usable rows")]
    Empty(PathBuf),
    #[error("delimiter must be a single ASCII character, got {0:?}")]
    BadDelimiter(char),
    #[error("invalid chunking parameters: {0}")]
    InvalidChunking(String),
    #[error("nothing to export: pair list is empty")]
    NothingToExport,
    #[error("question template references unknown field '{{{field}}}' for document {doc_id}")]
    TemplateField { field: String, doc_id: String },
    #[error("malformed fine-tune line {line}: {message}")]
    FinetuneFormat { line: usize, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// An indexable slice of a [`SourceDocument`].
///
/// Offsets count Unicode scalar values, not bytes: `text` is exactly the
/// characters `[char_start, char_end)` of the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub qa_id: String,
    pub question: String,
    pub reference_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

/// Which table columns feed a [`SourceDocument`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    /// Synthesized as `row-<n>` (zero-based data row) when absent.
    #[serde(default)]
    pub id_column: Option<String>,
    pub text_column: String,
    #[serde(default)]
    pub metadata_columns: Vec<String>,
}

impl ColumnMapping {
    pub fn new(text_column: impl Into<String>) -> Self {
        Self {
            id_column: None,
            text_column: text_column.into(),
            metadata_columns: Vec::new(),
        }
    }

    pub fn with_id(mut self, column: impl Into<String>) -> Self {
        self.id_column = Some(column.into());
        self
    }

    pub fn with_metadata<I, S>(mut self, columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.metadata_columns = columns.into_iter().map(Into::into).collect();
        self
    }
}

/// Column names for a QA dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaColumns {
    /// Synthesized as `qa-00001`, `qa-00002`, ... (1-based row) when absent.
    #[serde(default)]
    pub id_column: Option<String>,
    pub question_column: String,
    pub answer_column: String,
    #[serde(default)]
    pub url_column: Option<String>,
}

impl Default for QaColumns {
    fn default() -> Self {
        Self {
            id_column: None,
            question_column: "question".into(),
            answer_column: "answer".into(),
            url_column: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub rows: usize,
    pub loaded: usize,
    pub skipped_empty: usize,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub summary: LoadSummary,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path, delimiter: char) -> Result<Self> {
        if !delimiter.is_ascii() {
            return Err(CorpusError::BadDelimiter(delimiter));
        }
        if !path.exists() {
            return Err(CorpusError::MissingFile(path.to_path_buf()));
        }
        let csv_err = |source| CorpusError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .has_headers(true)
            .from_path(path)
            .map_err(csv_err)?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(CorpusError::Empty(path.to_path_buf()));
        }
        let rows = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
                available: self.headers.join(", "),
            })
    }
}

fn cell(row: &csv::StringRecord, idx: usize) -> &str {
    row.get(idx).unwrap_or("")
}

/// Loads one [`SourceDocument`] per data row with non-blank text.
pub fn load_corpus(
    path: &Path,
    mapping: &ColumnMapping,
    delimiter: char,
) -> Result<Loaded<SourceDocument>> {
    let table = Table::read(path, delimiter)?;
    let text_idx = table.column(&mapping.text_column, path)?;
    let id_idx = mapping
        .id_column
        .as_deref()
        .map(|c| table.column(c, path))
        .transpose()?;
    let meta_idx = mapping
        .metadata_columns
        .iter()
        .map(|c| table.column(c, path).map(|i| (c.clone(), i)))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = LoadSummary {
        rows: table.rows.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(table.rows.len());
    for (row_no, row) in table.rows.iter().enumerate() {
        let text = cell(row, text_idx);
        if text.trim().is_empty() {
            summary.skipped_empty += 1;
            tracing::warn!(row = row_no, path = %path.display(), "skipping row with empty text");
            continue;
        }
        let doc_id = match id_idx {
            Some(i) => cell(row, i).trim().to_string(),
            None => format!("row-{row_no}"),
        };
        if !seen.insert(doc_id.clone()) {
            return Err(CorpusError::DuplicateId(doc_id));
        }
        let metadata = meta_idx
            .iter()
            .map(|(name, i)| (name.clone(), cell(row, *i).to_string()))
            .collect();
        records.push(SourceDocument {
            doc_id,
            text: text.to_string(),
            metadata,
        });
    }
    summary.loaded = records.len();
    Ok(Loaded { records, summary })
}

/// Loads question / reference-answer pairs. Rows missing either side are
/// skipped and counted.
pub fn load_qa_dataset(path: &Path, columns: &QaColumns, delimiter: char) -> Result<Loaded<QaPair>> {
    let table = Table::read(path, delimiter)?;
    let q_idx = table.column(&columns.question_column, path)?;
    let a_idx = table.column(&columns.answer_column, path)?;
    let id_idx = columns
        .id_column
        .as_deref()
        .map(|c| table.column(c, path))
        .transpose()?;
    let url_idx = columns
        .url_column
        .as_deref()
        .map(|c| table.column(c, path))
        .transpose()?;
    if table.rows.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }

    let mut summary = LoadSummary {
        rows: table.rows.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row_no, row) in table.rows.iter().enumerate() {
        let question = cell(row, q_idx);
        let answer = cell(row, a_idx);
        if question.trim().is_empty() || answer.trim().is_empty() {
            summary.skipped_empty += 1;
            tracing::warn!(row = row_no, path = %path.display(), "skipping QA row with empty question or answer");
            continue;
        }
        let qa_id = match id_idx {
            Some(i) => cell(row, i).trim().to_string(),
            None => format!("qa-{:05}", row_no + 1),
        };
        if !seen.insert(qa_id.clone()) {
            return Err(CorpusError::DuplicateId(qa_id));
        }
        let source_url = url_idx
            .map(|i| cell(row, i).trim().to_string())
            .filter(|u| !u.is_empty());
        records.push(QaPair {
            qa_id,
            question: question.to_string(),
            reference_answer: answer.to_string(),
            source_url,
        });
    }
    summary.loaded = records.len();
    if records.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }
    Ok(Loaded { records, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMode {
    /// The whole record is one chunk.
    Record,
    /// Fixed-size character windows with overlap.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub mode: ChunkMode,
    pub budget: usize,
    pub overlap: usize,
}

impl ChunkingConfig {
    /// One chunk per record; the default for hadith-style corpora.
    pub fn record() -> Self {
        Self {
            mode: ChunkMode::Record,
            budget: DEFAULT_CHUNK_BUDGET,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }

    pub fn window(budget: usize, overlap: usize) -> Self {
        Self {
            mode: ChunkMode::Window,
            budget,
            overlap,
        }
    }

    fn check(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(CorpusError::InvalidChunking("budget must be at least 1".into()));
        }
        if self.overlap >= self.budget {
            return Err(CorpusError::InvalidChunking(format!(
                "overlap ({}) must be smaller than budget ({})",
                self.overlap, self.budget
            )));
        }
        Ok(())
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self::window(DEFAULT_CHUNK_BUDGET, DEFAULT_CHUNK_OVERLAP)
    }
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits a document into chunks.
///
/// In window mode every chunk holds at most `budget` characters and each
/// chunk starts exactly `overlap` characters before the previous one ended.
/// A cut moves earlier only to land just after a sentence terminator that is
/// followed by whitespace, and only when that break lies in the last 20% of
/// the window.
pub fn chunk_document(doc: &SourceDocument, config: &ChunkingConfig) -> Result<Vec<Chunk>> {
    config.check()?;
    // byte offset of every char, plus the end sentinel
    let mut bounds: Vec<usize> = doc.text.char_indices().map(|(b, _)| b).collect();
    let n = bounds.len();
    bounds.push(doc.text.len());
    let chars: Vec<char> = doc.text.chars().collect();

    let make = |index: usize, start: usize, end: usize| Chunk {
        chunk_id: format!("{}#{}", doc.doc_id, index),
        doc_id: doc.doc_id.clone(),
        text: doc.text[bounds[start]..bounds[end]].to_string(),
        char_start: start,
        char_end: end,
        metadata: doc.metadata.clone(),
    };

    if n == 0 {
        return Ok(Vec::new());
    }
    if config.mode == ChunkMode::Record || n <= config.budget {
        return Ok(vec![make(0, 0, n)]);
    }

    let tail = config.budget / 5;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let mut end = (start + config.budget).min(n);
        if end == n {
            chunks.push(make(chunks.len(), start, end));
            break;
        }
        // the next window must still advance past `start`
        let earliest = (end - tail).max(start + config.overlap + 1);
        if let Some(cut) = (earliest..end)
            .rev()
            .find(|&p| p > 0 && is_sentence_end(chars[p - 1]) && chars[p].is_whitespace())
        {
            end = cut;
        }
        chunks.push(make(chunks.len(), start, end));
        start = end - config.overlap;
    }
    Ok(chunks)
}

/// Chunks every document in order.
pub fn chunk_corpus(docs: &[SourceDocument], config: &ChunkingConfig) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, config)?);
    }
    Ok(out)
}

/// Turns corpus records into training pairs: the answer is the record text,
/// the question comes from `question_template` with `{doc_id}` and
/// `{<metadata column>}` placeholders filled in.
pub fn pairs_from_documents(docs: &[SourceDocument], question_template: &str) -> Result<Vec<QaPair>> {
    docs.iter()
        .map(|doc| {
            let question = fill_template(question_template, doc)?;
            Ok(QaPair {
                qa_id: doc.doc_id.clone(),
                question,
                reference_answer: doc.text.clone(),
                source_url: None,
            })
        })
        .collect()
}

fn fill_template(template: &str, doc: &SourceDocument) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let field = &after[..close];
        let value = if field == "doc_id" {
            doc.doc_id.as_str()
        } else {
            doc.metadata
                .get(field)
                .map(String::as_str)
                .ok_or_else(|| CorpusError::TemplateField {
                    field: field.to_string(),
                    doc_id: doc.doc_id.clone(),
                })?
        };
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// One line of a chat fine-tuning file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub messages: Vec<Message>,
}

impl FinetuneRecord {
    pub fn from_pair(pair: &QaPair, system_prompt: &str) -> Self {
        Self {
            messages: vec![
                Message::new(Role::System, system_prompt),
                Message::new(Role::User, &pair.question),
                Message::new(Role::Assistant, &pair.reference_answer),
            ],
        }
    }
}

/// Writes one three-message conversation per pair as JSON lines and returns
/// the number of lines written.
pub fn export_finetune(pairs: &[QaPair], system_prompt: &str, out: &Path) -> Result<usize> {
    if pairs.is_empty() {
        return Err(CorpusError::NothingToExport);
    }
    let io_err = |source| CorpusError::Io {
        path: out.to_path_buf(),
        source,
    };
    let mut writer = BufWriter::new(File::create(out).map_err(io_err)?);
    for pair in pairs {
        let line = serde_json::to_string(&FinetuneRecord::from_pair(pair, system_prompt))
            .expect("fine-tune record serializes");
        writeln!(writer, "{line}").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;
    Ok(pairs.len())
}

/// Reads a fine-tune file back into its conversations.
pub fn read_finetune(path: &Path) -> Result<Vec<FinetuneRecord>> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FinetuneRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::FinetuneFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}
