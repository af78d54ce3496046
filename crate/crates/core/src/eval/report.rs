use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub embedding_distance: f64,
}

impl EvalScores {
    /// Per-metric arithmetic mean; `None` for an empty slice.
    pub fn mean<'a>(scores: impl IntoIterator<Item = &'a EvalScores>) -> Option<EvalScores> {
        let mut n = 0usize;
        let mut sum = [0.0f64; 4];
        for s in scores {
            n += 1;
            sum[0] += s.precision;
            sum[1] += s.recall;
            sum[2] += s.f1;
            sum[3] += s.embedding_distance;
        }
        (n > 0).then(|| {
            let n = n as f64;
            EvalScores {
                precision: sum[0] / n,
                recall: sum[1] / n,
                f1: sum[2] / n,
                embedding_distance: sum[3] / n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub qa_id: String,
    pub question: String,
    pub answer: String,
    #[serde(flatten)]
    pub scores: EvalScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub qa_id: String,
    /// `empty_answer`, `pipeline_error: ...` or `scoring_error: ...`.
    pub reason: String,
}

/// What is needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub seed: u64,
    pub sample_n: usize,
    pub dataset_size: usize,
    pub dataset_sha256: String,
    /// Run configuration with secrets removed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Rows are ordered by `qa_id`, so every rendering is deterministic for a
/// fixed seed and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub method: String,
    pub manifest: BenchManifest,
    pub aggregate: EvalScores,
    pub rows: Vec<EvalRow>,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format '{other}' (expected table, csv or json)")),
        }
    }
}

const HEADERS: [&str; 6] = ["Model", "Prompting Method", "Precision", "Recall", "F1-Score", "Embedding Distance"];

impl EvalReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    fn manifest_lines(&self) -> Vec<String> {
        let m = &self.manifest;
        let mut lines = vec![
            format!("seed: {}", m.seed),
            format!("sample: {} of {}", m.sample_n, m.dataset_size),
            format!("dataset sha256: {}", m.dataset_sha256),
        ];
        if let Some(config) = &m.config {
            lines.push(format!("config: {config}"));
        }
        lines
    }

    /// Aggregate row in a fixed-width table, under `#` manifest lines.
    pub fn to_table(&self) -> String {
        let a = &self.aggregate;
        let cells = [
            self.model_id.clone(),
            self.method.clone(),
            format!("{:.3}", a.precision),
            format!("{:.3}", a.recall),
            format!("{:.3}", a.f1),
            format!("{:.4}", a.embedding_distance),
        ];
        let widths: Vec<usize> = HEADERS
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.chars().count().max(c.chars().count()))
            .collect();
        let line = |values: &[String]| {
            values
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| if i < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        for l in self.manifest_lines() {
            writeln!(out, "# {l}").unwrap();
        }
        let headers: Vec<String> = HEADERS.iter().map(|h| h.to_string()).collect();
        writeln!(out, "{}", line(&headers)).unwrap();
        writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")).unwrap();
        writeln!(out, "{}", line(&cells)).unwrap();
        writeln!(out, "scored: {}  skipped: {}", self.rows.len(), self.skipped.len()).unwrap();
        for s in &self.skipped {
            writeln!(out, "skipped {}: {}", s.qa_id, s.reason).unwrap();
        }
        out
    }

    /// One line per scored question, then the aggregate, then skips.
    /// Manifest lines lead as `#` comments.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for l in self.manifest_lines() {
            writeln!(out, "# {l}").unwrap();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "row_type",
            "qa_id",
            "model",
            "method",
            "precision",
            "recall",
            "f1",
            "embedding_distance",
            "skip_reason",
        ])
        .unwrap();
        let scored = |w: &mut csv::Writer<Vec<u8>>, kind: &str, id: &str, s: &EvalScores| {
            w.write_record([
                kind,
                id,
                &self.model_id,
                &self.method,
                &s.precision.to_string(),
                &s.recall.to_string(),
                &s.f1.to_string(),
                &s.embedding_distance.to_string(),
                "",
            ])
            .unwrap();
        };
        for row in &self.rows {
            scored(&mut w, "question", &row.qa_id, &row.scores);
        }
        scored(&mut w, "aggregate", "", &self.aggregate);
        for s in &self.skipped {
            w.write_record(["skipped", &s.qa_id, &self.model_id, &self.method, "", "", "", "", &s.reason])
                .unwrap();
        }
        out.push_str(&String::from_utf8(w.into_inner().unwrap()).expect("csv output is utf-8"));
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
