use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::metrics::{bertscore, embedding_distance, IdfTable};
use super::report::{BenchManifest, EvalReport, EvalRow, EvalScores, SkippedRow};
use super::tokens::TokenEmbedder;
use super::{EvalError, Result};
use crate::corpus::QaPair;
use crate::parallel::DEFAULT_PARALLELISM;
use crate::pipeline::Pipeline;
use crate::prompting::PromptMethod;
use crate::sampling::sample_indices;
use crate::store::VectorIndex;

/// Token embeddings for BERTScore, plus optional idf weights.
pub struct Scorer {
    pub token_embedder: Box<dyn TokenEmbedder>,
    pub idf: Option<IdfTable>,
}

impl Scorer {
    pub fn new(token_embedder: Box<dyn TokenEmbedder>) -> Self {
        Self {
            token_embedder,
            idf: None,
        }
    }

    pub fn with_idf(mut self, idf: IdfTable) -> Self {
        self.idf = Some(idf);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub sample_n: usize,
    pub seed: u64,
    pub parallelism: usize,
    /// Recorded in the manifest; callers strip secrets first.
    pub config: Option<serde_json::Value>,
}

impl BenchOptions {
    pub fn new(sample_n: usize, seed: u64) -> Self {
        Self {
            sample_n,
            seed,
            parallelism: DEFAULT_PARALLELISM,
            config: None,
        }
    }
}

/// `n` distinct pairs drawn with a seeded PRNG, in draw order.
pub fn sample_questions(qa: &[QaPair], n: usize, seed: u64) -> Result<Vec<&QaPair>> {
    if qa.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if n == 0 {
        return Err(EvalError::ZeroSample);
    }
    if n > qa.len() {
        return Err(EvalError::SampleTooLarge {
            requested: n,
            available: qa.len(),
        });
    }
    Ok(sample_indices(qa.len(), n, seed).into_iter().map(|i| &qa[i]).collect())
}

/// Hex SHA-256 over every pair's id, question and answer, in order.
pub fn dataset_checksum(qa: &[QaPair]) -> String {
    let mut h = Sha256::new();
    for p in qa {
        for field in [&p.qa_id, &p.question, &p.reference_answer] {
            h.update(field.as_bytes());
            h.update([0u8]);
        }
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

enum Outcome {
    Scored(EvalRow),
    Skipped(SkippedRow),
}

fn score_one(pair: &QaPair, pipeline: &Pipeline, index: &VectorIndex, scorer: &Scorer) -> Outcome {
    let skip = |reason: String| {
        Outcome::Skipped(SkippedRow {
            qa_id: pair.qa_id.clone(),
            reason,
        })
    };
    let answer = match pipeline.answer_query(&pair.question, index) {
        Ok(a) => a.text,
        Err(e) => return skip(format!("pipeline_error: {e}")),
    };
    if answer.trim().is_empty() {
        return skip("empty_answer".into());
    }
    let scored = (|| -> Result<EvalScores> {
        let cand = scorer.token_embedder.token_embed(&answer)?;
        let reference = scorer.token_embedder.token_embed(&pair.reference_answer)?;
        let weights = scorer.idf.as_ref().map(|t| t.covering(&[&cand, &reference]));
        let bs = bertscore(&cand, &reference, weights.as_ref())?;
        Ok(EvalScores {
            precision: bs.precision,
            recall: bs.recall,
            f1: bs.f1,
            embedding_distance: embedding_distance(&answer, &pair.reference_answer, pipeline.embedder())?,
        })
    })();
    match scored {
        Ok(scores) => Outcome::Scored(EvalRow {
            qa_id: pair.qa_id.clone(),
            question: pair.question.clone(),
            answer,
            scores,
        }),
        Err(e) => skip(format!("scoring_error: {e}")),
    }
}

/// Answers a seeded sample of `qa` and scores each answer against its
/// reference. Questions whose generation fails or comes back empty are
/// listed as skipped and left out of the aggregate.
pub fn run_benchmark(
    qa: &[QaPair],
    pipeline: &Pipeline,
    index: &VectorIndex,
    scorer: &Scorer,
    options: &BenchOptions,
) -> Result<EvalReport> {
    let sample = sample_questions(qa, options.sample_n, options.seed)?;
    if let PromptMethod::FewShot { exemplars } = pipeline.method() {
        let sampled: HashSet<&str> = sample.iter().map(|p| p.qa_id.as_str()).collect();
        if let Some(leak) = exemplars.iter().find(|e| sampled.contains(e.qa_id.as_str())) {
            return Err(EvalError::ExemplarLeak(leak.qa_id.clone()));
        }
    }

    let outcomes = crate::parallel::map_bounded(&sample, options.parallelism.max(1), |pair| {
        score_one(pair, pipeline, index, scorer)
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Scored(r) => rows.push(r),
            Outcome::Skipped(s) => {
                tracing::warn!(qa_id = %s.qa_id, reason = %s.reason, "question skipped");
                skipped.push(s);
            }
        }
    }
    rows.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    skipped.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let aggregate = EvalScores::mean(rows.iter().map(|r| &r.scores)).ok_or(EvalError::AllSkipped(skipped.len()))?;

    Ok(EvalReport {
        model_id: pipeline.model_id().to_string(),
        method: pipeline.method().label().to_string(),
        manifest: BenchManifest {
            seed: options.seed,
            sample_n: options.sample_n,
            dataset_size: qa.len(),
            dataset_sha256: dataset_checksum(qa),
            config: options.config.clone(),
        },
        aggregate,
        rows,
        skipped,
    })
}
