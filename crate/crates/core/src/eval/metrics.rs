use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::embedding::{cosine_from_parts, dot, Embedder, EmbeddingVector};

/// Tokens with one embedding each.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    tokens: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    norms2: Vec<f64>,
}

impl TokenEmbeddingSequence {
    pub fn new(tokens: Vec<String>, vectors: Vec<EmbeddingVector>) -> Result<Self> {
        if tokens.len() != vectors.len() {
            return Err(EvalError::LengthMismatch {
                tokens: tokens.len(),
                vectors: vectors.len(),
            });
        }
        if tokens.is_empty() {
            return Err(EvalError::EmptySequence);
        }
        let dim = vectors[0].dim();
        let mut norms2 = Vec::with_capacity(vectors.len());
        for (t, v) in tokens.iter().zip(&vectors) {
            if v.dim() != dim {
                return Err(EvalError::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
            let n2 = v.norm_squared();
            if n2 == 0.0 {
                return Err(EvalError::ZeroNorm(t.clone()));
            }
            norms2.push(n2);
        }
        Ok(Self { tokens, vectors, norms2 })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    fn sim(&self, i: usize, other: &Self, j: usize) -> f64 {
        cosine_from_parts(
            dot(self.vectors[i].values(), other.vectors[j].values()),
            self.norms2[i],
            other.norms2[j],
        )
    }

    fn weights(&self, idf: Option<&HashMap<String, f64>>) -> Result<Vec<f64>> {
        let Some(idf) = idf else {
            return Ok(vec![1.0; self.len()]);
        };
        let w = self
            .tokens
            .iter()
            .map(|t| idf.get(t).copied().ok_or_else(|| EvalError::MissingIdf(t.clone())))
            .collect::<Result<Vec<f64>>>()?;
        // all-zero idf (every token in every reference) falls back to uniform
        if w.iter().sum::<f64>() == 0.0 {
            return Ok(vec![1.0; self.len()]);
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `2PR / (P + R)`, or 0 when `P + R <= 0`.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    if sum > 0.0 {
        2.0 * precision * recall / sum
    } else {
        0.0
    }
}

/// Weighted mean over `from` tokens of their best match in `to`.
fn greedy(from: &TokenEmbeddingSequence, to: &TokenEmbeddingSequence, weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let best = (0..to.len())
            .map(|j| from.sim(i, to, j))
            .fold(f64::NEG_INFINITY, f64::max);
        total += w * best;
        weight_sum += w;
    }
    total / weight_sum
}

/// BERTScore precision, recall and F1 by greedy cosine matching.
///
/// With `idf` supplied each token is weighted by its idf, normalized over
/// its own sequence; every token must have a weight.
pub fn bertscore(
    candidate: &TokenEmbeddingSequence,
    reference: &TokenEmbeddingSequence,
    idf: Option<&HashMap<String, f64>>,
) -> Result<BertScore> {
    if candidate.dim() != reference.dim() {
        return Err(EvalError::DimensionMismatch {
            expected: reference.dim(),
            found: candidate.dim(),
        });
    }
    let precision = greedy(candidate, reference, &candidate.weights(idf)?);
    let recall = greedy(reference, candidate, &reference.weights(idf)?);
    Ok(BertScore {
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
    })
}

/// Inverse document frequency over reference token lists:
/// `ln((M + 1) / (df + 1))` for `M` references.
pub fn idf_weights(references: &[Vec<String>]) -> HashMap<String, f64> {
    let m = references.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in references {
        let unique: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    df.into_iter()
        .map(|(t, n)| (t.to_string(), ((m + 1.0) / (n as f64 + 1.0)).ln()))
        .collect()
}

/// Idf weights plus the weight of a token no reference contains
/// (`df = 0`, so `ln(M + 1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    pub weights: HashMap<String, f64>,
    pub unseen: f64,
}

impl IdfTable {
    pub fn from_references(references: &[Vec<String>]) -> Self {
        Self {
            weights: idf_weights(references),
            unseen: (references.len() as f64 + 1.0).ln(),
        }
    }

    /// Weights for every token in `sequences`, unseen ones included.
    pub fn covering(&self, sequences: &[&TokenEmbeddingSequence]) -> HashMap<String, f64> {
        let mut out = HashMap::new();
        for t in sequences.iter().flat_map(|s| s.tokens()) {
            let w = self.weights.get(t).copied().unwrap_or(self.unseen);
            out.insert(t.clone(), w);
        }
        out
    }
}

/// `1 - cos(embed(prediction), embed(reference))`, clamped to `[0, 2]`.
pub fn embedding_distance(prediction: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64> {
    if prediction.trim().is_empty() || reference.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    let vectors = embedder.embed(&[prediction.to_string(), reference.to_string()])?;
    let cos = crate::embedding::cosine_similarity(&vectors[0], &vectors[1])?;
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;

    fn seq(vectors: &[&[f64]]) -> TokenEmbeddingSequence {
        TokenEmbeddingSequence::new(
            (0..vectors.len()).map(|i| format!("t{i}")).collect(),
            vectors
                .iter()
                .map(|v| EmbeddingVector::new(v.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_is_one() {
        let c = seq(&[&[0.3, -1.0, 2.0], &[1.0, 1.0, 1.0]]);
        let s = bertscore(&c, &c, None).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_enumerated_greedy_match() {
        // reference {e1, e2}, candidate {e1}: candidate side matches fully, reference half
        let reference = seq(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let candidate = seq(&[&[1.0, 0.0]]);
        let s = bertscore(&candidate, &reference, None).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn idf_weighting() {
        let reference = TokenEmbeddingSequence::new(
            vec!["a".into(), "b".into()],
            vec![
                EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
                EmbeddingVector::new(vec![0.0, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        let candidate = TokenEmbeddingSequence::new(
            vec!["a".into()],
            vec![EmbeddingVector::new(vec![1.0, 0.0]).unwrap()],
        )
        .unwrap();
        let idf = HashMap::from([("a".to_string(), 3.0), ("b".to_string(), 1.0)]);
        let s = bertscore(&candidate, &reference, Some(&idf)).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.75);
        let partial = HashMap::from([("a".to_string(), 1.0)]);
        assert!(matches!(
            bertscore(&candidate, &reference, Some(&partial)),
            Err(EvalError::MissingIdf(t)) if t == "b"
        ));
    }

    #[test]
    fn idf_from_references() {
        let refs = vec![
            vec!["a".to_string(), "b".to_string()],
            vec!["a".to_string(), "a".to_string()],
        ];
        let idf = idf_weights(&refs);
        assert_eq!(idf["a"], (3.0f64 / 3.0).ln());
        assert_eq!(idf["b"], (3.0f64 / 2.0).ln());
    }

    #[test]
    fn unseen_tokens_get_max_weight() {
        let table = IdfTable::from_references(&[vec!["a".to_string()], vec!["a".to_string(), "b".to_string()]]);
        let s = TokenEmbeddingSequence::new(
            vec!["a".into(), "zzz".into()],
            vec![
                EmbeddingVector::new(vec![1.0]).unwrap(),
                EmbeddingVector::new(vec![1.0]).unwrap(),
            ],
        )
        .unwrap();
        let w = table.covering(&[&s]);
        assert_eq!(w["a"], 1.0f64.ln());
        assert_eq!(w["zzz"], 3.0f64.ln());
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(harmonic_f1(0.0, 0.0), 0.0);
        assert_eq!(harmonic_f1(-0.2, -0.3), 0.0);
        assert_eq!(harmonic_f1(1.0, 1.0), 1.0);
    }

    #[test]
    fn sequence_validation() {
        assert!(matches!(
            TokenEmbeddingSequence::new(vec![], vec![]),
            Err(EvalError::EmptySequence)
        ));
        assert!(matches!(
            TokenEmbeddingSequence::new(vec!["a".into()], vec![]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            TokenEmbeddingSequence::new(vec!["a".into()], vec![EmbeddingVector::new(vec![0.0]).unwrap()]),
            Err(EvalError::ZeroNorm(_))
        ));
        let a = seq(&[&[1.0, 0.0]]);
        let b = seq(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(bertscore(&a, &b, None), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn distance_identical_is_zero() {
        let e = HashEmbedder::new(32, 1).unwrap();
        let text = "Sabr is patience in hardship";
        assert_eq!(embedding_distance(text, text, &e).unwrap(), 0.0);
        assert!(matches!(embedding_distance("", text, &e), Err(EvalError::EmptyText)));
    }
}
