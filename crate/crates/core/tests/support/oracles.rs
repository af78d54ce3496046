//! Reference implementations written from the metric and layout definitions.
//! Nothing here calls into the library, so agreement is evidence.
#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [-1, 1).
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

pub fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// `rows` random vectors of length `dim`, none all-zero.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| uniform(rng)).collect();
            if v.iter().any(|x| *x != 0.0) {
                break v;
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (norm(a) * norm(b))
}

/// (precision, recall, f1) from the full cosine matrix: precision averages
/// row maxima (candidate tokens), recall averages column maxima.
pub fn bertscore(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> (f64, f64, f64) {
    let m: Vec<Vec<f64>> = candidate
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let p = m
        .iter()
        .map(|row| row.iter().cloned().fold(f64::MIN, f64::max))
        .sum::<f64>()
        / candidate.len() as f64;
    let r = (0..reference.len())
        .map(|j| m.iter().map(|row| row[j]).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Exhaustive scan: every score, sorted by score descending then id ascending.
pub fn top_k(entries: &[(String, Vec<f64>)], query: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = entries.iter().map(|(id, v)| (id.clone(), cosine(v, query))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Window-mode layout rules, checked by offset arithmetic on char indices.
/// `chunks` are `(chunk_id, char_start, char_end, text)`.
pub fn check_window_chunks(
    doc_id: &str,
    text: &str,
    chunks: &[(String, usize, usize, String)],
    budget: usize,
    overlap: usize,
) -> Result<(), String> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if chunks.is_empty() {
        return Err("no chunks".into());
    }
    let mut covered = vec![false; n];
    for (i, (id, s, e, t)) in chunks.iter().enumerate() {
        if *id != format!("{doc_id}#{i}") {
            return Err(format!("chunk {i} has id {id}"));
        }
        if s >= e || *e > n {
            return Err(format!("chunk {i} has bad span {s}..{e} of {n}"));
        }
        if e - s > budget {
            return Err(format!("chunk {i} spans {} > budget {budget}", e - s));
        }
        let slice: String = chars[*s..*e].iter().collect();
        if slice != *t {
            return Err(format!("chunk {i} text differs from source slice"));
        }
        covered[*s..*e].iter_mut().for_each(|c| *c = true);
    }
    if let Some(gap) = covered.iter().position(|c| !c) {
        return Err(format!("char {gap} is not covered"));
    }
    if chunks[0].1 != 0 || chunks.last().unwrap().2 != n {
        return Err("chunks do not start at 0 and end at the text end".into());
    }
    for (i, w) in chunks.windows(2).enumerate() {
        let (prev_start, prev_end) = (w[0].1, w[0].2);
        if w[1].1 + overlap != prev_end {
            return Err(format!(
                "chunks {i} and {} share {} chars, want {overlap}",
                i + 1,
                prev_end.saturating_sub(w[1].1)
            ));
        }
        let full = (prev_start + budget).min(n);
        if prev_end < full {
            // an early cut sits right after a terminator followed by whitespace,
            // within the final fifth of the window
            let ok_break = matches!(chars[prev_end - 1], '.' | '!' | '?') && chars[prev_end].is_whitespace();
            if !ok_break || full - prev_end > budget / 5 {
                return Err(format!("chunk {i} cut early at {prev_end} without a preferred break"));
            }
        }
    }
    Ok(())
}

/// Random text over a small alphabet with sentence breaks and multibyte chars.
pub fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    const ALPHABET: [char; 12] = ['a', 'b', 'c', ' ', ' ', '.', '!', '?', '\n', 'é', 'ج', '\u{1F319}'];
    (0..len).map(|_| ALPHABET[below(rng, ALPHABET.len())]).collect()
}

/// Hash embedding: FNV-1a 64 over the seed's little-endian bytes then the
/// token's UTF-8 bytes, finished with the SplitMix64 mixer. The bucket is the
/// hash modulo `dim`; the sign is negative when the top bit is set. Tokens
/// are the whitespace-separated words of the lowercased text and the bucket
/// sums are scaled to unit length.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in text.to_lowercase().split_whitespace() {
        let mut h: u64 = 14695981039346656037;
        for b in seed.to_le_bytes().into_iter().chain(token.bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
        h ^= h >> 31;
        v[(h % dim as u64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let n = norm(&v);
    v.iter().map(|x| x / n).collect()
}
