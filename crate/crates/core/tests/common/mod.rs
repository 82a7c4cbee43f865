#![allow(dead_code)]

use std::path::PathBuf;

use muserag::corpus::Passage;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn passage(id: &str, text: &str) -> Passage {
    Passage {
        passage_id: id.into(),
        doc_id: id.split('#').next().unwrap_or(id).into(),
        title: format!("title of {id}"),
        section_heading: "Section".into(),
        text: text.into(),
        token_count: text.split_whitespace().count(),
        token_offset: 0,
    }
}

/// Random passages over a small vocabulary, ids unsorted.
pub fn random_corpus(rng: &mut impl Rng, max_passages: usize, vocab: usize) -> Vec<Passage> {
    let n = rng.random_range(1..=max_passages);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids.into_iter()
        .map(|i| {
            let len = rng.random_range(1..=40);
            let words: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect();
            passage(&format!("d{:03}#s0000#c{:04}", i % 7, i), &words.join(" "))
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng, vocab: usize) -> Vec<String> {
    let len = rng.random_range(1..=6);
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab + 5))).collect()
}

/// Textbook BM25 evaluated passage by passage from raw token lists.
/// `docs` must be in passage-id order.
pub fn brute_force_bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut scored = Vec::new();
    for (ord, doc) in docs.iter().enumerate() {
        let dl = doc.len() as f64;
        let mut total = 0.0f64;
        for q in query {
            let f = doc.iter().filter(|t| *t == q).count() as f64;
            if f == 0.0 {
                continue;
            }
            let nq = docs.iter().filter(|d| d.contains(q)).count() as f64;
            let idf = (1.0 + (n - nq + 0.5) / (nq + 0.5)).ln();
            total += idf * (f * (k1 + 1.0)) / (f + k1 * (1.0 - b + b * (dl / avgdl)));
        }
        if total > 0.0 {
            scored.push((ord, total));
        }
    }
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scored
}

/// Compares a ranking against an oracle ranking. Positions may differ only
/// where the oracle scores are equal to within float noise.
pub fn same_ranking(got: &[(usize, f64)], want: &[(usize, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} vs {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if (g.1 - w.1).abs() > tol {
            return Err(format!("rank {i}: score {} vs {}", g.1, w.1));
        }
        if g.0 != w.0 {
            let oracle_g = want.iter().find(|x| x.0 == g.0).map(|x| x.1);
            match oracle_g {
                Some(s) if (s - w.1).abs() <= 1e-12 => {}
                _ => return Err(format!("rank {i}: ord {} vs {}", g.0, w.0)),
            }
        }
    }
    Ok(())
}

/// Naive cosine scan with index tie-break.
pub fn brute_force_cosine(vectors: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut dot = 0.0f64;
            let mut nv = 0.0f64;
            let mut nq = 0.0f64;
            for j in 0..v.len() {
                dot += v[j] as f64 * query[j] as f64;
                nv += v[j] as f64 * v[j] as f64;
                nq += query[j] as f64 * query[j] as f64;
            }
            (i, (dot / (nv.sqrt() * nq.sqrt())).clamp(-1.0, 1.0))
        })
        .collect();
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    scored.truncate(k);
    scored
}

pub fn temp() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}
