//! Corpus-level retrieval metrics in both directions.
//!
//! Rankings sort by descending similarity and break ties by ascending gallery
//! index, so results do not depend on sort stability or platform.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PairedCorpus;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ot_matcher::{Matcher, SinkhornConfig};
use crate::shape_encoder::PartSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrievalDirection {
    #[serde(rename = "S2T")]
    S2T,
    #[serde(rename = "T2S")]
    T2S,
}

impl RetrievalDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::S2T => "S2T",
            Self::T2S => "T2S",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "S2T" => Some(Self::S2T),
            "T2S" => Some(Self::T2S),
            _ => None,
        }
    }
}

/// How a (shape, text) pair is scored at test time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoringConfig {
    pub matcher: Matcher,
    pub sinkhorn: SinkhornConfig,
    pub min_part_fraction: f64,
}

/// Embeddings of every shape (predicted parts) and every text of a corpus.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub parts: Vec<Matrix>,
    pub words: Vec<Matrix>,
}

pub fn encode_corpus(model: &Model, corpus: &PairedCorpus, min_fraction: f64) -> Result<EncodedCorpus> {
    let parts = corpus
        .shapes
        .par_iter()
        .map(|s| model.encode_shape(s, PartSource::Predicted, min_fraction).map(|p| p.0))
        .collect::<Result<Vec<_>>>()?;
    let words = corpus
        .texts
        .par_iter()
        .map(|t| model.encode_text(&t.tokens))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedCorpus { parts, words })
}

/// `shapes x texts` similarity matrix.
pub fn score_encoded(enc: &EncodedCorpus, matcher: Matcher, sinkhorn: &SinkhornConfig) -> Result<Matrix> {
    let (n, m) = (enc.parts.len(), enc.words.len());
    let data = (0..n * m)
        .into_par_iter()
        .map(|k| matcher.similarity(&enc.parts[k / m], &enc.words[k % m], sinkhorn))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_vec(n, m, data)
}

/// Query x gallery similarities: shapes x texts for S2T, its transpose for T2S.
pub fn score_corpus(
    model: &Model,
    corpus: &PairedCorpus,
    direction: RetrievalDirection,
    cfg: &ScoringConfig,
) -> Result<Matrix> {
    let enc = encode_corpus(model, corpus, cfg.min_part_fraction)?;
    let s2t = score_encoded(&enc, cfg.matcher, &cfg.sinkhorn)?;
    Ok(match direction {
        RetrievalDirection::S2T => s2t,
        RetrievalDirection::T2S => s2t.transpose(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub query: usize,
    /// Gallery indices, best first.
    pub gallery: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn rank_row(query: usize, scores: &[f64]) -> RankedList {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    RankedList {
        query,
        scores: order.iter().map(|&g| scores[g]).collect(),
        gallery: order,
    }
}

/// One ranked list per row of `scores`.
pub fn rank_all(scores: &Matrix) -> Vec<RankedList> {
    (0..scores.rows()).map(|q| rank_row(q, scores.row(q))).collect()
}

/// Relevant gallery indices for every query.
pub fn relevance(corpus: &PairedCorpus, direction: RetrievalDirection) -> Vec<Vec<usize>> {
    match direction {
        RetrievalDirection::S2T => corpus.shape_to_texts(),
        RetrievalDirection::T2S => corpus.text_to_shape().into_iter().map(|s| vec![s]).collect(),
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

/// Percentage of queries with at least one relevant item in the top `k`.
pub fn rr_at_k(ranked: &[RankedList], relevant: &[Vec<usize>], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let hits = ranked
        .iter()
        .filter(|r| r.gallery.iter().take(k).any(|g| relevant[r.query].contains(g)))
        .count();
    Ok(100.0 * hits as f64 / ranked.len() as f64)
}

/// Mean binary-gain NDCG with the `log2(i + 1)` discount.
pub fn ndcg_at_k(ranked: &[RankedList], relevant: &[Vec<usize>], k: usize) -> Result<f64> {
    check_k(k)?;
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let total: f64 = ranked
        .iter()
        .map(|r| {
            let rel = &relevant[r.query];
            let dcg: f64 = r
                .gallery
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, g)| rel.contains(g))
                .map(|(i, _)| discount(i))
                .sum();
            let idcg: f64 = (0..k.min(rel.len())).map(discount).sum();
            if idcg > 0.0 {
                dcg / idcg
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / ranked.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub direction: RetrievalDirection,
    pub k: usize,
    pub rr: f64,
    pub ndcg: f64,
}

/// Ranked gallery for one query, by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub direction: RetrievalDirection,
    pub query: String,
    pub relevant: Vec<String>,
    pub ranked: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub queries: Vec<QueryResult>,
}

const REPORT_HEADER: &str = "direction\tk\tRR\tNDCG";

impl EvalReport {
    pub fn get(&self, direction: RetrievalDirection, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.direction == direction && r.k == k)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}\t{}", r.direction.as_str(), r.k, r.rr, r.ndcg).unwrap();
        }
        out
    }

    /// Parses the output of [`EvalReport::to_tsv`]; per-query results are not part of it.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Config(format!("report line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad(1, "missing header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(i + 2, "expected 4 fields"));
            }
            rows.push(MetricRow {
                direction: RetrievalDirection::parse(f[0]).ok_or_else(|| bad(i + 2, "unknown direction"))?,
                k: f[1].parse().map_err(|_| bad(i + 2, "bad k"))?,
                rr: f[2].parse().map_err(|_| bad(i + 2, "bad RR"))?,
                ndcg: f[3].parse().map_err(|_| bad(i + 2, "bad NDCG"))?,
            });
        }
        Ok(Self {
            rows,
            queries: Vec::new(),
        })
    }

    pub fn queries_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.queries).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Metrics for both directions from a precomputed `shapes x texts` matrix.
/// Per-query lists keep the top `max(ks)` entries.
pub fn evaluate_scores(s2t: &Matrix, corpus: &PairedCorpus, ks: &[usize]) -> Result<EvalReport> {
    if s2t.shape() != (corpus.shapes.len(), corpus.texts.len()) {
        return Err(Error::Dimension {
            op: "evaluate_scores",
            left: s2t.shape(),
            right: (corpus.shapes.len(), corpus.texts.len()),
        });
    }
    if ks.is_empty() {
        return Err(Error::Config("no cutoffs given".into()));
    }
    let keep = ks.iter().copied().max().unwrap_or(1);
    let mut report = EvalReport::default();
    for direction in [RetrievalDirection::S2T, RetrievalDirection::T2S] {
        let (scores, query_ids, gallery_ids): (Matrix, Vec<&str>, Vec<&str>) = match direction {
            RetrievalDirection::S2T => (
                s2t.clone(),
                corpus.shapes.iter().map(|s| s.shape_id.as_str()).collect(),
                corpus.texts.iter().map(|t| t.text_id.as_str()).collect(),
            ),
            RetrievalDirection::T2S => (
                s2t.transpose(),
                corpus.texts.iter().map(|t| t.text_id.as_str()).collect(),
                corpus.shapes.iter().map(|s| s.shape_id.as_str()).collect(),
            ),
        };
        let ranked = rank_all(&scores);
        let rel = relevance(corpus, direction);
        for &k in ks {
            report.rows.push(MetricRow {
                direction,
                k,
                rr: rr_at_k(&ranked, &rel, k)?,
                ndcg: ndcg_at_k(&ranked, &rel, k)?,
            });
        }
        for r in &ranked {
            let top = r.gallery.len().min(keep);
            report.queries.push(QueryResult {
                direction,
                query: query_ids[r.query].to_string(),
                relevant: rel[r.query].iter().map(|&g| gallery_ids[g].to_string()).collect(),
                ranked: r.gallery[..top].iter().map(|&g| gallery_ids[g].to_string()).collect(),
                scores: r.scores[..top].to_vec(),
            });
        }
    }
    Ok(report)
}

/// Scores the whole corpus with `model` and reports both directions at every `k`.
pub fn evaluate(model: &Model, corpus: &PairedCorpus, ks: &[usize], cfg: &ScoringConfig) -> Result<EvalReport> {
    let s2t = score_corpus(model, corpus, RetrievalDirection::S2T, cfg)?;
    evaluate_scores(&s2t, corpus, ks)
}

/// Fraction of labelled points whose predicted part class is correct.
pub fn segmentation_accuracy(model: &Model, corpus: &PairedCorpus) -> Result<f64> {
    let counts = corpus
        .shapes
        .par_iter()
        .filter_map(|s| s.labels.as_ref().map(|l| (s, l)))
        .map(|(s, truth)| {
            let (_, predicted) = model.encode_shape(s, PartSource::Predicted, 0.0)?;
            Ok((predicted.iter().zip(truth).filter(|(p, t)| p == t).count(), truth.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    if total == 0 {
        return Err(Error::Config("corpus has no labelled points".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranked(lists: &[&[usize]]) -> Vec<RankedList> {
        lists
            .iter()
            .enumerate()
            .map(|(q, g)| RankedList {
                query: q,
                gallery: g.to_vec(),
                scores: (0..g.len()).map(|i| -(i as f64)).collect(),
            })
            .collect()
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        let r = rank_row(0, &[-0.5, -0.1, -0.5, -0.1]);
        assert_eq!(r.gallery, vec![1, 3, 0, 2]);
        assert_eq!(r.scores, vec![-0.1, -0.1, -0.5, -0.5]);
    }

    #[test]
    fn rr_hand_cases() {
        let rel = vec![vec![0], vec![0]];
        let r = ranked(&[&[0, 1, 2, 3, 4, 5, 6, 7], &[1, 2, 3, 4, 5, 6, 0, 7]]);
        assert_eq!(rr_at_k(&r, &rel, 5).unwrap(), 50.0);
        assert_eq!(rr_at_k(&r, &rel, 7).unwrap(), 100.0);
        let third = ranked(&[&[1, 2, 0]]);
        assert_eq!(rr_at_k(&third, &[vec![0]], 1).unwrap(), 0.0);
        assert_eq!(rr_at_k(&third, &[vec![0]], 5).unwrap(), 100.0);
        assert!(rr_at_k(&third, &[vec![0]], 0).is_err());
    }

    #[test]
    fn ndcg_hand_cases() {
        let third = ranked(&[&[1, 2, 0, 3, 4, 5]]);
        assert!((ndcg_at_k(&third, &[vec![0]], 5).unwrap() - 0.5).abs() < 1e-12);
        let sixth = ranked(&[&[1, 2, 3, 4, 5, 0]]);
        assert_eq!(ndcg_at_k(&sixth, &[vec![0]], 5).unwrap(), 0.0);
        let perfect = ranked(&[&[3, 1, 0, 2]]);
        assert!((ndcg_at_k(&perfect, &[vec![1, 3]], 5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut lists = Vec::new();
            let mut rel = Vec::new();
            for _ in 0..6 {
                let mut g: Vec<usize> = (0..8).collect();
                g.shuffle(&mut rng);
                lists.push(g);
                let n = rng.random_range(1..4);
                rel.push((0..n).map(|_| rng.random_range(0..8)).collect());
            }
            let r: Vec<RankedList> = lists
                .into_iter()
                .enumerate()
                .map(|(q, gallery)| RankedList {
                    query: q,
                    scores: vec![0.0; gallery.len()],
                    gallery,
                })
                .collect();
            let mut prev = (0.0, 0.0);
            for k in 1..=8 {
                let rr = rr_at_k(&r, &rel, k).unwrap();
                let nd = ndcg_at_k(&r, &rel, k).unwrap();
                assert!((0.0..=100.0).contains(&rr) && (0.0..=1.0 + 1e-12).contains(&nd));
                assert!(rr >= prev.0);
                prev = (rr, nd);
            }
        }
    }

    #[test]
    fn report_round_trips() {
        let report = EvalReport {
            rows: vec![
                MetricRow {
                    direction: RetrievalDirection::S2T,
                    k: 1,
                    rr: 12.5,
                    ndcg: 0.1 + 0.2,
                },
                MetricRow {
                    direction: RetrievalDirection::T2S,
                    k: 10,
                    rr: 100.0 / 3.0,
                    ndcg: 1.0,
                },
            ],
            queries: Vec::new(),
        };
        assert_eq!(EvalReport::from_tsv(&report.to_tsv()).unwrap(), report);
        assert!(EvalReport::from_tsv("nope\n").is_err());
    }
}
