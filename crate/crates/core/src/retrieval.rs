//! Ranked retrieval and the three evaluation tasks: image annotation,
//! image search and sentence similarity.
//!
//! Candidates are ordered by descending score; exact score ties go to the
//! lower candidate index. A query's rank is the 1-based position of its first
//! ground-truth candidate.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::Manifest;
use crate::matrix::Matrix;

/// Ranking for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query: usize,
    /// Candidate indices, best first.
    pub candidates: Vec<usize>,
    /// 1-based.
    pub rank_of_first_truth: usize,
}

/// Recall at 1, 5 and 10 (as fractions) plus median and mean rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub median_rank: f64,
    pub mean_rank: f64,
    pub queries: usize,
}

impl TaskMetrics {
    /// Aggregates 1-based ranks. The median of an even count is the lower one.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::validation("no queries to evaluate"));
        }
        if ranks.contains(&0) {
            return Err(Error::validation("ranks are 1-based"));
        }
        let n = ranks.len();
        let within = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Ok(TaskMetrics {
            recall_at_1: within(1),
            recall_at_5: within(5),
            recall_at_10: within(10),
            median_rank: sorted[(n - 1) / 2] as f64,
            mean_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n as f64,
            queries: n,
        })
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.recall_at_1),
            5 => Some(self.recall_at_5),
            10 => Some(self.recall_at_10),
            _ => None,
        }
    }

    /// `task<TAB>metric<TAB>value` lines.
    pub fn to_tsv(&self, task: &str) -> String {
        let mut out = String::new();
        for (name, value) in [
            ("r@1", self.recall_at_1),
            ("r@5", self.recall_at_5),
            ("r@10", self.recall_at_10),
            ("median_rank", self.median_rank),
            ("mean_rank", self.mean_rank),
        ] {
            let _ = writeln!(out, "{task}\t{name}\t{value}");
        }
        out
    }
}

/// Orders candidate indices by descending score, ties to the lower index.
pub fn order_scores(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("similarity score is NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps index order among equal scores.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    Ok(order)
}

fn first_truth(order: &[usize], truths: &[usize]) -> Option<usize> {
    order.iter().position(|c| truths.contains(c)).map(|p| p + 1)
}

/// Ranks every candidate row for every query row.
pub fn rank<S>(queries: &Matrix, candidates: &Matrix, scorer: S) -> Result<Vec<Vec<usize>>>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    if queries.cols() != candidates.cols() {
        return Err(Error::shape(format!(
            "queries have {} columns, candidates {}",
            queries.cols(),
            candidates.cols()
        )));
    }
    (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            let scores: Vec<f64> = candidates.iter_rows().map(|c| scorer(q, c)).collect();
            order_scores(&scores)
        })
        .collect()
}

/// Ranks with explicit ground truth; every query needs at least one truth.
pub fn evaluate_with_truths<S>(
    queries: &Matrix,
    candidates: &Matrix,
    truths: &[Vec<usize>],
    scorer: S,
) -> Result<(Vec<RankingResult>, TaskMetrics)>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    if truths.len() != queries.rows() {
        return Err(Error::shape(format!(
            "{} truth lists for {} queries",
            truths.len(),
            queries.rows()
        )));
    }
    let orders = rank(queries, candidates, scorer)?;
    collect_results(orders, truths)
}

/// Ranks from a precomputed `queries x candidates` score matrix.
pub fn evaluate_scores(scores: &Matrix, truths: &[Vec<usize>]) -> Result<(Vec<RankingResult>, TaskMetrics)> {
    if truths.len() != scores.rows() {
        return Err(Error::shape(format!(
            "{} truth lists for {} queries",
            truths.len(),
            scores.rows()
        )));
    }
    let orders = scores.iter_rows().map(order_scores).collect::<Result<Vec<_>>>()?;
    collect_results(orders, truths)
}

fn collect_results(
    orders: Vec<Vec<usize>>,
    truths: &[Vec<usize>],
) -> Result<(Vec<RankingResult>, TaskMetrics)> {
    let results = orders
        .into_iter()
        .zip(truths)
        .enumerate()
        .map(|(query, (candidates, truth))| {
            let rank = first_truth(&candidates, truth).ok_or_else(|| {
                Error::validation(format!("query {query} has no ground truth among the candidates"))
            })?;
            Ok(RankingResult {
                query,
                candidates,
                rank_of_first_truth: rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks: Vec<usize> = results.iter().map(|r| r.rank_of_first_truth).collect();
    let metrics = TaskMetrics::from_ranks(&ranks)?;
    Ok((results, metrics))
}

fn check_labels(m: &Matrix, ids: &[String], what: &str) -> Result<()> {
    if m.rows() != ids.len() {
        return Err(Error::shape(format!(
            "{what}: {} rows but {} ids",
            m.rows(),
            ids.len()
        )));
    }
    Ok(())
}

/// Image to sentences: an image's rank is the best rank among its sentences.
pub fn evaluate_annotation<S>(
    images: &Matrix,
    image_ids: &[String],
    sentences: &Matrix,
    sentence_ids: &[String],
    manifest: &Manifest,
    scorer: S,
) -> Result<TaskMetrics>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_labels(images, image_ids, "images")?;
    check_labels(sentences, sentence_ids, "sentences")?;
    let image_of = manifest.image_of();
    let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, sid) in sentence_ids.iter().enumerate() {
        let image = image_of
            .get(sid.as_str())
            .ok_or_else(|| Error::validation(format!("sentence {sid} is not in the manifest")))?;
        by_image.entry(image).or_default().push(j);
    }
    let truths = image_ids
        .iter()
        .map(|id| {
            by_image
                .get(id.as_str())
                .cloned()
                .ok_or_else(|| Error::validation(format!("image {id} has no candidate sentences")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_with_truths(images, sentences, &truths, scorer)?.1)
}

/// Sentence to images: one ground-truth image per query.
pub fn evaluate_search<S>(
    sentences: &Matrix,
    sentence_ids: &[String],
    images: &Matrix,
    image_ids: &[String],
    manifest: &Manifest,
    scorer: S,
) -> Result<TaskMetrics>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_labels(images, image_ids, "images")?;
    check_labels(sentences, sentence_ids, "sentences")?;
    let image_of = manifest.image_of();
    let position: HashMap<&str, usize> = image_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let truths = sentence_ids
        .iter()
        .map(|sid| {
            let image = image_of
                .get(sid.as_str())
                .ok_or_else(|| Error::validation(format!("sentence {sid} is not in the manifest")))?;
            position
                .get(image)
                .map(|&i| vec![i])
                .ok_or_else(|| Error::validation(format!("image {image} of sentence {sid} is not a candidate")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_with_truths(sentences, images, &truths, scorer)?.1)
}

/// Sentence to sibling sentences, the query itself excluded. Returns the
/// per-query rankings (candidate indices refer to the full sentence list) and
/// the mean rank of the first sibling.
pub fn sentence_similarity_rankings<S>(
    sentences: &Matrix,
    sentence_ids: &[String],
    manifest: &Manifest,
    scorer: S,
) -> Result<(Vec<RankingResult>, f64)>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_labels(sentences, sentence_ids, "sentences")?;
    let image_of = manifest.image_of();
    let images = sentence_ids
        .iter()
        .map(|sid| {
            image_of
                .get(sid.as_str())
                .copied()
                .ok_or_else(|| Error::validation(format!("sentence {sid} is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = (0..sentences.rows())
        .into_par_iter()
        .map(|i| {
            let q = sentences.row(i);
            let others: Vec<usize> = (0..sentences.rows()).filter(|&j| j != i).collect();
            let scores: Vec<f64> = others.iter().map(|&j| scorer(q, sentences.row(j))).collect();
            let candidates: Vec<usize> = order_scores(&scores)?.into_iter().map(|p| others[p]).collect();
            let rank = candidates
                .iter()
                .position(|&j| images[j] == images[i])
                .map(|p| p + 1)
                .ok_or_else(|| Error::validation(format!("sentence {} has no siblings", sentence_ids[i])))?;
            Ok(RankingResult {
                query: i,
                candidates,
                rank_of_first_truth: rank,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if results.is_empty() {
        return Err(Error::validation("no queries to evaluate"));
    }
    let mean = results.iter().map(|r| r.rank_of_first_truth as f64).sum::<f64>() / results.len() as f64;
    Ok((results, mean))
}

/// Mean rank of the first sibling sentence.
pub fn evaluate_sentence_similarity<S>(
    sentences: &Matrix,
    sentence_ids: &[String],
    manifest: &Manifest,
    scorer: S,
) -> Result<f64>
where
    S: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    Ok(sentence_similarity_rankings(sentences, sentence_ids, manifest, scorer)?.1)
}

/// Results for one method across the three tasks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSummary {
    pub search: Option<TaskMetrics>,
    pub annotation: Option<TaskMetrics>,
    pub sentence_mean_rank: Option<f64>,
}

impl EvalSummary {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.search {
            out.push_str(&m.to_tsv("search"));
        }
        if let Some(m) = &self.annotation {
            out.push_str(&m.to_tsv("annotation"));
        }
        if let Some(v) = self.sentence_mean_rank {
            let _ = writeln!(out, "sentence\tmean_rank\t{v}");
        }
        out
    }
}

/// Plain-text table: image search and image annotation blocks (recall in
/// percent, then median and mean rank) followed by the sentence mean rank.
pub fn render_table(rows: &[(String, EvalSummary)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:label_width$} | {:^39} | {:^39} | {:^8}",
        "", "Image search", "Image annotation", "Sentence"
    );
    let cols = format!("{:>7} {:>7} {:>7} {:>7} {:>7}", "r@1", "r@5", "r@10", "median", "mean");
    let _ = writeln!(out, "{:label_width$} | {cols} | {cols} | {:>8}", "method", "mean");
    let _ = writeln!(out, "{}", "-".repeat(label_width + 3 + 39 + 3 + 39 + 3 + 8));
    let block = |m: &Option<TaskMetrics>| match m {
        Some(m) => format!(
            "{:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
            100.0 * m.recall_at_1,
            100.0 * m.recall_at_5,
            100.0 * m.recall_at_10,
            m.median_rank,
            m.mean_rank
        ),
        None => format!("{:>7} {:>7} {:>7} {:>7} {:>7}", "NA", "NA", "NA", "NA", "NA"),
    };
    for (label, s) in rows {
        let sentence = s
            .sentence_mean_rank
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(
            out,
            "{label:label_width$} | {} | {} | {sentence:>8}",
            block(&s.search),
            block(&s.annotation)
        );
    }
    out
}
