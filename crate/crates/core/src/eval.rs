//! Relation ranking metrics and confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Split, Triple};
use crate::model::{stream_rng, Batch, Model};
use crate::path_encoder::{PairQuery, PathCounts, PathStats};
use crate::tape::Tape;
use crate::walk::PathFinder;

/// RNG streams for evaluation batches start here.
pub const EVAL_STREAM: u64 = 1 << 48;

/// Number of top predictions kept per triple.
pub const TOP_K: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RankResult {
    pub edge: usize,
    pub triple: Triple,
    pub rank: usize,
    /// Highest-scoring relation ids, best first.
    pub top: Vec<usize>,
}

/// `1 + |{r' ≠ true : score(r') ≥ score(true)}|`.
pub fn rank_relation(logits: &[f64], true_relation: usize) -> usize {
    let s = logits[true_relation];
    1 + logits
        .iter()
        .enumerate()
        .filter(|&(r, &x)| r != true_relation && x >= s)
        .count()
}

/// Relation ids by descending score; ties go to the smaller id.
pub fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..logits.len()).collect();
    ids.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub mr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub count: usize,
}

impl Metrics {
    /// Aggregates over a rank histogram, so the result does not depend on
    /// the order of the ranks.
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for r in ranks {
            assert!(r >= 1, "ranks start at 1");
            *hist.entry(r).or_insert(0) += 1;
        }
        let n: usize = hist.values().sum();
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let mut m = Self {
            count: n,
            ..Self::default()
        };
        for (&rank, &c) in &hist {
            let share = c as f64 / nf;
            m.mrr += share / rank as f64;
            m.mr += share * rank as f64;
            if rank <= 1 {
                m.hit1 += share;
            }
            if rank <= 3 {
                m.hit3 += share;
            }
        }
        m
    }

    pub fn from_results(results: &[RankResult]) -> Self {
        Self::from_ranks(results.iter().map(|r| r.rank))
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub results: Vec<RankResult>,
    pub metrics: Metrics,
    pub path_stats: PathStats,
    pub seconds: f64,
}

/// Ranks every triple of `split`. Each batch of `batch_size` triples is
/// scored with its own edges removed from messages and paths.
pub fn evaluate(
    model: &Model,
    graph: &KnowledgeGraph,
    split: Split,
    seed: u64,
    batch_size: usize,
) -> Result<Evaluation> {
    let finder = model.path_finder(graph)?;
    evaluate_edges(
        model,
        graph,
        finder.as_ref(),
        graph.split(split),
        seed,
        batch_size,
    )
}

pub fn evaluate_edges(
    model: &Model,
    graph: &KnowledgeGraph,
    finder: Option<&PathFinder>,
    edges: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<Evaluation> {
    evaluate_with(
        model,
        graph,
        ChunkPaths::Live(finder),
        edges,
        seed,
        batch_size,
    )
}

/// Like [`evaluate_edges`] with path counts computed beforehand, one entry
/// per edge. Path statistics of the result are left empty.
pub fn evaluate_cached(
    model: &Model,
    graph: &KnowledgeGraph,
    paths: &[PathCounts],
    edges: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<Evaluation> {
    if model.uses_paths() && paths.len() != edges.len() {
        return Err(Error::Config(format!(
            "{} cached path rows for {} edges",
            paths.len(),
            edges.len()
        )));
    }
    evaluate_with(
        model,
        graph,
        ChunkPaths::Cached(paths),
        edges,
        seed,
        batch_size,
    )
}

#[derive(Clone, Copy)]
enum ChunkPaths<'a> {
    Live(Option<&'a PathFinder>),
    Cached(&'a [PathCounts]),
}

fn evaluate_with(
    model: &Model,
    graph: &KnowledgeGraph,
    paths: ChunkPaths<'_>,
    edges: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<Evaluation> {
    if edges.is_empty() {
        return Err(Error::EmptySplit);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let start = Instant::now();
    let chunks: Vec<(usize, &[usize])> = edges.chunks(batch_size).enumerate().collect();
    let scored = chunks
        .par_iter()
        .map(|&(b, chunk)| {
            let paths = match paths {
                ChunkPaths::Cached(all) if model.uses_paths() => {
                    let start = b * batch_size;
                    ChunkPaths::Cached(&all[start..start + chunk.len()])
                }
                other => other,
            };
            score_chunk(model, graph, paths, chunk, seed, b as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results = Vec::with_capacity(edges.len());
    let mut path_stats = PathStats::default();
    for (rs, stats) in scored {
        results.extend(rs);
        path_stats.merge(stats);
    }
    Ok(Evaluation {
        metrics: Metrics::from_results(&results),
        results,
        path_stats,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn score_chunk(
    model: &Model,
    graph: &KnowledgeGraph,
    paths: ChunkPaths<'_>,
    chunk: &[usize],
    seed: u64,
    index: u64,
) -> Result<(Vec<RankResult>, PathStats)> {
    let triples: Vec<Triple> = chunk.iter().map(|&e| graph.edge(e)).collect();
    let queries: Vec<PairQuery> = triples
        .iter()
        .zip(chunk)
        .map(|(t, &e)| PairQuery {
            head: t.head,
            tail: t.tail,
            exclude: vec![e],
        })
        .collect();
    let (path_rows, stats) = match paths {
        ChunkPaths::Live(finder) => model.path_rows(finder, &queries),
        ChunkPaths::Cached(counts) => (
            model
                .uses_paths()
                .then(|| Arc::new(model.config.path_weighting.rows(counts))),
            PathStats::default(),
        ),
    };
    let mut exclude = chunk.to_vec();
    exclude.sort_unstable();
    exclude.dedup();
    let batch = Batch {
        pairs: triples.iter().map(|t| (t.head, t.tail)).collect(),
        exclude,
        path_rows,
    };
    let mut rng = stream_rng(seed, EVAL_STREAM + index);
    let mut tape = Tape::new(&model.params);
    let logits = model.forward(&mut tape, graph, &batch, &mut rng)?;
    let values = tape.value(logits);
    let num_relations = model.num_relations;
    let results = triples
        .iter()
        .zip(chunk)
        .enumerate()
        .map(|(i, (t, &edge))| {
            let row = values.row(i);
            let rank = if graph.relation_seen_in_training(t.relation) {
                rank_relation(row, t.relation)
            } else {
                num_relations
            };
            RankResult {
                edge,
                triple: *t,
                rank,
                top: top_k(row, TOP_K),
            }
        })
        .collect();
    Ok((results, stats))
}

/// Hit@1 confusion: rows are true relations, columns top-1 predictions,
/// both in descending order of training frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    /// Relation ids in display order.
    pub order: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
    pub cells: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(results: &[RankResult], frequencies: &[usize]) -> Self {
        let n = frequencies.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| frequencies[b].cmp(&frequencies[a]).then(a.cmp(&b)));
        let mut position = vec![0; n];
        for (i, &r) in order.iter().enumerate() {
            position[r] = i;
        }
        let mut counts = vec![vec![0; n]; n];
        for r in results {
            if let Some(&pred) = r.top.first() {
                counts[position[r.triple.relation]][position[pred]] += 1;
            }
        }
        let cells = counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            order,
            counts,
            cells,
        }
    }

    /// Header row of relation names, then one row per true relation.
    pub fn to_csv(&self, relation_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for &r in &self.order {
            out.push(',');
            out.push_str(&csv_field(&relation_names[r]));
        }
        out.push('\n');
        for (i, &r) in self.order.iter().enumerate() {
            out.push_str(&csv_field(&relation_names[r]));
            for c in &self.cells[i] {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Metrics over one or more seeded runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: Summary,
    pub mr: Summary,
    pub hit1: Summary,
    pub hit3: Summary,
    pub triples: usize,
    pub runs: usize,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn from_runs(runs: &[Metrics], seconds: f64) -> Self {
        let pick = |f: fn(&Metrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            mrr: pick(|m| m.mrr),
            mr: pick(|m| m.mr),
            hit1: pick(|m| m.hit1),
            hit3: pick(|m| m.hit3),
            triples: runs.first().map_or(0, |m| m.count),
            runs: runs.len(),
            seconds,
        }
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (key, s) in [
            ("mrr", self.mrr),
            ("mr", self.mr),
            ("hit1", self.hit1),
            ("hit3", self.hit3),
        ] {
            let _ = writeln!(out, "{key} = {s}");
        }
        let _ = writeln!(out, "triples = {}", self.triples);
        let _ = writeln!(out, "runs = {}", self.runs);
        let _ = writeln!(out, "seconds = {:.2}", self.seconds);
        out
    }
}
