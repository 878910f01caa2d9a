//! Path vocabulary and multi-hot path counts for entity pairs.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::PathToken;
use crate::tape::SparseRows;
use crate::walk::{PathFinder, PathKeyPacker};

/// Frozen index of semantic paths seen between training pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathVocabulary {
    keys: Vec<u64>,
    index: HashMap<u64, u32>,
}

/// Distinct paths found for a set of pairs and how many were in the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathStats {
    pub found: usize,
    pub mapped: usize,
}

impl PathStats {
    pub fn dropped(&self) -> usize {
        self.found - self.mapped
    }

    pub fn merge(&mut self, other: PathStats) {
        self.found += other.found;
        self.mapped += other.mapped;
    }
}

/// Per-pair path counts `(path id, walks)`, ascending by id.
pub type PathCounts = Vec<(u32, u32)>;

/// How walk counts become the values fed to the path projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathWeighting {
    /// Raw walk counts.
    Counts,
    /// Counts divided by the pair's total walk count.
    Frequency,
    /// Counts divided by the L2 norm of the pair's count vector.
    Unit,
    /// `ln(1 + count)`.
    Log,
}

impl std::str::FromStr for PathWeighting {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "counts" => Ok(PathWeighting::Counts),
            "frequency" => Ok(PathWeighting::Frequency),
            "unit" => Ok(PathWeighting::Unit),
            "log" => Ok(PathWeighting::Log),
            other => Err(crate::error::Error::Config(format!(
                "unknown path weighting `{other}`"
            ))),
        }
    }
}

impl PathWeighting {
    pub fn row(self, counts: &[(u32, u32)]) -> Vec<(u32, f64)> {
        if self == PathWeighting::Log {
            return counts
                .iter()
                .map(|&(id, c)| (id, (c as f64).ln_1p()))
                .collect();
        }
        let total = match self {
            PathWeighting::Counts => 1.0,
            PathWeighting::Frequency => counts.iter().map(|&(_, c)| c as f64).sum(),
            PathWeighting::Unit => counts
                .iter()
                .map(|&(_, c)| (c as f64).powi(2))
                .sum::<f64>()
                .sqrt(),
            PathWeighting::Log => 1.0,
        };
        let scale = if total > 0.0 { 1.0 / total } else { 1.0 };
        counts
            .iter()
            .map(|&(id, c)| (id, c as f64 * scale))
            .collect()
    }

    pub fn rows(self, counts: &[PathCounts]) -> SparseRows {
        counts.iter().map(|c| self.row(c)).collect()
    }
}

/// A pair to encode and the edges its paths must avoid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairQuery {
    pub head: usize,
    pub tail: usize,
    pub exclude: Vec<usize>,
}

fn counts_for(finder: &PathFinder, pairs: &[PairQuery]) -> Vec<BTreeMap<u64, u32>> {
    pairs
        .par_iter()
        .map(|p| finder.path_counts(p.head, p.tail, &p.exclude))
        .collect()
}

impl PathVocabulary {
    pub fn from_keys(keys: Vec<u64>) -> Self {
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, i as u32))
            .collect();
        Self { keys, index }
    }

    /// Vocabulary over all paths of the training pairs; ids follow pair order,
    /// then key order within a pair. Also returns each pair's counts.
    pub fn build(finder: &PathFinder, pairs: &[PairQuery]) -> (Self, Vec<PathCounts>) {
        let mut vocab = Self::default();
        let mut rows = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(4096) {
            for counts in counts_for(finder, chunk) {
                for &k in counts.keys() {
                    if !vocab.index.contains_key(&k) {
                        vocab.index.insert(k, vocab.keys.len() as u32);
                        vocab.keys.push(k);
                    }
                }
                rows.push(vocab.encode_counts(&counts).0);
            }
        }
        (vocab, rows)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn id(&self, key: u64) -> Option<u32> {
        self.index.get(&key).copied()
    }

    pub fn paths<'a>(
        &'a self,
        packer: &'a PathKeyPacker,
    ) -> impl Iterator<Item = Vec<PathToken>> + 'a {
        self.keys.iter().map(move |&k| packer.unpack(k))
    }

    /// Multi-hot counts over vocabulary ids, sorted by id; unknown paths are dropped.
    pub fn encode_counts(&self, counts: &BTreeMap<u64, u32>) -> (PathCounts, PathStats) {
        let mut row: PathCounts = counts
            .iter()
            .filter_map(|(k, &c)| self.id(*k).map(|id| (id, c)))
            .collect();
        row.sort_unstable_by_key(|&(id, _)| id);
        let stats = PathStats {
            found: counts.len(),
            mapped: row.len(),
        };
        (row, stats)
    }

    pub fn encode(&self, finder: &PathFinder, pairs: &[PairQuery]) -> (Vec<PathCounts>, PathStats) {
        let mut stats = PathStats::default();
        let rows = counts_for(finder, pairs)
            .iter()
            .map(|c| {
                let (row, s) = self.encode_counts(c);
                stats.merge(s);
                row
            })
            .collect();
        (rows, stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::named;
    use crate::graph::{KnowledgeGraph, Split};

    fn train_queries(g: &KnowledgeGraph) -> Vec<PairQuery> {
        crate::trainer::edge_queries(g, g.split(Split::Train))
    }

    #[test]
    fn single_edge_gives_empty_vocabulary() {
        let g = KnowledgeGraph::from_named(&named(&[("h", "r", "t")]), &[], &[]).unwrap();
        let f = PathFinder::new(&g, 3).unwrap();
        let (v, rows) = PathVocabulary::build(&f, &train_queries(&g));
        assert!(v.is_empty());
        assert!(rows[0].is_empty());
    }

    #[test]
    fn figure_pair_vocabulary_contains_caption_paths() {
        let g = KnowledgeGraph::from_named(
            &named(&[
                ("head", "BornIn", "city"),
                ("city", "FriendOf", "tail"),
                ("head", "Play", "club"),
                ("club", "EnemyWith", "rival"),
                ("tail", "Play", "rival"),
                ("head", "Knows", "tail"),
            ]),
            &[],
            &[],
        )
        .unwrap();
        let f = PathFinder::new(&g, 3).unwrap();
        let (v, rows) = PathVocabulary::build(&f, &train_queries(&g));
        let rel = |n: &str| g.relations.get(n).unwrap();
        let paths: Vec<Vec<PathToken>> = v.paths(f.packer()).collect();
        assert!(paths.contains(&vec![
            PathToken::forward(rel("BornIn")),
            PathToken::forward(rel("FriendOf"))
        ]));
        assert!(paths.contains(&vec![
            PathToken::forward(rel("Play")),
            PathToken::forward(rel("EnemyWith")),
            PathToken::reverse(rel("Play"))
        ]));
        // the Knows pair excludes its own edge, leaving the two caption paths
        assert_eq!(rows[5].len(), 2);
    }

    #[test]
    fn unseen_paths_are_dropped_and_counted() {
        let v = PathVocabulary::from_keys(vec![7, 3]);
        let counts = BTreeMap::from([(3, 2), (5, 1), (7, 1)]);
        let (row, stats) = v.encode_counts(&counts);
        assert_eq!(row, vec![(0, 1), (1, 2)]);
        assert_eq!(stats.found, 3);
        assert_eq!(stats.mapped, 2);
        assert_eq!(stats.dropped(), 1);
    }

    #[test]
    fn weighting_scales_rows() {
        let counts = vec![(0, 2), (4, 1), (9, 1)];
        assert_eq!(
            PathWeighting::Counts.row(&counts),
            vec![(0, 2.0), (4, 1.0), (9, 1.0)]
        );
        assert_eq!(
            PathWeighting::Frequency.row(&counts),
            vec![(0, 0.5), (4, 0.25), (9, 0.25)]
        );
        assert!(PathWeighting::Frequency.row(&[]).is_empty());
    }

    #[test]
    fn vocabulary_is_union_of_enumerations() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<(String, String, String)> = (0..18)
            .map(|_| {
                (
                    format!("e{}", rng.gen_range(0..10)),
                    format!("r{}", rng.gen_range(0..3)),
                    format!("e{}", rng.gen_range(0..10)),
                )
            })
            .collect();
        let refs: Vec<(&str, &str, &str)> = rows
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        let g = KnowledgeGraph::from_named(&named(&refs), &[], &[]).unwrap();
        let f = PathFinder::new(&g, 3).unwrap();
        let (v, _) = PathVocabulary::build(&f, &train_queries(&g));
        let mut want = std::collections::BTreeSet::new();
        for &e in g.split(Split::Train) {
            let t = g.edge(e);
            want.extend(crate::walk::enumerate_paths(&g, t.head, t.tail, 3, Some(e)).unwrap());
        }
        let got: std::collections::BTreeSet<_> = v.paths(f.packer()).collect();
        assert!(!got.is_empty());
        assert_eq!(got, want);
    }

    #[test]
    fn shared_path_id_counts_twice_in_logits() {
        use crate::params::ParameterStore;
        use crate::tape::Tape;
        use crate::tensor::Tensor;
        use std::sync::Arc;
        // three paths found, two of them the same id
        let v = PathVocabulary::from_keys(vec![4, 8]);
        let (row, _) = v.encode_counts(&BTreeMap::from([(4, 2), (8, 1)]));
        assert_eq!(row, vec![(0, 2), (1, 1)]);
        let mut s = ParameterStore::new();
        s.insert(
            "wp",
            Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 3.0]).unwrap(),
        )
        .unwrap();
        let mut t = Tape::new(&s);
        let w = t.param_by_name("wp").unwrap();
        let rows = Arc::new(PathWeighting::Counts.rows(&[row]));
        let out = t.sparse_matmul(rows, w).unwrap();
        assert_eq!(t.value(out).data(), &[2.5, 1.0]);
    }
}
