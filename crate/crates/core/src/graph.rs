//! Triple loading, vocabularies and train-split incidence.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

/// One step of a semantic path: the relation crossed and the crossing direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathToken {
    pub relation: usize,
    pub direction: Direction,
}

impl PathToken {
    pub fn forward(relation: usize) -> Self {
        Self {
            relation,
            direction: Direction::Forward,
        }
    }

    pub fn reverse(relation: usize) -> Self {
        Self {
            relation,
            direction: Direction::Reverse,
        }
    }

    /// Nonzero symbol code; `0` is left free so packed keys stay unambiguous.
    pub fn code(self) -> u64 {
        let d = match self.direction {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        };
        self.relation as u64 * 2 + d + 1
    }

    pub fn from_code(code: u64) -> Self {
        let c = code - 1;
        Self {
            relation: (c / 2) as usize,
            direction: if c.is_multiple_of(2) {
                Direction::Forward
            } else {
                Direction::Reverse
            },
        }
    }

    pub fn flip(self) -> Self {
        Self {
            relation: self.relation,
            direction: self.direction.flip(),
        }
    }
}

/// String ↔ dense id bijection, ids in first-insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, index }
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Incidence entry: `Forward` when the entity is the edge's head.
pub type Incident = (usize, Direction);

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    /// Edges of every split; the edge id is the position.
    edges: Vec<Triple>,
    splits: [Vec<usize>; 3],
    /// Train-split incidence used for messages and paths.
    incidence: Vec<Vec<Incident>>,
    in_train: Vec<bool>,
    relation_in_train: Vec<bool>,
}

fn parse_split(dir: &Path, split: Split) -> Result<Vec<[String; 3]>> {
    let path = dir.join(split.file_name());
    let text = fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                file: path,
                line: i + 1,
                found: fields.len(),
            });
        }
        out.push([
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ]);
    }
    Ok(out)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let dir = dir.as_ref();
    let mut raw = Vec::with_capacity(3);
    for split in Split::ALL {
        raw.push(parse_split(dir, split)?);
    }
    let [train, valid, test]: [Vec<[String; 3]>; 3] = raw.try_into().expect("three splits");
    KnowledgeGraph::from_named(&train, &valid, &test)
}

impl KnowledgeGraph {
    /// Builds a graph from string triples; vocabularies are assigned in
    /// first-occurrence order over train, then valid, then test.
    pub fn from_named(
        train: &[[String; 3]],
        valid: &[[String; 3]],
        test: &[[String; 3]],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingSplit);
        }
        let mut entities = Vocabulary::default();
        let mut relations = Vocabulary::default();
        let mut per_split = Vec::with_capacity(3);
        for rows in [train, valid, test] {
            let triples: Vec<Triple> = rows
                .iter()
                .map(|[h, r, t]| Triple {
                    head: entities.intern(h),
                    relation: relations.intern(r),
                    tail: entities.intern(t),
                })
                .collect();
            per_split.push(triples);
        }
        let [tr, va, te]: [Vec<Triple>; 3] = per_split.try_into().expect("three splits");
        Ok(Self::from_triples(entities, relations, tr, va, te))
    }

    /// Builds a graph from id triples over given vocabularies.
    pub fn from_triples(
        entities: Vocabulary,
        relations: Vocabulary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let mut edges = Vec::with_capacity(train.len() + valid.len() + test.len());
        let mut splits: [Vec<usize>; 3] = Default::default();
        for (s, triples) in [train, valid, test].into_iter().enumerate() {
            for t in triples {
                splits[s].push(edges.len());
                edges.push(t);
            }
        }
        let mut in_train = vec![false; edges.len()];
        let mut relation_in_train = vec![false; relations.len()];
        let mut incidence = vec![Vec::new(); entities.len()];
        for &e in &splits[0] {
            let t = edges[e];
            in_train[e] = true;
            relation_in_train[t.relation] = true;
            incidence[t.head].push((e, Direction::Forward));
            incidence[t.tail].push((e, Direction::Reverse));
        }
        let g = Self {
            entities,
            relations,
            edges,
            splits,
            incidence,
            in_train,
            relation_in_train,
        };
        for split in [Split::Valid, Split::Test] {
            let unseen = g
                .split(split)
                .iter()
                .filter(|&&e| !g.relation_in_train[g.edges[e].relation])
                .count();
            if unseen > 0 {
                log::warn!(
                    "{unseen} {split:?} triples use relations absent from the training split; they rank last"
                );
            }
        }
        g
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, id: usize) -> Triple {
        self.edges[id]
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn split(&self, split: Split) -> &[usize] {
        &self.splits[split.index()]
    }

    pub fn split_triples(&self, split: Split) -> Vec<Triple> {
        self.split(split).iter().map(|&e| self.edges[e]).collect()
    }

    pub fn is_train_edge(&self, id: usize) -> bool {
        self.in_train[id]
    }

    pub fn relation_seen_in_training(&self, relation: usize) -> bool {
        self.relation_in_train[relation]
    }

    /// Full train-split incidence of `e`, in insertion order.
    pub fn incidence(&self, e: usize) -> &[Incident] {
        &self.incidence[e]
    }

    /// Train incidence of `e` minus every edge in `exclude` (sorted
    /// ascending); with `cap`, a uniform sample without replacement kept in
    /// incidence order.
    pub fn neighbors<R: Rng>(
        &self,
        e: usize,
        exclude: &[usize],
        cap: Option<usize>,
        rng: &mut R,
    ) -> Vec<Incident> {
        let all: Vec<Incident> = self.incidence[e]
            .iter()
            .copied()
            .filter(|(id, _)| exclude.binary_search(id).is_err())
            .collect();
        match cap {
            Some(c) if all.len() > c => {
                let mut picked = sample(rng, all.len(), c).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| all[i]).collect()
            }
            _ => all,
        }
    }

    /// Copy of the graph whose training incidence no longer contains `edge`.
    pub fn without_edge(&self, edge: usize) -> Self {
        let mut g = self.clone();
        if g.in_train[edge] {
            let t = g.edges[edge];
            g.in_train[edge] = false;
            g.incidence[t.head].retain(|&(id, _)| id != edge);
            g.incidence[t.tail].retain(|&(id, _)| id != edge);
        }
        g
    }

    /// Triples whose edge is in the train incidence.
    pub fn train_edge_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.splits[0].iter().copied().filter(|&e| self.in_train[e])
    }

    /// Number of triples per relation over a split.
    pub fn relation_frequencies(&self, split: Split) -> Vec<usize> {
        let mut f = vec![0; self.num_relations()];
        for &e in self.split(split) {
            f[self.edges[e].relation] += 1;
        }
        f
    }

    /// SHA-256 over both vocabularies, used to pair checkpoints with datasets.
    pub fn vocabulary_hash(&self) -> String {
        vocabulary_hash(self.entities.names(), self.relations.names())
    }
}

pub fn vocabulary_hash(entities: &[String], relations: &[String]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (tag, names) in [(b"E", entities), (b"R", relations)] {
        h.update(tag);
        h.update((names.len() as u64).to_le_bytes());
        for n in names {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    pub(crate) fn named(rows: &[(&str, &str, &str)]) -> Vec<[String; 3]> {
        rows.iter()
            .map(|(h, r, t)| [h.to_string(), r.to_string(), t.to_string()])
            .collect()
    }

    fn write_dir(train: &str, valid: &str, test: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("train.txt", train),
            ("valid.txt", valid),
            ("test.txt", test),
        ] {
            let mut f = fs::File::create(dir.path().join(name)).unwrap();
            f.write_all(body.as_bytes()).unwrap();
        }
        dir
    }

    #[test]
    fn loads_tsv_and_assigns_ids_in_order() {
        let dir = write_dir("a\tr\tb\nb\ts\tc", "c\tr\ta\n", "d\tt\ta\n");
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.entities.names(), &["a", "b", "c", "d"]);
        assert_eq!(g.relations.names(), &["r", "s", "t"]);
        assert_eq!(g.split(Split::Train), &[0, 1]);
        assert_eq!(g.split(Split::Valid), &[2]);
        assert_eq!(g.split(Split::Test), &[3]);
        assert!(!g.relation_seen_in_training(2));
        assert!(g.incidence(3).is_empty());
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let dir = write_dir("", "a\tr\tb\n", "");
        let err = load_dataset(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "empty training split");
    }

    #[test]
    fn malformed_line_and_missing_file() {
        let dir = write_dir("a\tr\tb\na\tr\n", "", "");
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::MalformedLine {
                line: 2,
                found: 2,
                ..
            })
        ));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn incidence_counts_self_loops_twice() {
        let g = KnowledgeGraph::from_named(
            &named(&[("a", "r", "a"), ("a", "s", "b"), ("b", "r", "c")]),
            &[],
            &[],
        )
        .unwrap();
        let total: usize = (0..g.num_entities()).map(|e| g.incidence(e).len()).sum();
        assert_eq!(total, 2 * g.num_edges());
        assert_eq!(
            g.incidence(0),
            &[
                (0, Direction::Forward),
                (0, Direction::Reverse),
                (1, Direction::Forward)
            ]
        );
    }

    #[test]
    fn neighbors_exclude_and_isolated() {
        let g = KnowledgeGraph::from_named(
            &named(&[("a", "r", "b"), ("a", "r", "c"), ("d", "s", "a")]),
            &named(&[("e", "r", "a")]),
            &[],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(g.neighbors(4, &[], None, &mut rng).is_empty());
        let n = g.neighbors(0, &[1], None, &mut rng);
        assert_eq!(n, vec![(0, Direction::Forward), (2, Direction::Reverse)]);
    }

    #[test]
    fn capped_neighbors_replay_reference_sampler() {
        let rows: Vec<(String, String, String)> = (0..10)
            .map(|i| ("hub".to_string(), "r".to_string(), format!("n{i}")))
            .collect();
        let rows: Vec<[String; 3]> = rows.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        let g = KnowledgeGraph::from_named(&rows, &[], &[]).unwrap();
        let got = g.neighbors(0, &[], Some(4), &mut ChaCha8Rng::seed_from_u64(42));
        // replay: same stream, same sampler, then restore incidence order
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(42), 10, 4).into_vec();
        idx.sort_unstable();
        let want: Vec<Incident> = idx.iter().map(|&i| g.incidence(0)[i]).collect();
        assert_eq!(got, want);
        assert_eq!(got.len(), 4);
        let again = g.neighbors(0, &[], Some(4), &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(got, again);
    }

    #[test]
    fn without_edge_removes_only_that_edge() {
        let g = KnowledgeGraph::from_named(&named(&[("a", "r", "b"), ("b", "s", "c")]), &[], &[])
            .unwrap();
        let h = g.without_edge(0);
        assert!(h.incidence(0).is_empty());
        assert_eq!(h.incidence(1), &[(1, Direction::Forward)]);
        assert_eq!(h.num_edges(), 2);
    }

    #[test]
    fn token_codes_round_trip_and_are_distinct() {
        for r in 0..5 {
            let f = PathToken::forward(r);
            let b = PathToken::reverse(r);
            assert_ne!(f.code(), b.code());
            assert!(f.code() > 0);
            assert_eq!(PathToken::from_code(f.code()), f);
            assert_eq!(PathToken::from_code(b.code()), b);
        }
    }
}
