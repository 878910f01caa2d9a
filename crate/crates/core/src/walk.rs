//! Bounded-length semantic path enumeration over the training incidence.
//!
//! Walks cross edges in either direction and never reuse an edge id; the
//! token sequence of each walk is a semantic path. Results are counted per
//! distinct sequence, so multiplicities reflect the number of walks.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{Direction, KnowledgeGraph, PathToken};

#[derive(Clone, Copy, Debug)]
struct Step {
    other: usize,
    edge: usize,
    token: PathToken,
}

/// Key spaces up to this size are tallied in a dense array.
const DENSE_KEYS: u64 = 1 << 22;

thread_local! {
    static DENSE: RefCell<Vec<u32>> = const { RefCell::new(Vec::new()) };
}

struct Walk<'a> {
    t: usize,
    dist: &'a [usize],
    exclude: &'a [usize],
    used: Vec<usize>,
    keys: Vec<u64>,
}

/// Packs token sequences of bounded length into `u64` keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathKeyPacker {
    base: u64,
    max_len: usize,
}

impl PathKeyPacker {
    pub fn new(num_relations: usize, max_len: usize) -> Result<Self> {
        let base = 2 * num_relations as u64 + 1;
        if base.checked_pow(max_len as u32).is_none() {
            return Err(Error::PathKeyOverflow {
                len: max_len,
                relations: num_relations,
            });
        }
        Ok(Self { base, max_len })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Upper bound of every packed key, saturating on overflow.
    pub fn key_space(&self) -> u64 {
        self.base.saturating_pow(self.max_len as u32)
    }

    pub fn pack(&self, tokens: &[PathToken]) -> u64 {
        debug_assert!(tokens.len() <= self.max_len);
        let mut key = 0;
        for t in tokens.iter().rev() {
            key = key * self.base + t.code();
        }
        key
    }

    pub fn unpack(&self, mut key: u64) -> Vec<PathToken> {
        let mut out = Vec::new();
        while key > 0 {
            out.push(PathToken::from_code(key % self.base));
            key /= self.base;
        }
        out
    }
}

/// Train adjacency grouped by the neighbor on the other side.
#[derive(Clone, Debug)]
pub struct PathFinder {
    adjacency: Vec<Vec<Step>>,
    neighbors: Vec<Vec<usize>>,
    packer: PathKeyPacker,
}

impl PathFinder {
    pub fn new(graph: &KnowledgeGraph, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("path length must be at least 1".into()));
        }
        let packer = PathKeyPacker::new(graph.num_relations(), max_len)?;
        let mut adjacency = Vec::with_capacity(graph.num_entities());
        let mut neighbors = Vec::with_capacity(graph.num_entities());
        for e in 0..graph.num_entities() {
            let mut steps: Vec<Step> = graph
                .incidence(e)
                .iter()
                .map(|&(edge, dir)| {
                    let t = graph.edge(edge);
                    let (other, token) = match dir {
                        Direction::Forward => (t.tail, PathToken::forward(t.relation)),
                        Direction::Reverse => (t.head, PathToken::reverse(t.relation)),
                    };
                    Step { other, edge, token }
                })
                .collect();
            steps.sort_by_key(|s| (s.other, s.edge, s.token));
            let mut ns: Vec<usize> = steps.iter().map(|s| s.other).collect();
            ns.dedup();
            adjacency.push(steps);
            neighbors.push(ns);
        }
        Ok(Self {
            adjacency,
            neighbors,
            packer,
        })
    }

    pub fn packer(&self) -> &PathKeyPacker {
        &self.packer
    }

    pub fn max_len(&self) -> usize {
        self.packer.max_len
    }

    fn steps_to(&self, u: usize, v: usize) -> &[Step] {
        let adj = &self.adjacency[u];
        let lo = adj.partition_point(|s| s.other < v);
        let hi = adj.partition_point(|s| s.other <= v);
        &adj[lo..hi]
    }

    /// `dist[u] ≤ max_len - 1` marks nodes that can still reach `t`.
    fn distances_to(&self, t: usize, limit: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.adjacency.len()];
        dist[t] = 0;
        let mut frontier = vec![t];
        for d in 1..=limit {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.neighbors[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = d;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Walk counts per packed path key, over walks of length `1..=max_len`
    /// from `h` to `t` avoiding the edges in `exclude`.
    pub fn path_counts(&self, h: usize, t: usize, exclude: &[usize]) -> BTreeMap<u64, u32> {
        let l = self.max_len();
        let dist = self.distances_to(t, l);
        let mut walk = Walk {
            t,
            dist: &dist,
            exclude,
            used: Vec::with_capacity(l),
            keys: Vec::new(),
        };
        self.extend(&mut walk, h, 0, 1);
        let mut keys = walk.keys;
        let space = self.packer.key_space();
        if space <= DENSE_KEYS && keys.len() > 64 {
            // Dense tally in a reused per-thread buffer, reset by the keys touched.
            DENSE.with(|cell| {
                let mut tally = cell.borrow_mut();
                if tally.len() < space as usize {
                    tally.resize(space as usize, 0);
                }
                let mut distinct = Vec::new();
                for &k in &keys {
                    let c = &mut tally[k as usize];
                    if *c == 0 {
                        distinct.push(k);
                    }
                    *c += 1;
                }
                distinct.sort_unstable();
                distinct
                    .into_iter()
                    .map(|k| (k, std::mem::take(&mut tally[k as usize])))
                    .collect()
            })
        } else {
            keys.sort_unstable();
            let mut out = Vec::new();
            for k in keys {
                match out.last_mut() {
                    Some((last, n)) if *last == k => *n += 1,
                    _ => out.push((k, 1u32)),
                }
            }
            out.into_iter().collect()
        }
    }

    /// `prefix` is the packed key of the tokens so far and `scale` the
    /// weight of the next token.
    fn extend(&self, w: &mut Walk<'_>, u: usize, prefix: u64, scale: u64) {
        let remaining = self.max_len() - w.used.len();
        // Steps that land on t close a walk.
        for s in self.steps_to(u, w.t) {
            if !w.used.contains(&s.edge) && !w.exclude.contains(&s.edge) {
                w.keys.push(prefix + s.token.code() * scale);
            }
        }
        if remaining <= 1 {
            return;
        }
        for s in &self.adjacency[u] {
            if w.dist[s.other] > remaining - 1
                || w.used.contains(&s.edge)
                || w.exclude.contains(&s.edge)
            {
                continue;
            }
            w.used.push(s.edge);
            let key = prefix + s.token.code() * scale;
            self.extend(w, s.other, key, scale * self.packer.base);
            w.used.pop();
        }
    }

    /// Distinct token sequences of the walks counted by [`Self::path_counts`].
    pub fn enumerate(&self, h: usize, t: usize, exclude: &[usize]) -> BTreeSet<Vec<PathToken>> {
        self.path_counts(h, t, exclude)
            .keys()
            .map(|&k| self.packer.unpack(k))
            .collect()
    }
}

/// All distinct semantic paths of length `1..=max_len` from `h` to `t`.
pub fn enumerate_paths(
    graph: &KnowledgeGraph,
    h: usize,
    t: usize,
    max_len: usize,
    exclude: Option<usize>,
) -> Result<BTreeSet<Vec<PathToken>>> {
    let finder = PathFinder::new(graph, max_len)?;
    let ex: Vec<usize> = exclude.into_iter().collect();
    Ok(finder.enumerate(h, t, &ex))
}
