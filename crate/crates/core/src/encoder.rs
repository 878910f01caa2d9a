//! Attention-enhanced message passing over the edges of a subgraph view.
//!
//! A [`GraphView`] is the enclosing subgraph of a set of query entities:
//! every training edge reachable within a fixed number of entity hops, minus
//! excluded edges. All edge states of the view are updated together, so one
//! forward pass serves a whole batch of queries.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context_index::EdgeContexts;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::tape::{Activation, ContextLayout, EdgeEndpoints, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Local,
    Global,
    Random,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Local, Mechanism::Global, Mechanism::Random];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Local => "local",
            Mechanism::Global => "global",
            Mechanism::Random => "random",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Mechanism::Local => 'L',
            Mechanism::Global => 'G',
            Mechanism::Random => 'R',
        }
    }

    /// Parses `local,global,random` (or the `L+G+R` letter form).
    pub fn parse_list(s: &str) -> Result<Vec<Mechanism>> {
        let mut set = BTreeSet::new();
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            let m = match part.to_ascii_lowercase().as_str() {
                "local" | "l" => Mechanism::Local,
                "global" | "g" => Mechanism::Global,
                "random" | "r" => Mechanism::Random,
                other => {
                    return Err(Error::Config(format!(
                        "unknown attention mechanism `{other}`"
                    )))
                }
            };
            set.insert(m);
        }
        if set.is_empty() {
            return Err(Error::Config(
                "at least one attention mechanism is required".into(),
            ));
        }
        Ok(set.into_iter().collect())
    }

    /// `L+G` style label.
    pub fn label(list: &[Mechanism]) -> String {
        list.iter()
            .map(|m| m.letter().to_string())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// All non-empty subsets, singles first.
    pub fn subsets() -> Vec<Vec<Mechanism>> {
        use Mechanism::*;
        vec![
            vec![Local],
            vec![Global],
            vec![Random],
            vec![Local, Global],
            vec![Local, Random],
            vec![Global, Random],
            vec![Local, Global, Random],
        ]
    }
}

/// How edge states are pooled into entity messages during message passing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Outer iterations `K`.
    pub iterations: usize,
    /// Hops `H`; each outer iteration runs `H - 1` update steps.
    pub hops: usize,
    pub mechanisms: Vec<Mechanism>,
    pub p_random: f64,
    pub neighbor_cap: Option<usize>,
    pub activation: ActivationKind,
    pub aggregation: Aggregation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

impl From<ActivationKind> for Activation {
    fn from(a: ActivationKind) -> Self {
        match a {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Sigmoid => Activation::Sigmoid,
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            iterations: 2,
            hops: 3,
            mechanisms: Mechanism::ALL.to_vec(),
            p_random: 0.2,
            neighbor_cap: None,
            activation: ActivationKind::Relu,
            aggregation: Aggregation::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(Error::Config(
                "at least one attention mechanism is required".into(),
            ));
        }
        if self.dim == 0 || self.iterations == 0 || self.hops == 0 {
            return Err(Error::Config(
                "dim, iterations and hops must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_random) {
            return Err(Error::Config(format!(
                "p_random {} outside [0, 1]",
                self.p_random
            )));
        }
        if self.neighbor_cap == Some(0) {
            return Err(Error::Config("neighbor cap must be positive".into()));
        }
        Ok(())
    }

    pub fn has(&self, m: Mechanism) -> bool {
        self.mechanisms.contains(&m)
    }

    /// Update steps across all iterations.
    pub fn steps(&self) -> usize {
        self.iterations * (self.hops - 1)
    }

    /// Width of one entity's concatenated mechanism messages.
    pub fn entity_width(&self) -> usize {
        self.dim * self.mechanisms.len()
    }

    pub fn pair_width(&self) -> usize {
        2 * self.entity_width()
    }
}

/// Enclosing training subgraph of a set of entities.
#[derive(Clone, Debug)]
pub struct GraphView {
    /// Global entity ids, ascending; the local id is the position.
    pub entities: Vec<usize>,
    /// Global edge ids, ascending; the local id is the position.
    pub edges: Vec<usize>,
    pub relations: Vec<usize>,
    pub endpoints: Arc<EdgeEndpoints>,
    /// Per local entity, incident local edges (a self-loop once).
    pub incident: Arc<Vec<Vec<usize>>>,
    pub contexts: Arc<EdgeContexts>,
}

impl GraphView {
    /// Edges incident to entities within `radius` hops of `seeds`, found
    /// through [`KnowledgeGraph::neighbors`] with the given exclusions.
    pub fn build<R: Rng>(
        graph: &KnowledgeGraph,
        seeds: &[usize],
        exclude: &[usize],
        radius: usize,
        cap: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        for &s in seeds {
            if s >= graph.num_entities() {
                return Err(Error::UnknownEntity(format!("#{s}")));
            }
        }
        let mut exclude = exclude.to_vec();
        exclude.sort_unstable();
        let exclude = exclude.as_slice();
        let mut visited = vec![false; graph.num_entities()];
        let mut frontier: Vec<usize> = seeds.to_vec();
        frontier.sort_unstable();
        frontier.dedup();
        for &s in &frontier {
            visited[s] = true;
        }
        let mut edges = Vec::new();
        for depth in 0..=radius {
            let mut next = Vec::new();
            for &u in &frontier {
                for (e, _) in graph.neighbors(u, exclude, cap, rng) {
                    edges.push(e);
                    if depth < radius {
                        let t = graph.edge(e);
                        for v in [t.head, t.tail] {
                            if !visited[v] {
                                visited[v] = true;
                                next.push(v);
                            }
                        }
                    }
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        edges.sort_unstable();
        edges.dedup();
        let mut entities: Vec<usize> = seeds.to_vec();
        for &e in &edges {
            let t = graph.edge(e);
            entities.push(t.head);
            entities.push(t.tail);
        }
        entities.sort_unstable();
        entities.dedup();
        let local = |g: usize| entities.binary_search(&g).expect("view entity");
        let mut heads = Vec::with_capacity(edges.len());
        let mut tails = Vec::with_capacity(edges.len());
        let mut relations = Vec::with_capacity(edges.len());
        let mut incident = vec![Vec::new(); entities.len()];
        let mut pairs = Vec::with_capacity(edges.len());
        for (i, &e) in edges.iter().enumerate() {
            let t = graph.edge(e);
            let (h, tl) = (local(t.head), local(t.tail));
            heads.push(h);
            tails.push(tl);
            relations.push(t.relation);
            pairs.push((h, tl));
            incident[h].push(i);
            if tl != h {
                incident[tl].push(i);
            }
        }
        let contexts = Arc::new(EdgeContexts::new(entities.len(), &pairs));
        Ok(Self {
            entities,
            edges,
            relations,
            endpoints: Arc::new(EdgeEndpoints { heads, tails }),
            incident: Arc::new(incident),
            contexts,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn local_entity(&self, global: usize) -> Option<usize> {
        self.entities.binary_search(&global).ok()
    }
}

/// One admitted random-context entry: outer iteration, hop step, local edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Admission {
    pub iteration: usize,
    pub step: usize,
    pub edge: usize,
}

pub struct Encoded {
    /// `entities × entity_width` concatenated mechanism messages.
    pub entity_messages: Var,
    /// Edge states `S_0..S_K`.
    pub snapshots: Vec<Var>,
    pub admissions: Vec<Admission>,
}

pub fn relation_embedding_name() -> &'static str {
    "relation_embedding"
}

pub fn step_param_names(i: usize) -> [String; 3] {
    [
        format!("mp.{i}.w1"),
        format!("mp.{i}.w2"),
        format!("mp.{i}.bias"),
    ]
}

pub fn attention_param_names(m: Mechanism) -> [String; 2] {
    [format!("{}.align", m.name()), format!("{}.value", m.name())]
}

fn entity_pool(
    tape: &mut Tape,
    states: Var,
    incident: &Arc<Vec<Vec<usize>>>,
    aggregation: Aggregation,
) -> Result<Var> {
    let summed = tape.segment_sum(states, incident.clone())?;
    match aggregation {
        Aggregation::Sum => Ok(summed),
        Aggregation::Mean => {
            let scale = incident
                .iter()
                .map(|l| {
                    if l.is_empty() {
                        0.0
                    } else {
                        1.0 / l.len() as f64
                    }
                })
                .collect();
            tape.scale_rows(summed, Arc::new(scale))
        }
    }
}

/// Runs message passing and the enabled attention mechanisms over `view`.
/// `rng` drives random-context admission only.
pub fn encode<R: Rng>(
    tape: &mut Tape,
    view: &GraphView,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<Encoded> {
    let d = cfg.dim;
    let n_edges = view.num_edges();
    let act: Activation = cfg.activation.into();
    let emb = tape.param_by_name(relation_embedding_name())?;
    let s0 = tape.gather_rows(emb, &view.relations)?;
    let mut states = s0;
    let mut snapshots = vec![s0];
    let random_on = cfg.has(Mechanism::Random);
    let mut admissions = Vec::new();
    let mut admitted_rows = Vec::new();
    for i in 0..cfg.iterations {
        let [n1, n2, nb] = step_param_names(i);
        let (w1, w2, b) = (
            tape.param_by_name(&n1)?,
            tape.param_by_name(&n2)?,
            tape.param_by_name(&nb)?,
        );
        for step in 0..cfg.hops - 1 {
            let messages = entity_pool(tape, states, &view.incident, cfg.aggregation)?;
            let cross = tape.cross_aggregate(messages, w1, view.endpoints.clone())?;
            let own = tape.matmul(states, w2)?;
            let z = tape.add(cross, own)?;
            let z = tape.add_row(z, b)?;
            states = tape.activation(z, act)?;
            if random_on {
                let mut picked = Vec::new();
                for e in 0..n_edges {
                    if rng.gen::<f64>() < cfg.p_random {
                        picked.push(e);
                        admissions.push(Admission {
                            iteration: i,
                            step,
                            edge: e,
                        });
                    }
                }
                if !picked.is_empty() {
                    admitted_rows.push(tape.gather_rows(states, &picked)?);
                }
            }
        }
        snapshots.push(states);
    }
    let s_k = states;

    let mut per_mechanism = Vec::with_capacity(cfg.mechanisms.len());
    for &m in &cfg.mechanisms {
        let [na, nv] = attention_param_names(m);
        let (w_align, w_value) = (tape.param_by_name(&na)?, tape.param_by_name(&nv)?);
        let attended = match m {
            Mechanism::Local if n_edges == 0 => None,
            Mechanism::Local => {
                let summary = tape.mean_rows(s_k)?;
                let q = tape.matmul(summary, w_align)?;
                let qt = tape.transpose(q)?;
                let scores = tape.matmul(s_k, qt)?;
                let layout = Arc::new(ContextLayout::new(
                    view.contexts.clone(),
                    (0..n_edges).collect(),
                ));
                Some(tape.context_attention(scores, s_k, layout)?)
            }
            Mechanism::Global => {
                let q = tape.matmul(s0, w_align)?;
                let scores = snapshots
                    .iter()
                    .map(|&s| tape.row_dot(q, s))
                    .collect::<Result<Vec<_>>>()?;
                Some(tape.stack_attention(&scores, &snapshots)?)
            }
            Mechanism::Random => {
                if admissions.is_empty() {
                    None
                } else {
                    let entries = tape.concat_rows(&admitted_rows)?;
                    let summary = tape.mean_rows(entries)?;
                    let q = tape.matmul(summary, w_align)?;
                    let qt = tape.transpose(q)?;
                    let scores = tape.matmul(entries, qt)?;
                    let layout = Arc::new(ContextLayout::new(
                        view.contexts.clone(),
                        admissions.iter().map(|a| a.edge).collect(),
                    ));
                    Some(tape.context_attention(scores, entries, layout)?)
                }
            }
        };
        let out = match attended {
            Some(a) => {
                let v = tape.matmul(a, w_value)?;
                tape.activation(v, act)?
            }
            None => tape.constant(Tensor::zeros(&[n_edges, d]))?,
        };
        per_mechanism.push(tape.segment_sum(out, view.incident.clone())?);
    }
    let entity_messages = if per_mechanism.len() == 1 {
        per_mechanism[0]
    } else {
        tape.concat_cols(&per_mechanism)?
    };
    Ok(Encoded {
        entity_messages,
        snapshots,
        admissions,
    })
}
