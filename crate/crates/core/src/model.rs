//! Relation scoring head: pair encoding plus optional path logits.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderConfig, GraphView, Mechanism};
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::params::ParameterStore;
use crate::path_encoder::{PairQuery, PathStats, PathVocabulary, PathWeighting};
use crate::tape::{SparseRows, Tape, Var};
use crate::tensor::Tensor;
use crate::walk::PathFinder;

pub const OUTPUT_PARAM: &str = "output";
pub const PATH_PARAM: &str = "paths";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub use_paths: bool,
    pub path_len: usize,
    pub path_weighting: PathWeighting,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            use_paths: true,
            path_len: 3,
            path_weighting: PathWeighting::Unit,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.use_paths && self.path_len == 0 {
            return Err(Error::Config("path length must be at least 1".into()));
        }
        Ok(())
    }

    /// Entity hops covered by a subgraph view.
    pub fn view_radius(&self) -> usize {
        self.encoder.steps()
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub paths: PathVocabulary,
    pub num_relations: usize,
}

/// Everything one batched forward pass needs besides parameters.
#[derive(Clone, Debug)]
pub struct Batch {
    pub pairs: Vec<(usize, usize)>,
    /// Edges removed from the message-passing view.
    pub exclude: Vec<usize>,
    pub path_rows: Option<Arc<SparseRows>>,
}

impl Model {
    /// Glorot-initialized weights, zero biases.
    pub fn init(
        config: ModelConfig,
        num_relations: usize,
        paths: PathVocabulary,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.encoder.dim;
        let mut params = ParameterStore::new();
        params.insert_glorot(
            encoder::relation_embedding_name(),
            num_relations,
            d,
            &mut rng,
        )?;
        for i in 0..config.encoder.iterations {
            let [w1, w2, b] = encoder::step_param_names(i);
            params.insert_glorot(&w1, d * d, d, &mut rng)?;
            params.insert_glorot(&w2, d, d, &mut rng)?;
            params.insert(&b, Tensor::zeros(&[1, d]))?;
        }
        for &m in &config.encoder.mechanisms {
            for name in encoder::attention_param_names(m) {
                params.insert_glorot(&name, d, d, &mut rng)?;
            }
        }
        params.insert_glorot(
            OUTPUT_PARAM,
            config.encoder.pair_width(),
            num_relations,
            &mut rng,
        )?;
        if config.use_paths && !paths.is_empty() {
            params.insert_glorot(PATH_PARAM, paths.len(), num_relations, &mut rng)?;
        }
        Ok(Self {
            config,
            params,
            paths,
            num_relations,
        })
    }

    pub fn uses_paths(&self) -> bool {
        self.config.use_paths && !self.paths.is_empty()
    }

    pub fn path_finder(&self, graph: &KnowledgeGraph) -> Result<Option<PathFinder>> {
        if self.config.use_paths {
            Ok(Some(PathFinder::new(graph, self.config.path_len)?))
        } else {
            Ok(None)
        }
    }

    /// Path rows for pairs, or `None` when paths are disabled.
    pub fn path_rows(
        &self,
        finder: Option<&PathFinder>,
        queries: &[PairQuery],
    ) -> (Option<Arc<SparseRows>>, PathStats) {
        match finder {
            Some(f) if self.uses_paths() => {
                let (counts, stats) = self.paths.encode(f, queries);
                (
                    Some(Arc::new(self.config.path_weighting.rows(&counts))),
                    stats,
                )
            }
            _ => (None, PathStats::default()),
        }
    }

    /// Builds the batch's view and records the logits (`pairs × relations`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &KnowledgeGraph,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let mut seeds = Vec::with_capacity(batch.pairs.len() * 2);
        for &(h, t) in &batch.pairs {
            for e in [h, t] {
                if e >= graph.num_entities() {
                    return Err(Error::UnknownEntity(format!("#{e}")));
                }
                seeds.push(e);
            }
        }
        let view = GraphView::build(
            graph,
            &seeds,
            &batch.exclude,
            self.config.view_radius(),
            self.config.encoder.neighbor_cap,
            rng,
        )?;
        self.forward_view(tape, &view, batch, rng)
    }

    pub fn forward_view(
        &self,
        tape: &mut Tape,
        view: &GraphView,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let enc = encoder::encode(tape, view, &self.config.encoder, rng)?;
        let local = |g: usize| view.local_entity(g).expect("seed entity in view");
        let heads: Vec<usize> = batch.pairs.iter().map(|&(h, _)| local(h)).collect();
        let tails: Vec<usize> = batch.pairs.iter().map(|&(_, t)| local(t)).collect();
        let mh = tape.gather_rows(enc.entity_messages, &heads)?;
        let mt = tape.gather_rows(enc.entity_messages, &tails)?;
        let pair = tape.concat_cols(&[mh, mt])?;
        let w_out = tape.param_by_name(OUTPUT_PARAM)?;
        let mut logits = tape.matmul(pair, w_out)?;
        if let (true, Some(rows)) = (self.uses_paths(), &batch.path_rows) {
            if rows.len() != batch.pairs.len() {
                return Err(Error::Shape {
                    op: "path rows",
                    detail: format!("{} rows for {} pairs", rows.len(), batch.pairs.len()),
                });
            }
            let w_p = tape.param_by_name(PATH_PARAM)?;
            let p = tape.sparse_matmul(rows.clone(), w_p)?;
            logits = tape.add(logits, p)?;
        }
        Ok(logits)
    }

    /// Logits for a single pair, excluding `exclude` from messages and paths.
    pub fn score(
        &self,
        graph: &KnowledgeGraph,
        finder: Option<&PathFinder>,
        head: usize,
        tail: usize,
        exclude: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let ex: Vec<usize> = exclude.into_iter().collect();
        let (path_rows, _) = self.path_rows(
            finder,
            &[PairQuery {
                head,
                tail,
                exclude: ex.clone(),
            }],
        );
        let batch = Batch {
            pairs: vec![(head, tail)],
            exclude: ex,
            path_rows,
        };
        let mut tape = Tape::new(&self.params);
        let logits = self.forward(&mut tape, graph, &batch, rng)?;
        Ok(tape.value(logits).data().to_vec())
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.config.encoder.mechanisms
    }
}

/// Independent stream `stream` of the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
