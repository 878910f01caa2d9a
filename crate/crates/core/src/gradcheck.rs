//! Reverse-mode gradients of the full model against central differences.

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{stream_rng, Batch, Model};
use crate::params::ParameterStore;
use crate::tape::Tape;

/// Worst disagreement found by [`check_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero gradients
/// from turning round-off into huge ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn loss(
    model: &Model,
    params: &ParameterStore,
    graph: &KnowledgeGraph,
    batch: &Batch,
    targets: &[usize],
    seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new(params);
    let mut rng = stream_rng(seed, 0);
    let logits = model.forward(&mut tape, graph, batch, &mut rng)?;
    let l = tape.cross_entropy(logits, targets)?;
    Ok(tape.value(l).data()[0])
}

/// Compares every parameter entry's gradient of the batch cross-entropy with
/// `(L(θ+h) - L(θ-h)) / 2h`. The same rng stream is replayed for every
/// evaluation so random admissions stay fixed.
pub fn check_model(
    model: &Model,
    graph: &KnowledgeGraph,
    batch: &Batch,
    targets: &[usize],
    seed: u64,
    step: f64,
) -> Result<GradReport> {
    let grads = {
        let mut tape = Tape::new(&model.params);
        let mut rng = stream_rng(seed, 0);
        let logits = model.forward(&mut tape, graph, batch, &mut rng)?;
        let l = tape.cross_entropy(logits, targets)?;
        tape.backward(l)?
    };
    let mut params = model.params.clone();
    let mut report = GradReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = model
        .params
        .iter()
        .map(|(id, p)| (id, p.name.clone()))
        .collect();
    for (id, name) in ids {
        let n = params.value(id).len();
        for k in 0..n {
            let orig = params.value(id).data()[k];
            params.get_mut(id).value.data_mut()[k] = orig + step;
            let up = loss(model, &params, graph, batch, targets, seed)?;
            params.get_mut(id).value.data_mut()[k] = orig - step;
            let down = loss(model, &params, graph, batch, targets, seed)?;
            params.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            if !numeric.is_finite() {
                return Err(Error::NonFinite("finite difference"));
            }
            let err = relative_error(analytic, numeric, 1e-6);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}
