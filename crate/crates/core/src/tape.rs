//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its output; nodes only reference earlier
//! nodes, so the tape order is a topological order and `backward` walks it
//! once in reverse. Parameters are read in place from a borrowed
//! [`ParameterStore`]; their gradients come back as a [`Gradients`] map.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::context_index::{EdgeContexts, LseBuffer};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{axpy, dot, gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Endpoints of the edges a cross-aggregation runs over.
#[derive(Clone, Debug)]
pub struct EdgeEndpoints {
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
}

impl EdgeEndpoints {
    /// Edge ids grouped by head: group `h` is `order[offsets[h]..offsets[h + 1]]`.
    fn by_head(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut offsets = vec![0; n + 1];
        for &h in &self.heads {
            offsets[h + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut next = offsets.clone();
        let mut order = vec![0; self.heads.len()];
        for (e, &h) in self.heads.iter().enumerate() {
            order[next[h]] = e;
            next[h] += 1;
        }
        (offsets, order)
    }
}

/// Which edge each attention entry belongs to, plus the adjacency contexts.
#[derive(Clone, Debug)]
pub struct ContextLayout {
    pub contexts: Arc<EdgeContexts>,
    pub entry_edge: Vec<usize>,
    entries_of_edge: Vec<Vec<usize>>,
}

impl ContextLayout {
    pub fn new(contexts: Arc<EdgeContexts>, entry_edge: Vec<usize>) -> Self {
        let mut entries_of_edge = vec![Vec::new(); contexts.num_edges()];
        for (j, &e) in entry_edge.iter().enumerate() {
            entries_of_edge[e].push(j);
        }
        Self {
            contexts,
            entry_edge,
            entries_of_edge,
        }
    }
}

/// Sparse rows `(column, value)` used as a constant left operand.
pub type SparseRows = Vec<Vec<(u32, f64)>>;

/// Running tally of attention-weight normalisation checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionAudit {
    pub vectors: usize,
    pub violations: usize,
    pub max_deviation: f64,
}

impl AttentionAudit {
    fn record(&mut self, sum: f64) {
        let dev = (sum - 1.0).abs();
        self.vectors += 1;
        if dev > 1e-9 {
            self.violations += 1;
        }
        if dev > self.max_deviation {
            self.max_deviation = dev;
        }
    }

    pub fn merge(&mut self, other: &AttentionAudit) {
        self.vectors += other.vectors;
        self.violations += other.violations;
        self.max_deviation = self.max_deviation.max(other.max_deviation);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Arc<Vec<f64>>),
    Act(Var, Activation),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumRows(Var),
    MeanRows(Var),
    Outer(Var, Var),
    Reshape(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    SegmentSum {
        src: Var,
        segments: Arc<Vec<Vec<usize>>>,
    },
    RowDot(Var, Var),
    CrossAggregate {
        messages: Var,
        weight: Var,
        edges: Arc<EdgeEndpoints>,
        pair_maps: Tensor,
    },
    StackAttention {
        scores: Vec<Var>,
        values: Vec<Var>,
        weights: Vec<f64>,
    },
    ContextAttention {
        scores: Var,
        values: Var,
        layout: Arc<ContextLayout>,
        lse: Vec<f64>,
    },
    SparseMatMul {
        rows: Arc<SparseRows>,
        weight: Var,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
    audit: Option<AttentionAudit>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Adds these gradients into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParameterStore) {
        for (id, g) in &self.by_param {
            store.accumulate(*id, g);
        }
    }

    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.by_param {
            match self.by_param.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.by_param.insert(id, g);
                }
            }
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
            audit: None,
        }
    }

    /// Enables per-vector checks that attention weights sum to one.
    pub fn with_audit(mut self) -> Self {
        self.audit = Some(AttentionAudit::default());
        self
    }

    pub fn audit(&self) -> Option<&AttentionAudit> {
        self.audit.as_ref()
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id),
            _ => node.value.as_ref().expect("node value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims2() != y.dims2() {
            return Err(shape_err(
                "add",
                format!("{:?} + {:?}", x.shape(), y.shape()),
            ));
        }
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        let (n, c) = x.dims2();
        if b.len() != c {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", x.shape(), b.shape()),
            ));
        }
        let mut out = x.clone();
        for i in 0..n {
            for (o, bb) in out.row_mut(i).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let mut out = self.value(a).clone();
        let (n, _) = out.dims2();
        if factors.len() != n {
            return Err(shape_err(
                "scale_rows",
                format!("{} factors for {n} rows", factors.len()),
            ));
        }
        for i in 0..n {
            out.row_mut(i).iter_mut().for_each(|v| *v *= factors[i]);
        }
        self.push(out, Op::ScaleRows(a, factors), "scale_rows")
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let mut out = self.value(a).clone();
        match act {
            Activation::Relu => out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => out
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        }
        self.push(out, Op::Act(a, act), "activation")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat", "row counts differ".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(src.row(i));
            }
            off += w;
        }
        self.push(
            Tensor::matrix(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            "concat",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat", "column counts differ".into()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            "concat",
        )
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims2();
        let mut out = vec![0.0; c];
        for i in 0..n {
            axpy(1.0, x.row(i), &mut out);
        }
        self.push(Tensor::matrix(1, c, out)?, Op::SumRows(a), "sum_rows")
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims2();
        if n == 0 {
            return Err(shape_err("mean_rows", "empty input".into()));
        }
        let mut out = vec![0.0; c];
        for i in 0..n {
            axpy(1.0, x.row(i), &mut out);
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        self.push(Tensor::matrix(1, c, out)?, Op::MeanRows(a), "mean_rows")
    }

    /// `u vᵀ` for two vectors.
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.value(u), self.value(v));
        let (m, n) = (a.len(), b.len());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = a.data()[i] * b.data()[j];
            }
        }
        self.push(Tensor::matrix(m, n, out)?, Op::Outer(u, v), "outer")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, vec![n])
    }

    /// Row-wise max-shifted softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (n, c) = x.dims2();
        if c == 0 {
            return Err(shape_err("softmax", "empty input".into()));
        }
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            out.extend(crate::tensor::softmax_slice(x.row(i)));
        }
        let shape = x.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(a), "softmax")
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (n, c) = x.dims2();
        if c == 0 || n == 0 {
            return Err(shape_err("cross_entropy", "empty input".into()));
        }
        if targets.len() != n || targets.iter().any(|&t| t >= c) {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {}x{} logits", targets.len(), n, c),
            ));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let lse = crate::tensor::log_sum_exp(row);
            loss += lse - row[targets[i]];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let probs = Tensor::matrix(n, c, probs)?;
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(src);
        let (n, c) = x.dims2();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(shape_err("gather_rows", format!("row {i} of {n}")));
            }
            out.extend_from_slice(x.row(i));
        }
        self.push(
            Tensor::matrix(index.len(), c, out)?,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            "gather_rows",
        )
    }

    /// `out[i] = Σ_{j ∈ segments[i]} src[j]`; an empty segment gives a zero row.
    pub fn segment_sum(&mut self, src: Var, segments: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let x = self.value(src);
        let (n, c) = x.dims2();
        let mut out = vec![0.0; segments.len() * c];
        for (i, seg) in segments.iter().enumerate() {
            let o = &mut out[i * c..(i + 1) * c];
            for &j in seg {
                if j >= n {
                    return Err(shape_err("segment_sum", format!("row {j} of {n}")));
                }
                axpy(1.0, x.row(j), o);
            }
        }
        self.push(
            Tensor::matrix(segments.len(), c, out)?,
            Op::SegmentSum { src, segments },
            "segment_sum",
        )
    }

    /// Row-wise dot product of two equally shaped matrices, as a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims2() != y.dims2() {
            return Err(shape_err(
                "row_dot",
                format!("{:?} . {:?}", x.shape(), y.shape()),
            ));
        }
        let n = x.rows();
        let out = (0..n).map(|i| dot(x.row(i), y.row(i))).collect();
        self.push(Tensor::matrix(n, 1, out)?, Op::RowDot(a, b), "row_dot")
    }

    /// Per edge `e = (h, t)`: `flatten(m_h m_tᵀ) · W` with `W` of shape `D²×D`.
    ///
    /// Evaluated as `m_t · P_h` where `P_h = reshape(m_h · W', D×D)` is shared
    /// by all edges leaving `h`.
    pub fn cross_aggregate(
        &mut self,
        messages: Var,
        weight: Var,
        edges: Arc<EdgeEndpoints>,
    ) -> Result<Var> {
        let m = self.value(messages);
        let w = self.value(weight);
        let (n, d) = m.dims2();
        if w.dims2() != (d * d, d) {
            return Err(shape_err(
                "cross_aggregate",
                format!("weight {:?} for width {d}", w.shape()),
            ));
        }
        if edges.heads.len() != edges.tails.len()
            || edges.heads.iter().chain(&edges.tails).any(|&e| e >= n)
        {
            return Err(shape_err(
                "cross_aggregate",
                "edge endpoints out of range".into(),
            ));
        }
        // W (D²×D) read as D×D² is exactly the per-entity map layout.
        let mut maps = vec![0.0; n * d * d];
        gemm(
            n,
            d,
            d * d,
            1.0,
            m.data(),
            false,
            w.data(),
            false,
            0.0,
            &mut maps,
        );
        let ne = edges.heads.len();
        let mut out = vec![0.0; ne * d];
        let (offsets, order) = edges.by_head(n);
        let (mut tails, mut y) = (Vec::new(), Vec::new());
        for h in 0..n {
            let ids = &order[offsets[h]..offsets[h + 1]];
            if ids.is_empty() {
                continue;
            }
            let k = ids.len();
            tails.clear();
            for &e in ids {
                tails.extend_from_slice(m.row(edges.tails[e]));
            }
            y.resize(k * d, 0.0);
            gemm(
                k,
                d,
                d,
                1.0,
                &tails,
                false,
                &maps[h * d * d..(h + 1) * d * d],
                false,
                0.0,
                &mut y,
            );
            for (i, &e) in ids.iter().enumerate() {
                out[e * d..(e + 1) * d].copy_from_slice(&y[i * d..(i + 1) * d]);
            }
        }
        let pair_maps = Tensor::matrix(n, d * d, maps)?;
        self.push(
            Tensor::matrix(ne, d, out)?,
            Op::CrossAggregate {
                messages,
                weight,
                edges,
                pair_maps,
            },
            "cross_aggregate",
        )
    }

    /// Per row `r`: softmax over `scores[i][r]` across the stack, then the
    /// weighted sum of `values[i][r]`.
    pub fn stack_attention(&mut self, scores: &[Var], values: &[Var]) -> Result<Var> {
        let k = scores.len();
        if k == 0 || values.len() != k {
            return Err(shape_err("stack_attention", "mismatched stacks".into()));
        }
        let (n, d) = self.value(values[0]).dims2();
        for i in 0..k {
            if self.value(scores[i]).dims2() != (n, 1) || self.value(values[i]).dims2() != (n, d) {
                return Err(shape_err("stack_attention", format!("layer {i}")));
            }
        }
        let mut weights = vec![0.0; n * k];
        let mut out = vec![0.0; n * d];
        let mut audit = self.audit.take();
        for r in 0..n {
            let s: Vec<f64> = (0..k).map(|i| self.value(scores[i]).data()[r]).collect();
            let a = crate::tensor::softmax_slice(&s);
            if let Some(au) = audit.as_mut() {
                au.record(a.iter().sum());
            }
            for i in 0..k {
                axpy(
                    a[i],
                    self.value(values[i]).row(r),
                    &mut out[r * d..(r + 1) * d],
                );
            }
            weights[r * k..(r + 1) * k].copy_from_slice(&a);
        }
        self.audit = audit;
        self.push(
            Tensor::matrix(n, d, out)?,
            Op::StackAttention {
                scores: scores.to_vec(),
                values: values.to_vec(),
                weights,
            },
            "stack_attention",
        )
    }

    /// For every edge `r`: softmax of the entry scores over all entries whose
    /// edge shares an endpoint with `r` (excluding `r`), then the weighted sum
    /// of their values. Edges with an empty context produce a zero row.
    pub fn context_attention(
        &mut self,
        scores: Var,
        values: Var,
        layout: Arc<ContextLayout>,
    ) -> Result<Var> {
        let mut audit = self.audit.take();
        let (a, v) = (self.value(scores), self.value(values));
        let nent = layout.entry_edge.len();
        let (nv, d) = v.dims2();
        if a.dims2() != (nent, 1) || nv != nent {
            return Err(shape_err(
                "context_attention",
                format!(
                    "{nent} entries, scores {:?}, values {:?}",
                    a.shape(),
                    v.shape()
                ),
            ));
        }
        let ne = layout.contexts.num_edges();
        let mut items = LseBuffer::empty(ne, d + 1);
        let mut x = vec![0.0; d + 1];
        x[0] = 1.0;
        for (j, &e) in layout.entry_edge.iter().enumerate() {
            x[1..].copy_from_slice(v.row(j));
            items.push(e, a.data()[j], &x);
        }
        let folded = layout.contexts.fold(&items);
        let mut out = vec![0.0; ne * d];
        let mut lse = vec![f64::NEG_INFINITY; ne];
        for r in 0..ne {
            let acc = folded.acc(r);
            if folded.max[r] == f64::NEG_INFINITY || acc[0] <= 0.0 {
                continue;
            }
            lse[r] = folded.max[r] + acc[0].ln();
            let o = &mut out[r * d..(r + 1) * d];
            for (oo, aa) in o.iter_mut().zip(&acc[1..]) {
                *oo = aa / acc[0];
            }
        }
        if let Some(au) = audit.as_mut() {
            for r in 0..ne {
                if lse[r] == f64::NEG_INFINITY {
                    continue;
                }
                let mut sum = 0.0;
                for q in layout.contexts.context_of(r) {
                    for &j in &layout.entries_of_edge[q] {
                        sum += (a.data()[j] - lse[r]).exp();
                    }
                }
                au.record(sum);
            }
        }
        self.audit = audit;
        self.push(
            Tensor::matrix(ne, d, out)?,
            Op::ContextAttention {
                scores,
                values,
                layout,
                lse,
            },
            "context_attention",
        )
    }

    /// `rows · W` where `rows` is a constant sparse matrix.
    pub fn sparse_matmul(&mut self, rows: Arc<SparseRows>, weight: Var) -> Result<Var> {
        let w = self.value(weight);
        let (nr, c) = w.dims2();
        let mut out = vec![0.0; rows.len() * c];
        for (i, row) in rows.iter().enumerate() {
            let o = &mut out[i * c..(i + 1) * c];
            for &(j, val) in row {
                if j as usize >= nr {
                    return Err(shape_err("sparse_matmul", format!("column {j} of {nr}")));
                }
                axpy(val, w.row(j as usize), o);
            }
        }
        self.push(
            Tensor::matrix(rows.len(), c, out)?,
            Op::SparseMatMul { rows, weight },
            "sparse_matmul",
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() || self.value(loss).len() != 1 {
            return Err(Error::UntracedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(self.value(loss).shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    out.by_param.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (m, k) = x.dims2();
                    let n = y.cols();
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g.data(), false, y.data(), true, 0.0, &mut ga);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, x.data(), true, g.data(), false, 0.0, &mut gb);
                    add_grad(&mut grads, *a, x.shape(), ga);
                    add_grad(&mut grads, *b, y.shape(), gb);
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    add_grad(&mut grads, *a, self.value(*a).shape(), gt.into_data());
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, self.value(*a).shape(), g.data().to_vec());
                    add_grad(&mut grads, *b, self.value(*b).shape(), g.into_data());
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    for r in 0..g.rows() {
                        axpy(1.0, g.row(r), &mut gr);
                    }
                    add_grad(&mut grads, *row, self.value(*row).shape(), gr);
                    add_grad(&mut grads, *a, self.value(*a).shape(), g.into_data());
                }
                Op::Scale(a, s) => {
                    let ga = g.data().iter().map(|v| v * s).collect();
                    add_grad(&mut grads, *a, self.value(*a).shape(), ga);
                }
                Op::ScaleRows(a, factors) => {
                    let mut ga = g;
                    for (i, f) in factors.iter().enumerate() {
                        ga.row_mut(i).iter_mut().for_each(|v| *v *= f);
                    }
                    add_grad(&mut grads, *a, self.value(*a).shape(), ga.into_data());
                }
                Op::Act(a, act) => {
                    let y = node.value.as_ref().unwrap();
                    let ga = match act {
                        Activation::Relu => g
                            .data()
                            .iter()
                            .zip(y.data())
                            .map(|(gg, yy)| if *yy > 0.0 { *gg } else { 0.0 })
                            .collect(),
                        Activation::Sigmoid => g
                            .data()
                            .iter()
                            .zip(y.data())
                            .map(|(gg, yy)| gg * yy * (1.0 - yy))
                            .collect(),
                    };
                    add_grad(&mut grads, *a, self.value(*a).shape(), ga);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2();
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        add_grad(&mut grads, p, self.value(p).shape(), gp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_grad(
                            &mut grads,
                            p,
                            self.value(p).shape(),
                            g.data()[off..off + n].to_vec(),
                        );
                        off += n;
                    }
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let (n, c) = x.dims2();
                    let s = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / n as f64
                    } else {
                        1.0
                    };
                    let mut ga = vec![0.0; n * c];
                    for r in 0..n {
                        axpy(s, g.data(), &mut ga[r * c..(r + 1) * c]);
                    }
                    add_grad(&mut grads, *a, x.shape(), ga);
                }
                Op::Outer(u, v) => {
                    let (a, b) = (self.value(*u), self.value(*v));
                    let (m, n) = (a.len(), b.len());
                    let mut gu = vec![0.0; m];
                    let mut gv = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g.data()[i * n + j];
                            gu[i] += gg * b.data()[j];
                            gv[j] += gg * a.data()[i];
                        }
                    }
                    add_grad(&mut grads, *u, a.shape(), gu);
                    add_grad(&mut grads, *v, b.shape(), gv);
                }
                Op::Reshape(a) => {
                    add_grad(&mut grads, *a, self.value(*a).shape(), g.into_data());
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let (n, c) = y.dims2();
                    let mut ga = vec![0.0; n * c];
                    for r in 0..n {
                        let (yr, gr) = (y.row(r), &g.data()[r * c..(r + 1) * c]);
                        let s = dot(yr, gr);
                        for k in 0..c {
                            ga[r * c + k] = yr[k] * (gr[k] - s);
                        }
                    }
                    add_grad(&mut grads, *a, self.value(*a).shape(), ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (n, c) = probs.dims2();
                    let s = g.data()[0] / n as f64;
                    let mut ga: Vec<f64> = probs.data().iter().map(|p| p * s).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        ga[r * c + t] -= s;
                    }
                    add_grad(&mut grads, *logits, self.value(*logits).shape(), ga);
                }
                Op::GatherRows { src, index } => {
                    let x = self.value(*src);
                    let (n, c) = x.dims2();
                    let mut ga = vec![0.0; n * c];
                    for (k, &r) in index.iter().enumerate() {
                        axpy(1.0, g.row(k), &mut ga[r * c..(r + 1) * c]);
                    }
                    add_grad(&mut grads, *src, x.shape(), ga);
                }
                Op::SegmentSum { src, segments } => {
                    let x = self.value(*src);
                    let (n, c) = x.dims2();
                    let mut ga = vec![0.0; n * c];
                    for (k, seg) in segments.iter().enumerate() {
                        for &j in seg {
                            axpy(1.0, g.row(k), &mut ga[j * c..(j + 1) * c]);
                        }
                    }
                    add_grad(&mut grads, *src, x.shape(), ga);
                }
                Op::RowDot(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (n, c) = x.dims2();
                    let mut gx = vec![0.0; n * c];
                    let mut gy = vec![0.0; n * c];
                    for r in 0..n {
                        let gg = g.data()[r];
                        axpy(gg, y.row(r), &mut gx[r * c..(r + 1) * c]);
                        axpy(gg, x.row(r), &mut gy[r * c..(r + 1) * c]);
                    }
                    add_grad(&mut grads, *a, x.shape(), gx);
                    add_grad(&mut grads, *b, y.shape(), gy);
                }
                Op::CrossAggregate {
                    messages,
                    weight,
                    edges,
                    pair_maps,
                } => {
                    let m = self.value(*messages);
                    let w = self.value(*weight);
                    let (n, d) = m.dims2();
                    let dd = d * d;
                    let maps = pair_maps.data();
                    let mut g_maps = vec![0.0; n * dd];
                    let mut gm = vec![0.0; n * d];
                    let (offsets, order) = edges.by_head(n);
                    let (mut tails, mut ge, mut y) = (Vec::new(), Vec::new(), Vec::new());
                    for h in 0..n {
                        let ids = &order[offsets[h]..offsets[h + 1]];
                        if ids.is_empty() {
                            continue;
                        }
                        let k = ids.len();
                        tails.clear();
                        ge.clear();
                        for &e in ids {
                            tails.extend_from_slice(m.row(edges.tails[e]));
                            ge.extend_from_slice(g.row(e));
                        }
                        let p = &maps[h * dd..(h + 1) * dd];
                        let gp = &mut g_maps[h * dd..(h + 1) * dd];
                        gemm(d, k, d, 1.0, &tails, true, &ge, false, 1.0, gp);
                        y.resize(k * d, 0.0);
                        gemm(k, d, d, 1.0, &ge, false, p, true, 0.0, &mut y);
                        for (i, &e) in ids.iter().enumerate() {
                            let t = edges.tails[e];
                            axpy(1.0, &y[i * d..(i + 1) * d], &mut gm[t * d..(t + 1) * d]);
                        }
                    }
                    // maps = M · W  (N×D · D×D²)
                    gemm(n, dd, d, 1.0, &g_maps, false, w.data(), true, 1.0, &mut gm);
                    let mut gw = vec![0.0; dd * d];
                    gemm(d, n, dd, 1.0, m.data(), true, &g_maps, false, 0.0, &mut gw);
                    add_grad(&mut grads, *messages, m.shape(), gm);
                    add_grad(&mut grads, *weight, w.shape(), gw);
                }
                Op::StackAttention {
                    scores,
                    values,
                    weights,
                } => {
                    let k = scores.len();
                    let out = node.value.as_ref().unwrap();
                    let (n, d) = out.dims2();
                    let mut gs = vec![vec![0.0; n]; k];
                    let mut gv = vec![vec![0.0; n * d]; k];
                    for r in 0..n {
                        let gr = g.row(r);
                        let og = dot(out.row(r), gr);
                        for i in 0..k {
                            let a = weights[r * k + i];
                            let vr = self.value(values[i]).row(r);
                            gs[i][r] = a * (dot(vr, gr) - og);
                            axpy(a, gr, &mut gv[i][r * d..(r + 1) * d]);
                        }
                    }
                    for i in 0..k {
                        let s = std::mem::take(&mut gs[i]);
                        add_grad(&mut grads, scores[i], self.value(scores[i]).shape(), s);
                        let v = std::mem::take(&mut gv[i]);
                        add_grad(&mut grads, values[i], self.value(values[i]).shape(), v);
                    }
                }
                Op::ContextAttention {
                    scores,
                    values,
                    layout,
                    lse,
                } => {
                    let out = node.value.as_ref().unwrap();
                    let (a, v) = (self.value(*scores), self.value(*values));
                    let (ne, d) = out.dims2();
                    let mut items = LseBuffer::empty(ne, d + 1);
                    let mut x = vec![0.0; d + 1];
                    for r in 0..ne {
                        if lse[r] == f64::NEG_INFINITY {
                            continue;
                        }
                        let gr = g.row(r);
                        x[0] = dot(out.row(r), gr);
                        x[1..].copy_from_slice(gr);
                        items.push(r, -lse[r], &x);
                    }
                    let folded = layout.contexts.fold(&items);
                    let nent = layout.entry_edge.len();
                    let mut ga = vec![0.0; nent];
                    let mut gv = vec![0.0; nent * d];
                    for (j, &q) in layout.entry_edge.iter().enumerate() {
                        if folded.max[q] == f64::NEG_INFINITY {
                            continue;
                        }
                        let f = (a.data()[j] + folded.max[q]).exp();
                        let y = folded.acc(q);
                        axpy(f, &y[1..], &mut gv[j * d..(j + 1) * d]);
                        ga[j] = f * (dot(v.row(j), &y[1..]) - y[0]);
                    }
                    add_grad(&mut grads, *scores, a.shape(), ga);
                    add_grad(&mut grads, *values, v.shape(), gv);
                }
                Op::SparseMatMul { rows, weight } => {
                    let w = self.value(*weight);
                    let (nr, c) = w.dims2();
                    let mut gw = vec![0.0; nr * c];
                    for (i, row) in rows.iter().enumerate() {
                        for &(j, val) in row {
                            let j = j as usize;
                            axpy(val, g.row(i), &mut gw[j * c..(j + 1) * c]);
                        }
                    }
                    add_grad(&mut grads, *weight, w.shape(), gw);
                }
            }
        }
        Ok(out)
    }
}

fn add_grad(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
        let mut s = ParameterStore::new();
        for (n, t) in entries {
            s.insert(n, t.clone()).unwrap();
        }
        s
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` with respect to every entry of parameter `name`.
    fn numeric_grad(store: &ParameterStore, name: &str, f: &dyn Fn(&mut Tape) -> Var) -> Vec<f64> {
        let id = store.id(name).unwrap();
        let n = store.value(id).len();
        let h = 1e-5;
        (0..n)
            .map(|k| {
                let mut s = store.clone();
                s.get_mut(id).value.data_mut()[k] += h;
                let mut t = Tape::new(&s);
                let v = f(&mut t);
                let up = t.value(v).data()[0];
                s.get_mut(id).value.data_mut()[k] -= 2.0 * h;
                let mut t = Tape::new(&s);
                let v = f(&mut t);
                let down = t.value(v).data()[0];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn check_grads(store: &ParameterStore, f: &dyn Fn(&mut Tape) -> Var) {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape);
        let grads = tape.backward(loss).unwrap();
        for (id, p) in store.iter() {
            let num = numeric_grad(store, &p.name, f);
            let zero = Tensor::zeros(p.value.shape());
            let ana = grads.get(id).unwrap_or(&zero);
            for (a, b) in ana.data().iter().zip(&num) {
                let err = (a - b).abs() / (1e-6 + a.abs().max(b.abs()));
                assert!(err < 1e-5 || (a - b).abs() < 1e-8, "{}: {a} vs {b}", p.name);
            }
        }
    }

    #[test]
    fn outer_and_flatten() {
        let s = ParameterStore::new();
        let mut t = Tape::new(&s);
        let u = t.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
        let v = t.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        let o = t.outer(u, v).unwrap();
        assert_eq!(t.value(o).data(), &[0.0, 1.0, 0.0, 0.0]);
        let f = t.flatten(o).unwrap();
        assert_eq!(t.value(f).shape(), &[4]);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_n() {
        let s = ParameterStore::new();
        let mut t = Tape::new(&s);
        let x = t
            .constant(Tensor::matrix(1, 5, vec![0.3; 5]).unwrap())
            .unwrap();
        for target in 0..5 {
            let l = t.cross_entropy(x, &[target]).unwrap();
            assert!((t.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);
        }
        assert!(t.cross_entropy(x, &[5]).is_err());
    }

    #[test]
    fn linear_gradient_is_broadcast_input() {
        // loss = sum(x · W) -> dW[i][j] = x[i]
        let w = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let s = store_with(&[("w", w)]);
        let mut t = Tape::new(&s);
        let x = t
            .constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let wv = t.param_by_name("w").unwrap();
        let y = t.matmul(x, wv).unwrap();
        let l = t.sum_rows(y).unwrap();
        let l = t.transpose(l).unwrap();
        let l = t.sum_rows(l).unwrap();
        let g = t.backward(l).unwrap();
        let gw = g.get(s.id("w").unwrap()).unwrap();
        assert_eq!(gw.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn constant_loss_has_no_parameter_gradient() {
        let s = store_with(&[("w", Tensor::scalar(1.0))]);
        let mut t = Tape::new(&s);
        let _ = t.param_by_name("w").unwrap();
        let c = t.constant(Tensor::scalar(4.0)).unwrap();
        let g = t.backward(c).unwrap();
        assert!(g.get(s.id("w").unwrap()).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let s = ParameterStore::new();
        let mut t = Tape::new(&s);
        let c = t.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(c), Err(Error::UntracedLoss)));
    }

    #[test]
    fn non_finite_is_an_error() {
        let s = ParameterStore::new();
        let mut t = Tape::new(&s);
        assert!(t.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn elementwise_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = store_with(&[
            ("a", rand_tensor(&mut rng, 3, 4)),
            ("b", rand_tensor(&mut rng, 3, 4)),
            ("bias", rand_tensor(&mut rng, 1, 4)),
            ("u", rand_tensor(&mut rng, 1, 3)),
        ]);
        let f = |t: &mut Tape| {
            let a = t.param_by_name("a").unwrap();
            let b = t.param_by_name("b").unwrap();
            let bias = t.param_by_name("bias").unwrap();
            let u = t.param_by_name("u").unwrap();
            let x = t.add(a, b).unwrap();
            let x = t.add_row(x, bias).unwrap();
            let x = t.scale(x, 1.7).unwrap();
            let y = t.sigmoid(x).unwrap();
            let z = t.relu(a).unwrap();
            let c = t.concat_cols(&[y, z]).unwrap();
            let c = t.concat_rows(&[c, c]).unwrap();
            let m = t.mean_rows(c).unwrap();
            let sm = t.softmax(m).unwrap();
            let o = t.outer(u, u).unwrap();
            let of = t.flatten(o).unwrap();
            let of = t.reshape(of, vec![1, 9]).unwrap();
            let rd = t.row_dot(a, b).unwrap();
            let rd = t.transpose(rd).unwrap();
            let all = t.concat_cols(&[sm, of, rd]).unwrap();
            t.cross_entropy(all, &[2]).unwrap()
        };
        check_grads(&s, &f);
    }

    #[test]
    fn structured_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 3;
        let s = store_with(&[
            ("m", rand_tensor(&mut rng, 4, d)),
            ("w1", rand_tensor(&mut rng, d * d, d)),
            ("sp", rand_tensor(&mut rng, 5, 2)),
        ]);
        let edges = Arc::new(EdgeEndpoints {
            heads: vec![0, 1, 2, 3, 3],
            tails: vec![1, 2, 2, 0, 3],
        });
        let segs = Arc::new(vec![vec![0, 3], vec![0, 1], vec![1, 2, 2], vec![3, 4, 4]]);
        let sparse = Arc::new(vec![vec![(0u32, 2.0), (3, 1.0)], vec![], vec![(4, 0.5)]]);
        let f = move |t: &mut Tape| {
            let m = t.param_by_name("m").unwrap();
            let w1 = t.param_by_name("w1").unwrap();
            let x = t.cross_aggregate(m, w1, edges.clone()).unwrap();
            let y = t.segment_sum(x, segs.clone()).unwrap();
            let y = t.scale_rows(y, Arc::new(vec![0.5, 1.0, 0.0, 2.0])).unwrap();
            let y = t.gather_rows(y, &[3, 0, 0]).unwrap();
            let sp = t.param_by_name("sp").unwrap();
            let z = t.sparse_matmul(sparse.clone(), sp).unwrap();
            let all = t.concat_cols(&[y, z]).unwrap();
            t.cross_entropy(all, &[0, 4, 2]).unwrap()
        };
        check_grads(&s, &f);
    }

    #[test]
    fn cross_aggregate_matches_explicit_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 4;
        let m = rand_tensor(&mut rng, 3, d);
        let w = rand_tensor(&mut rng, d * d, d);
        let s = store_with(&[("m", m.clone()), ("w", w.clone())]);
        let mut t = Tape::new(&s);
        let mv = t.param_by_name("m").unwrap();
        let wv = t.param_by_name("w").unwrap();
        let edges = Arc::new(EdgeEndpoints {
            heads: vec![0, 2],
            tails: vec![1, 2],
        });
        let x = t.cross_aggregate(mv, wv, edges).unwrap();
        for (e, (h, tl)) in [(0usize, 1usize), (2, 2)].iter().enumerate() {
            let mut flat = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    flat[i * d + j] = m.row(*h)[i] * m.row(*tl)[j];
                }
            }
            for c in 0..d {
                let want: f64 = (0..d * d).map(|k| flat[k] * w.data()[k * d + c]).sum();
                assert!((t.value(x).row(e)[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 2;
        // 5 edges over 4 entities, with a parallel pair and a self-loop
        let endpoints = [(0usize, 1usize), (1, 2), (1, 2), (2, 2), (3, 0)];
        let contexts = Arc::new(EdgeContexts::new(4, &endpoints));
        let layout = Arc::new(ContextLayout::new(contexts, vec![0, 1, 1, 2, 3, 4, 4, 0]));
        let s = store_with(&[
            ("sc", rand_tensor(&mut rng, 8, 1)),
            ("val", rand_tensor(&mut rng, 8, d)),
            ("s0", rand_tensor(&mut rng, 5, 1)),
            ("s1", rand_tensor(&mut rng, 5, 1)),
            ("v0", rand_tensor(&mut rng, 5, d)),
            ("v1", rand_tensor(&mut rng, 5, d)),
        ]);
        let f = move |t: &mut Tape| {
            let sc = t.param_by_name("sc").unwrap();
            let val = t.param_by_name("val").unwrap();
            let ctx = t.context_attention(sc, val, layout.clone()).unwrap();
            let s0 = t.param_by_name("s0").unwrap();
            let s1 = t.param_by_name("s1").unwrap();
            let v0 = t.param_by_name("v0").unwrap();
            let v1 = t.param_by_name("v1").unwrap();
            let st = t.stack_attention(&[s0, s1], &[v0, v1]).unwrap();
            let all = t.concat_cols(&[ctx, st]).unwrap();
            t.cross_entropy(all, &[0, 1, 2, 3, 1]).unwrap()
        };
        check_grads(&s, &f);
    }

    #[test]
    fn context_attention_matches_explicit_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let endpoints = [(0usize, 1usize), (1, 2), (2, 0), (2, 3), (3, 3)];
        let contexts = Arc::new(EdgeContexts::new(4, &endpoints));
        let entry_edge = vec![0, 1, 2, 3, 4, 2];
        let layout = Arc::new(ContextLayout::new(contexts.clone(), entry_edge.clone()));
        let sc = rand_tensor(&mut rng, 6, 1);
        let val = rand_tensor(&mut rng, 6, 3);
        let s = ParameterStore::new();
        let mut t = Tape::new(&s).with_audit();
        let a = t.constant(sc.clone()).unwrap();
        let v = t.constant(val.clone()).unwrap();
        let out = t.context_attention(a, v, layout).unwrap();
        for r in 0..5 {
            let ctx = contexts.context_of(r);
            let js: Vec<usize> = (0..6).filter(|j| ctx.contains(&entry_edge[*j])).collect();
            let w =
                crate::tensor::softmax_slice(&js.iter().map(|&j| sc.data()[j]).collect::<Vec<_>>());
            for c in 0..3 {
                let want: f64 = js.iter().zip(&w).map(|(&j, a)| a * val.row(j)[c]).sum();
                assert!((t.value(out).row(r)[c] - want).abs() < 1e-12);
            }
        }
        let audit = t.audit().unwrap();
        assert_eq!(audit.violations, 0);
        assert_eq!(audit.vectors, 5);
    }
}
